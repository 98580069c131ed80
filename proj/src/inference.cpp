#include "hcthmm/inference.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace hcthmm {

namespace {

// Transition entries are floored here before entering the likelihood.
constexpr double kTransitionFloor = 1e-300;

// Emission quantities for every observation of one subject.
//   scaled(k, m) = g_m(Y_k) / exp(shift(k)), shift(k) = max_m log g_m(Y_k)
struct EmissionTable {
    Matrix scaled;
    Vector shift;
    Vector d_delta;   // d log g_0 / d logit delta
    Matrix d_lambda;  // d log g_m / d log lambda_m
};

EmissionTable tabulate_emissions(const SubjectSeries& series, const EmissionCoeffs& coeffs, bool partials) {
    const auto k_len = static_cast<Eigen::Index>(series.size());
    const int m = coeffs.states();
    EmissionTable t;
    t.scaled.resize(k_len, m);
    t.shift.resize(k_len);
    if (partials) {
        t.d_delta.resize(k_len);
        t.d_lambda.resize(k_len, m);
    }
    Vector log_g(m);
    EmissionRow row;
    for (Eigen::Index k = 0; k < k_len; ++k) {
        if (k == 0 || series.covariates.row(k) != series.covariates.row(k - 1)) {
            row = emission_row(coeffs, series.covariates.row(k).transpose());
        }
        const std::int64_t y = series.counts[static_cast<std::size_t>(k)];
        const double lf = log_factorial(y);
        for (int s = 0; s < m; ++s) {
            const EmissionTerms e = emission_terms(y, row, s, lf);
            log_g(s) = e.log_prob;
            if (partials) {
                if (s == 0) t.d_delta(k) = e.d_delta_eta;
                t.d_lambda(k, s) = e.d_lambda_eta;
            }
        }
        const double top = log_g.maxCoeff();
        if (!std::isfinite(top)) {
            throw LikelihoodError("subject " + series.subject_id + ": emission probability is zero in every state at index " +
                                      std::to_string(k),
                                  static_cast<std::size_t>(k));
        }
        t.shift(k) = top;
        t.scaled.row(k) = (log_g.array() - top).exp().transpose();
    }
    return t;
}

struct ForwardPass {
    Matrix alpha;  // K x M, rows sum to one
    Vector norm;   // normalizer of the shifted recursion
    double loglik = 0.0;
};

ForwardPass run_forward(const SubjectSeries& series, const NaturalParams& nat, const EmissionTable& em,
                        TransitionCache& cache) {
    const auto k_len = static_cast<Eigen::Index>(series.size());
    const int m = nat.states();
    ForwardPass f;
    f.alpha.resize(k_len, m);
    f.norm.resize(k_len);
    Eigen::RowVectorXd a(m);
    for (Eigen::Index k = 0; k < k_len; ++k) {
        if (k == 0) {
            a = nat.pi.transpose().cwiseProduct(em.scaled.row(0));
        } else {
            const double dt = series.times[static_cast<std::size_t>(k)] - series.times[static_cast<std::size_t>(k - 1)];
            a.noalias() = f.alpha.row(k - 1) * cache.get(dt);
            a = a.cwiseProduct(em.scaled.row(k));
        }
        const double c = a.sum();
        if (!(c > 0.0) || !std::isfinite(c)) {
            throw LikelihoodError("subject " + series.subject_id + ": forward recursion underflowed at index " +
                                      std::to_string(k),
                                  static_cast<std::size_t>(k));
        }
        f.alpha.row(k) = a / c;
        f.norm(k) = c;
        f.loglik += std::log(c) + em.shift(k);
    }
    return f;
}

Matrix run_backward(const SubjectSeries& series, const EmissionTable& em, const ForwardPass& f,
                    TransitionCache& cache) {
    const auto k_len = static_cast<Eigen::Index>(series.size());
    const auto m = em.scaled.cols();
    Matrix beta(k_len, m);
    beta.row(k_len - 1).setOnes();
    Vector w(m);
    for (Eigen::Index k = k_len - 2; k >= 0; --k) {
        const double dt = series.times[static_cast<std::size_t>(k + 1)] - series.times[static_cast<std::size_t>(k)];
        w = em.scaled.row(k + 1).transpose().cwiseProduct(beta.row(k + 1).transpose()) / f.norm(k + 1);
        beta.row(k).noalias() = (cache.get(dt) * w).transpose();
    }
    return beta;
}

Matrix posterior(const Matrix& alpha, const Matrix& beta) {
    Matrix gamma = alpha.cwiseProduct(beta);
    for (Eigen::Index k = 0; k < gamma.rows(); ++k) gamma.row(k) /= gamma.row(k).sum();
    return gamma;
}

void check_inputs(const SubjectSeries& series, const ThetaSubject& theta) {
    if (series.size() == 0) throw std::invalid_argument("subject " + series.subject_id + ": empty series");
    if (series.covariate_dim() != theta.layout().covariates) {
        throw std::invalid_argument("subject " + series.subject_id + ": covariate dimension " +
                                    std::to_string(series.covariate_dim()) + " does not match theta (q = " +
                                    std::to_string(theta.layout().covariates) + ")");
    }
    if (!theta.values().allFinite()) throw std::invalid_argument("theta has non-finite entries");
}

}  // namespace

double neg_loglik(const SubjectSeries& series, const ThetaSubject& theta) {
    check_inputs(series, theta);
    const NaturalParams nat = to_natural(theta);
    const EmissionTable em = tabulate_emissions(series, nat.emission, false);
    TransitionCache cache(nat.rates, kTransitionFloor);
    return -run_forward(series, nat, em, cache).loglik;
}

double joint_neg_loglik(std::span<const SubjectSeries> data, std::span<const ThetaSubject> thetas) {
    if (data.size() != thetas.size()) throw std::invalid_argument("joint_neg_loglik: size mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) total += neg_loglik(data[i], thetas[i]);
    return total;
}

ForwardBackwardResult forward_backward(const SubjectSeries& series, const ThetaSubject& theta) {
    check_inputs(series, theta);
    const NaturalParams nat = to_natural(theta);
    const EmissionTable em = tabulate_emissions(series, nat.emission, false);
    TransitionCache cache(nat.rates, kTransitionFloor);
    ForwardPass f = run_forward(series, nat, em, cache);

    ForwardBackwardResult out;
    out.loglik = f.loglik;
    out.scaled_beta = run_backward(series, em, f, cache);
    out.gamma = posterior(f.alpha, out.scaled_beta);
    out.log_normalizers = f.norm.array().log().matrix() + em.shift;
    out.scaled_alpha = std::move(f.alpha);
    return out;
}

ValueAndGradient neg_loglik_and_gradient(const SubjectSeries& series, const ThetaSubject& theta) {
    check_inputs(series, theta);
    const ThetaLayout& lay = theta.layout();
    const int m = lay.states;
    const int q = lay.covariates;
    const NaturalParams nat = to_natural(theta);
    const EmissionTable em = tabulate_emissions(series, nat.emission, true);
    TransitionCache cache(nat.rates, kTransitionFloor);
    const ForwardPass f = run_forward(series, nat, em, cache);
    const Matrix beta = run_backward(series, em, f, cache);
    const Matrix gamma = posterior(f.alpha, beta);
    const auto k_len = static_cast<Eigen::Index>(series.size());

    Vector grad = Vector::Zero(lay.size());  // gradient of the log-likelihood

    // Initial distribution: d/da_s log pi(S_1) averaged over the posterior.
    {
        const auto seg = lay.segment(Block::InitialProbs);
        for (int s = 0; s < m - 1; ++s) grad(seg.offset + s) = gamma(0, s) - nat.pi(s);
    }

    // Transitions: expected jump weights per distinct gap, pushed through the
    // Frechet derivative of the exponential.
    {
        std::map<double, Matrix> weights;
        Vector w(m);
        for (Eigen::Index k = 0; k + 1 < k_len; ++k) {
            const double dt = series.times[static_cast<std::size_t>(k + 1)] - series.times[static_cast<std::size_t>(k)];
            w = em.scaled.row(k + 1).transpose().cwiseProduct(beta.row(k + 1).transpose()) / f.norm(k + 1);
            auto [it, inserted] = weights.try_emplace(dt, Matrix::Zero(m, m));
            it->second.noalias() += f.alpha.row(k).transpose() * w.transpose();
        }
        const Matrix& qm = nat.rates.matrix();
        Matrix d_rates = Matrix::Zero(m, m);
        for (const auto& [dt, g] : weights) {
            d_rates += dt * expm_frechet(dt * qm.transpose(), g);
        }
        const auto seg = lay.segment(Block::Rates);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j) {
                if (i == j) continue;
                grad(seg.offset + lay.rate_index(i, j)) = qm(i, j) * (d_rates(i, j) - d_rates(i, i));
            }
        }
    }

    // Emission coefficients.
    {
        const auto b0 = lay.segment(Block::Intercepts);
        const auto b1 = lay.segment(Block::Slopes);
        for (Eigen::Index k = 0; k < k_len; ++k) {
            const double r_delta = gamma(k, 0) * em.d_delta(k);
            grad(b0.offset) += r_delta;
            if (q > 0) grad.segment(b1.offset, q) += r_delta * series.covariates.row(k).transpose();
            for (int s = 0; s < m; ++s) {
                const double r = gamma(k, s) * em.d_lambda(k, s);
                grad(b0.offset + 1 + s) += r;
                if (q > 0) grad.segment(b1.offset + Eigen::Index(s + 1) * q, q) += r * series.covariates.row(k).transpose();
            }
        }
    }

    return {-f.loglik, -grad};
}

Vector grad_neg_loglik(const SubjectSeries& series, const ThetaSubject& theta) {
    return neg_loglik_and_gradient(series, theta).gradient;
}

PosteriorSummary time_in_state(std::span<const ForwardBackwardResult> results, std::span<const int> groups,
                               int n_groups) {
    if (results.size() != groups.size()) throw std::invalid_argument("time_in_state: size mismatch");
    if (results.empty()) throw std::invalid_argument("time_in_state: no subjects");
    const auto m = results.front().gamma.cols();
    PosteriorSummary out;
    out.eta.resize(static_cast<Eigen::Index>(results.size()), m);
    out.phi = Matrix::Zero(n_groups, m);
    std::vector<int> members(static_cast<std::size_t>(n_groups), 0);
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& gamma = results[i].gamma;
        if (gamma.cols() != m || gamma.rows() == 0) throw std::invalid_argument("time_in_state: bad gamma");
        out.eta.row(static_cast<Eigen::Index>(i)) = gamma.colwise().mean();
        const int g = groups[i];
        if (g < 1 || g > n_groups) {
            throw std::invalid_argument("time_in_state: unknown group id " + std::to_string(g));
        }
        out.phi.row(g - 1) += out.eta.row(static_cast<Eigen::Index>(i));
        ++members[static_cast<std::size_t>(g - 1)];
    }
    for (int j = 0; j < n_groups; ++j) {
        if (members[static_cast<std::size_t>(j)] == 0) {
            throw std::invalid_argument("time_in_state: group " + std::to_string(j + 1) + " is empty");
        }
        out.phi.row(j) /= members[static_cast<std::size_t>(j)];
    }
    return out;
}

}  // namespace hcthmm
