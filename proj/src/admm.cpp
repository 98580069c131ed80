#include "hcthmm/admm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "hcthmm/parallel.hpp"

namespace hcthmm {

namespace {

// Eigenvalue floor of the penalty metric, relative to its largest eigenvalue.
constexpr double kMetricFloor = 1e-9;

// xi^T r + (rho/2) r^T P r over one subject's links, r = theta - z; adds the
// gradient when grad != nullptr.
double link_penalty(const std::vector<ConstraintLink>& links, const Vector& xi, const Matrix& metric,
                    const Vector& z, double rho, const Vector& x, Vector* grad) {
    if (links.empty()) return 0.0;
    Vector r(static_cast<Eigen::Index>(links.size()));
    for (std::size_t k = 0; k < links.size(); ++k) r(static_cast<Eigen::Index>(k)) = x(links[k].theta_index) - z(links[k].z_index);
    const Vector pr = metric * r;
    if (grad) {
        for (std::size_t k = 0; k < links.size(); ++k) {
            (*grad)(links[k].theta_index) += xi(static_cast<Eigen::Index>(k)) + rho * pr(static_cast<Eigen::Index>(k));
        }
    }
    return xi.dot(r) + 0.5 * rho * r.dot(pr);
}

// Symmetric positive-definite version of a curvature estimate.
Matrix spd_part(const Matrix& h) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(h);
    Vector lam = eig.eigenvalues().cwiseAbs();
    const double top = std::max(lam.maxCoeff(), 1.0e-12);
    lam = lam.cwiseMax(kMetricFloor * top);
    return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

AdmmSolver::AdmmSolver(std::span<const SubjectSeries> data, const HierarchySpec& spec, FitConfig config,
                       std::vector<ThetaSubject> initial)
    : data_(data), spec_(spec), config_(config), constraints_(build_constraints(spec)) {
    if (data.empty()) throw std::invalid_argument("fit: no subjects");
    if (data.size() != spec.n_subjects()) throw std::invalid_argument("fit: hierarchy does not match the data");
    if (initial.size() != data.size()) throw std::invalid_argument("fit: one starting theta per subject required");
    if (!(config.rho > 0.0)) throw std::invalid_argument("fit: rho must be positive");
    if (!(config.min_rho > 0.0)) throw std::invalid_argument("fit: min_rho must be positive");
    if (config.stall_window < 0) throw std::invalid_argument("fit: stall_window must be non-negative");
    if (spec.states < 2) throw std::invalid_argument("fit: need at least 2 states");
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data[i].group_id != spec.groups[i]) {
            throw std::invalid_argument("fit: subject " + data[i].subject_id + " group differs from hierarchy");
        }
        if (initial[i].layout() != spec.layout()) {
            throw std::invalid_argument("fit: starting theta of subject " + data[i].subject_id +
                                        " has the wrong layout");
        }
    }

    state_.theta = std::move(initial);
    state_.rho = config.rho;
    rho_floor_ = config.min_rho;
    state_.z = constraints_.consensus(state_.theta);
    state_.xi.reserve(data.size());
    for (const auto& l : constraints_.links) state_.xi.push_back(Vector::Zero(static_cast<Eigen::Index>(l.size())));
    subject_f_.assign(data.size(), 0.0);
    hessian_.assign(data.size(), Matrix());
    tolerance_ = config.tol_abs * std::sqrt(static_cast<double>(std::max<Eigen::Index>(1, constraints_.constrained_dim())));

    build_classes();
    refresh_hessians();
    update_metric();
}

void AdmmSolver::build_classes() {
    const auto n = constraints_.n_subjects();
    std::vector<std::vector<std::size_t>> sharing(static_cast<std::size_t>(constraints_.z_dim));
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& l : constraints_.links[i]) sharing[static_cast<std::size_t>(l.z_index)].push_back(i);
    }
    std::map<std::vector<std::size_t>, std::size_t> index;
    std::vector<std::pair<std::size_t, std::size_t>> where(sharing.size());  // class, position
    for (std::size_t j = 0; j < sharing.size(); ++j) {
        if (sharing[j].empty()) continue;
        auto [it, inserted] = index.try_emplace(sharing[j], classes_.size());
        if (inserted) {
            classes_.push_back({});
            classes_.back().subjects = sharing[j];
            classes_.back().links.assign(sharing[j].size(), {});
        }
        auto& c = classes_[it->second];
        where[j] = {it->second, c.entries.size()};
        c.entries.push_back(static_cast<Eigen::Index>(j));
    }
    for (auto& c : classes_) {
        for (auto& l : c.links) l.assign(c.entries.size(), -1);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto& links = constraints_.links[i];
        for (std::size_t k = 0; k < links.size(); ++k) {
            const auto [ci, pos] = where[static_cast<std::size_t>(links[k].z_index)];
            auto& c = classes_[ci];
            const auto member = static_cast<std::size_t>(
                std::lower_bound(c.subjects.begin(), c.subjects.end(), i) - c.subjects.begin());
            c.links[member][pos] = static_cast<int>(k);
        }
    }
    subject_metric_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto m = static_cast<Eigen::Index>(constraints_.links[i].size());
        subject_metric_[i] = Matrix::Identity(m, m);
    }
}

void AdmmSolver::refresh_hessians() {
    if (!config_.curvature_metric && config_.hessian_refresh <= 0) return;
    parallel_for(data_.size(), config_.workers, [&](std::size_t i) {
        const Vector& x = state_.theta[i].values();
        try {
            hessian_[i] = fd_hessian(subject_objective(i, false), x);
        } catch (const std::exception&) {
            hessian_[i] = Matrix::Identity(x.size(), x.size());
        }
    });
}

void AdmmSolver::update_metric() {
    if (!config_.curvature_metric) return;
    for (auto& c : classes_) {
        const auto d = static_cast<Eigen::Index>(c.entries.size());
        Matrix mean = Matrix::Zero(d, d);
        for (std::size_t s = 0; s < c.subjects.size(); ++s) {
            const std::size_t i = c.subjects[s];
            const auto& links = constraints_.links[i];
            for (Eigen::Index a = 0; a < d; ++a) {
                const auto ta = links[static_cast<std::size_t>(c.links[s][static_cast<std::size_t>(a)])].theta_index;
                for (Eigen::Index b = 0; b < d; ++b) {
                    const auto tb = links[static_cast<std::size_t>(c.links[s][static_cast<std::size_t>(b)])].theta_index;
                    mean(a, b) += hessian_[i](ta, tb);
                }
            }
        }
        mean /= static_cast<double>(c.subjects.size());
        c.metric = spd_part(mean);
        c.metric_inverse = c.metric.inverse();
        for (std::size_t s = 0; s < c.subjects.size(); ++s) {
            Matrix& pm = subject_metric_[c.subjects[s]];
            for (Eigen::Index a = 0; a < d; ++a) {
                for (Eigen::Index b = 0; b < d; ++b) {
                    pm(c.links[s][static_cast<std::size_t>(a)], c.links[s][static_cast<std::size_t>(b)]) = c.metric(a, b);
                }
            }
        }
    }
}

SmoothObjective AdmmSolver::subject_objective(std::size_t i, bool with_penalty) const {
    const SubjectSeries& series = data_[i];
    const ThetaLayout layout = spec_.layout();
    const auto& links = constraints_.links[i];
    const Vector& xi = state_.xi[i];
    const Matrix& metric = subject_metric_[i];
    const Vector& z = state_.z;
    const double rho = state_.rho;
    return [&series, layout, &links, &xi, &metric, &z, rho, with_penalty](const Vector& x, Vector* grad) {
        const ThetaSubject theta(layout, x);
        double value;
        if (grad) {
            ValueAndGradient vg = neg_loglik_and_gradient(series, theta);
            *grad = std::move(vg.gradient);
            value = vg.value;
        } else {
            value = neg_loglik(series, theta);
        }
        if (with_penalty) value += link_penalty(links, xi, metric, z, rho, x, grad);
        return value;
    };
}

void AdmmSolver::update_theta() {
    const int iteration = state_.iteration;
    parallel_for(data_.size(), config_.workers, [&](std::size_t i) {
        const SubjectSeries& series = data_[i];
        const auto& links = constraints_.links[i];
        const SmoothObjective objective = subject_objective(i, true);

        const Vector start = state_.theta[i].values();
        Matrix metric = hessian_[i];
        for (std::size_t a = 0; a < links.size(); ++a) {
            for (std::size_t b = 0; b < links.size(); ++b) {
                metric(links[a].theta_index, links[b].theta_index) +=
                    state_.rho * subject_metric_[i](static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            }
        }

        InnerOptions opts;
        opts.gradient_tolerance = config_.inner_tol * static_cast<double>(series.size());
        opts.max_iterations = config_.inner_max_iter;
        opts.metric = &metric;

        InnerResult res = minimize_lbfgs(objective, start, opts);
        std::mt19937_64 retry_rng(config_.seed ^ (0x9e3779b97f4a7c15ULL * (i + 1)) ^ static_cast<std::uint64_t>(iteration));
        std::normal_distribution<double> noise(0.0, 0.01);
        for (int attempt = 0; !res.usable && attempt < config_.inner_retries; ++attempt) {
            Vector jittered = start;
            for (Eigen::Index j = 0; j < jittered.size(); ++j) jittered(j) += noise(retry_rng);
            opts.metric = nullptr;
            res = minimize_lbfgs(objective, jittered, opts);
        }
        if (!res.usable) {
            throw std::runtime_error("inner solver failed for subject " + series.subject_id + ": " + res.message);
        }
        subject_f_[i] = res.value - link_penalty(links, state_.xi[i], subject_metric_[i], state_.z, state_.rho, res.x, nullptr);
        state_.theta[i] = ThetaSubject(spec_.layout(), std::move(res.x));
    });
}

void AdmmSolver::step() {
    update_theta();
    const double rho = state_.rho;
    const auto& links = constraints_.links;

    // z-update, per sharing class: mean of theta plus P^{-1} mean(xi) / rho.
    const Vector z_old = state_.z;
    for (const auto& c : classes_) {
        const auto d = static_cast<Eigen::Index>(c.entries.size());
        Vector mean_theta = Vector::Zero(d);
        Vector mean_xi = Vector::Zero(d);
        for (std::size_t s = 0; s < c.subjects.size(); ++s) {
            const std::size_t i = c.subjects[s];
            for (Eigen::Index a = 0; a < d; ++a) {
                const int k = c.links[s][static_cast<std::size_t>(a)];
                mean_theta(a) += state_.theta[i].values()(links[i][static_cast<std::size_t>(k)].theta_index);
                mean_xi(a) += state_.xi[i](k);
            }
        }
        const double n = static_cast<double>(c.subjects.size());
        const Vector zc = mean_theta / n + (config_.curvature_metric ? Vector(c.metric_inverse * mean_xi) : mean_xi) / (n * rho);
        for (Eigen::Index a = 0; a < d; ++a) state_.z(c.entries[static_cast<std::size_t>(a)]) = zc(a);
    }

    // xi-update and residuals, both in the penalty metric.
    double primal_sq = 0.0;
    double dual_sq = 0.0;
    for (std::size_t i = 0; i < links.size(); ++i) {
        const auto m = static_cast<Eigen::Index>(links[i].size());
        if (m == 0) continue;
        Vector r(m), dz(m);
        for (Eigen::Index k = 0; k < m; ++k) {
            const auto [t, j] = links[i][static_cast<std::size_t>(k)];
            r(k) = state_.theta[i].values()(t) - state_.z(j);
            dz(k) = state_.z(j) - z_old(j);
        }
        const Vector pr = subject_metric_[i] * r;
        state_.xi[i] += rho * pr;
        primal_sq += r.dot(pr);
        dual_sq += dz.dot(subject_metric_[i] * dz);
    }
    state_.primal_residual = std::sqrt(std::max(0.0, primal_sq));
    state_.dual_residual = rho * std::sqrt(std::max(0.0, dual_sq));
    ++state_.iteration;

    history_.push_back({state_.iteration, state_.primal_residual, state_.dual_residual, rho,
                        std::accumulate(subject_f_.begin(), subject_f_.end(), 0.0)});
    if (!std::isfinite(history_.back().neg_loglik)) throw std::runtime_error("fit: non-finite likelihood");

    if (config_.adaptive_rho && !converged()) {
        if (stalled()) {
            rho_floor_ = state_.rho * config_.rho_factor;
            state_.rho = rho_floor_;
            last_rho_raise_ = state_.iteration;
        } else if (state_.primal_residual > config_.balance_ratio * state_.dual_residual) {
            state_.rho *= config_.rho_factor;
        } else if (state_.dual_residual > config_.balance_ratio * state_.primal_residual) {
            state_.rho = std::max(rho_floor_, state_.rho / config_.rho_factor);
        }
    }
    if (config_.hessian_refresh > 0 && state_.iteration % config_.hessian_refresh == 0 && !converged()) {
        refresh_hessians();
        update_metric();
    }
}

bool AdmmSolver::stalled() const {
    const int w = config_.stall_window;
    if (w <= 0 || state_.iteration - last_rho_raise_ < 2 * w || state_.primal_residual <= tolerance_) return false;
    // best primal residual in the last w iterations against the best before them
    const auto end = history_.end(), mid = end - w, begin = end - 2 * w;
    auto best = [](auto first, auto last) {
        double b = std::numeric_limits<double>::infinity();
        for (auto it = first; it != last; ++it) b = std::min(b, it->primal);
        return b;
    };
    return best(mid, end) > 0.5 * best(begin, mid);
}

bool AdmmSolver::converged() const {
    if (state_.iteration == 0) return false;
    return state_.primal_residual <= tolerance_ && state_.dual_residual <= tolerance_;
}

FitResult AdmmSolver::run() {
    while (state_.iteration < config_.max_iter) {
        step();
        if (converged()) break;
    }
    return result();
}

FitResult AdmmSolver::result() const {
    FitResult out;
    out.theta_hat = state_.theta;
    for (std::size_t i = 0; i < out.theta_hat.size(); ++i) {
        constraints_.project(i, out.theta_hat[i].values(), state_.z);
    }
    out.z_hat = state_.z;
    out.xi = state_.xi;
    out.n_iterations = state_.iteration;
    out.residual_history = history_;
    out.converged = converged();
    out.rho = state_.rho;
    out.tol_primal = out.tol_dual = tolerance_;
    out.neg_loglik = joint_neg_loglik(data_, out.theta_hat);
    out.bic = bic(out, data_, spec_);
    return out;
}

double AdmmSolver::augmented_lagrangian(std::span<const ThetaSubject> theta, const Vector& z,
                                        std::span<const Vector> xi, double rho) const {
    double total = joint_neg_loglik(data_, theta);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        total += link_penalty(constraints_.links[i], xi[i], subject_metric_[i], z, rho, theta[i].values(), nullptr);
    }
    return total;
}

// ---------------------------------------------------------------------------

FitResult fit_from(std::span<const SubjectSeries> data, const HierarchySpec& spec, const FitConfig& config,
                   std::vector<ThetaSubject> initial) {
    AdmmSolver solver(data, spec, config, std::move(initial));
    FitResult out = solver.run();
    const auto perm = canonical_permutation(out.theta_hat);
    if (!std::is_sorted(perm.begin(), perm.end())) relabel(out, perm, solver.constraints());
    return out;
}

FitResult fit(std::span<const SubjectSeries> data, const HierarchySpec& spec, const FitConfig& config) {
    if (config.states != spec.states) throw std::invalid_argument("fit: config.states differs from hierarchy");
    RandomSource rng(config.seed);
    auto starts = initial_starts(data, spec, config, rng);

    FitResult best;
    bool have_best = false;
    std::exception_ptr first_error;
    for (std::size_t s = 0; s < starts.size(); ++s) {
        try {
            FitResult r = fit_from(data, spec, config, std::move(starts[s]));
            r.start_index = static_cast<int>(s);
            if (!have_best || r.neg_loglik < best.neg_loglik) {
                best = std::move(r);
                have_best = true;
            }
        } catch (...) {
            if (!first_error) first_error = std::current_exception();
        }
    }
    if (!have_best) std::rethrow_exception(first_error);
    return best;
}

double bic(const FitResult& fit, std::span<const SubjectSeries> data, const HierarchySpec& spec) {
    double n_obs = 0.0;
    for (const auto& s : data) n_obs += static_cast<double>(s.size());
    return 2.0 * fit.neg_loglik + static_cast<double>(free_parameter_count(spec)) * std::log(n_obs);
}

std::vector<int> canonical_permutation(std::span<const ThetaSubject> thetas) {
    if (thetas.empty()) return {};
    const int m = thetas.front().layout().states;
    Vector mean = Vector::Zero(m);
    for (const auto& t : thetas) mean += t.block(Block::Intercepts).tail(m);
    std::vector<int> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin() + 1, perm.end(), [&](int a, int b) { return mean(a) < mean(b); });
    return perm;
}

void relabel(FitResult& fit, std::span<const int> perm, const ConstraintSystem& constraints) {
    for (auto& t : fit.theta_hat) t = permute_states(t, perm);
    fit.z_hat = constraints.consensus(fit.theta_hat);
    // Multipliers do not follow the nonlinear relabelling of the initial-state block.
    for (auto& x : fit.xi) x.setZero();
}

}  // namespace hcthmm
