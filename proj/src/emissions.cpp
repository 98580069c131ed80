#include "hcthmm/emissions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hcthmm {

void EmissionCoeffs::validate() const {
    const auto m = lambda_intercepts.size();
    const auto q = delta_slope.size();
    if (m < 1) throw std::invalid_argument("emission coefficients: no states");
    if (lambda_slopes.rows() != m || lambda_slopes.cols() != q) {
        throw std::invalid_argument("emission coefficients: lambda slopes must be " + std::to_string(m) + " x " +
                                    std::to_string(q));
    }
    if (!std::isfinite(delta_intercept) || !delta_slope.allFinite() || !lambda_intercepts.allFinite() ||
        !lambda_slopes.allFinite()) {
        throw std::invalid_argument("emission coefficients: non-finite entry");
    }
}

double EmissionCoeffs::delta_eta(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return delta_intercept + (delta_slope.size() ? x.dot(delta_slope) : 0.0);
}

double EmissionCoeffs::lambda_eta(int state, const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return lambda_intercepts(state) + (lambda_slopes.cols() ? x.dot(lambda_slopes.row(state).transpose()) : 0.0);
}

double log_sigmoid(double x) {
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

namespace {

EmissionTerms terms_from(std::int64_t y, double lambda_eta, double lambda, bool zero_inflated, double log_delta,
                         double log_keep, double delta, double log_y_factorial) {
    const double yd = static_cast<double>(y);
    const double log_pois = yd * lambda_eta - lambda - log_y_factorial;
    EmissionTerms out;
    if (!zero_inflated) {
        out.log_prob = log_pois;
        out.d_lambda_eta = yd - lambda;
        return out;
    }
    if (y > 0) {
        out.log_prob = log_keep + log_pois;
        out.d_delta_eta = -delta;
        out.d_lambda_eta = yd - lambda;
        return out;
    }
    // y == 0: mixture of the structural zero and the Poisson zero.
    const double u = log_delta;
    const double v = log_keep - lambda;
    const double hi = std::max(u, v);
    out.log_prob = hi + std::log(std::exp(u - hi) + std::exp(v - hi));
    const double structural = std::exp(u - out.log_prob);  // P(structural zero | y = 0)
    out.d_delta_eta = structural - delta;
    out.d_lambda_eta = -lambda * (1.0 - structural);
    return out;
}

constexpr std::int64_t kFactorialTable = 4096;

}  // namespace

double log_factorial(std::int64_t y) {
    static const std::vector<double> table = [] {
        std::vector<double> t(static_cast<std::size_t>(kFactorialTable));
        for (std::int64_t i = 0; i < kFactorialTable; ++i) {
            t[static_cast<std::size_t>(i)] = std::lgamma(static_cast<double>(i) + 1.0);
        }
        return t;
    }();
    if (y >= 0 && y < kFactorialTable) return table[static_cast<std::size_t>(y)];
    return std::lgamma(static_cast<double>(y) + 1.0);
}

EmissionTerms emission_terms(std::int64_t y, double delta_eta, double lambda_eta, bool zero_inflated,
                             double log_y_factorial) {
    const double log_delta = zero_inflated ? log_sigmoid(delta_eta) : 0.0;
    const double log_keep = zero_inflated ? log_sigmoid(-delta_eta) : 0.0;
    return terms_from(y, lambda_eta, std::exp(lambda_eta), zero_inflated, log_delta, log_keep, std::exp(log_delta),
                      log_y_factorial);
}

EmissionRow emission_row(const EmissionCoeffs& coeffs, const Eigen::Ref<const Eigen::VectorXd>& x) {
    EmissionRow row;
    const double de = coeffs.delta_eta(x);
    row.log_delta = log_sigmoid(de);
    row.log_keep = log_sigmoid(-de);
    row.delta = std::exp(row.log_delta);
    const int m = coeffs.states();
    row.lambda_eta.resize(m);
    for (int s = 0; s < m; ++s) row.lambda_eta(s) = coeffs.lambda_eta(s, x);
    row.lambda = row.lambda_eta.array().exp();
    return row;
}

EmissionTerms emission_terms(std::int64_t y, const EmissionRow& row, int state, double log_y_factorial) {
    return terms_from(y, row.lambda_eta(state), row.lambda(state), state == 0, row.log_delta, row.log_keep,
                      row.delta, log_y_factorial);
}

double log_emission(std::int64_t y, const Eigen::Ref<const Eigen::VectorXd>& x, int state,
                    const EmissionCoeffs& coeffs) {
    if (y < 0) throw std::invalid_argument("log_emission: negative count");
    if (state < 0 || state >= coeffs.states()) {
        throw std::invalid_argument("log_emission: state " + std::to_string(state) + " out of range");
    }
    const bool zi = state == 0;
    const double de = zi ? coeffs.delta_eta(x) : 0.0;
    return emission_terms(y, de, coeffs.lambda_eta(state, x), zi, log_factorial(y)).log_prob;
}

std::int64_t sample_emission(const Eigen::Ref<const Eigen::VectorXd>& x, int state, const EmissionCoeffs& coeffs,
                             RandomSource& rng) {
    if (state < 0 || state >= coeffs.states()) {
        throw std::invalid_argument("sample_emission: state " + std::to_string(state) + " out of range");
    }
    if (state == 0) {
        const double delta = std::exp(log_sigmoid(coeffs.delta_eta(x)));
        if (std::bernoulli_distribution(delta)(rng)) return 0;
    }
    const double lambda = std::exp(coeffs.lambda_eta(state, x));
    return std::poisson_distribution<std::int64_t>(lambda)(rng);
}

}  // namespace hcthmm
