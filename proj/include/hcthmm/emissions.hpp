#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "hcthmm/ctmc.hpp"

namespace hcthmm {

// GLM coefficients of the state-dependent count laws.
//   logit delta(x)       = delta_intercept + x' delta_slope
//   log lambda_m(x)      = lambda_intercepts[m] + x' lambda_slopes.row(m)
// State 0 is zero-inflated Poisson, states 1..M-1 are Poisson.
struct EmissionCoeffs {
    double delta_intercept = 0.0;
    Eigen::VectorXd delta_slope;        // q
    Eigen::VectorXd lambda_intercepts;  // M
    Eigen::MatrixXd lambda_slopes;      // M x q

    int states() const { return static_cast<int>(lambda_intercepts.size()); }
    int covariates() const { return static_cast<int>(delta_slope.size()); }

    // Throws std::invalid_argument on dimension mismatch or non-finite entries.
    void validate() const;

    double delta_eta(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    double lambda_eta(int state, const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

// Log pmf and its partial derivatives with respect to the two linear
// predictors (logit delta and log lambda).
struct EmissionTerms {
    double log_prob = 0.0;
    double d_delta_eta = 0.0;   // zero unless zero_inflated
    double d_lambda_eta = 0.0;
};

// Works directly from linear predictors; log_y_factorial = lgamma(y + 1).
EmissionTerms emission_terms(std::int64_t y, double delta_eta, double lambda_eta,
                             bool zero_inflated, double log_y_factorial);

// delta and lambda_m evaluated once for a covariate value, so consecutive
// observations sharing x reuse them.
struct EmissionRow {
    double log_delta = 0.0;
    double log_keep = 0.0;  // log(1 - delta)
    double delta = 0.0;
    Eigen::VectorXd lambda_eta;
    Eigen::VectorXd lambda;
};

EmissionRow emission_row(const EmissionCoeffs& coeffs, const Eigen::Ref<const Eigen::VectorXd>& x);
EmissionTerms emission_terms(std::int64_t y, const EmissionRow& row, int state, double log_y_factorial);

// lgamma(y + 1), tabulated for small y.
double log_factorial(std::int64_t y);

// log g_m(y; x) for 0-based state m. Throws std::invalid_argument for y < 0
// or an out-of-range state.
double log_emission(std::int64_t y, const Eigen::Ref<const Eigen::VectorXd>& x, int state,
                    const EmissionCoeffs& coeffs);

std::int64_t sample_emission(const Eigen::Ref<const Eigen::VectorXd>& x, int state,
                             const EmissionCoeffs& coeffs, RandomSource& rng);

// log(1 / (1 + e^{-x})) without overflow.
double log_sigmoid(double x);

}  // namespace hcthmm
