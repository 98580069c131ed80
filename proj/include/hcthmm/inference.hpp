#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hcthmm/model.hpp"

namespace hcthmm {

// Raised when the forward recursion cannot be normalized at some time
// index, e.g. every state assigns zero probability to the observation.
class LikelihoodError : public std::runtime_error {
public:
    LikelihoodError(const std::string& what, std::size_t time_index)
        : std::runtime_error(what), time_index_(time_index) {}
    std::size_t time_index() const { return time_index_; }

private:
    std::size_t time_index_;
};

// Scaled forward-backward quantities for one subject. Rows index time.
//   scaled_alpha(k, .) = alpha_k / P(Y_1..Y_k)     (rows sum to one)
//   scaled_beta(k, .)  = beta_k / P(Y_{k+1}..Y_K | Y_1..Y_k)
//   log_normalizers(k) = log P(Y_k | Y_1..Y_{k-1})
struct ForwardBackwardResult {
    double loglik = 0.0;
    Matrix scaled_alpha;
    Vector log_normalizers;
    Matrix scaled_beta;
    Matrix gamma;
};

// eta: one row per subject; phi: one row per group (row j-1 for group j).
struct PosteriorSummary {
    Matrix eta;
    Matrix phi;
};

struct ValueAndGradient {
    double value = 0.0;
    Vector gradient;
};

// f_i(theta_i), the negative log-likelihood of one subject.
double neg_loglik(const SubjectSeries& series, const ThetaSubject& theta);

// Sum of f_i over subjects; thetas align with data.
double joint_neg_loglik(std::span<const SubjectSeries> data, std::span<const ThetaSubject> thetas);

ForwardBackwardResult forward_backward(const SubjectSeries& series, const ThetaSubject& theta);

// gradient of f_i in unconstrained coordinates.
Vector grad_neg_loglik(const SubjectSeries& series, const ThetaSubject& theta);

// f_i and its gradient from one forward-backward sweep.
ValueAndGradient neg_loglik_and_gradient(const SubjectSeries& series, const ThetaSubject& theta);

// Mean posterior occupancy per subject (eta) and per group (phi).
// groups holds 1-based ids aligned with results. Throws on an empty group.
PosteriorSummary time_in_state(std::span<const ForwardBackwardResult> results,
                               std::span<const int> groups, int n_groups);

}  // namespace hcthmm
