#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hcthmm/admm.hpp"

namespace hcthmm {

struct BootstrapConfig {
    int replicates = 50;
    std::vector<double> levels{0.95};
    int max_iter = 100;     // outer ADMM iterations per replicate
    int retry_budget = 3;   // fresh resamples tried after a failed replicate fit
    std::uint64_t seed = 1;
    int workers = 0;        // replicates run in parallel; each replicate fit is serial
};

// Indices into the original data, one per resampled subject.
using Resampler = std::function<std::vector<std::size_t>(std::span<const int> groups, int n_groups, RandomSource& rng)>;

// Draws n_j subjects with replacement inside every group j; the output keeps
// the original group order.
std::vector<std::size_t> stratified_resample(std::span<const int> groups, int n_groups, RandomSource& rng);

struct BootstrapResult {
    int n_replicates = 0;  // successful replicates
    int n_failed = 0;
    std::vector<double> levels;

    Matrix phi_hat;                  // J x M at the base fit
    Vector shared_hat;               // consensus vector z at the base fit
    std::vector<Matrix> phi;         // per replicate
    std::vector<Vector> shared;      // per replicate

    std::vector<Matrix> phi_lower;   // one per level
    std::vector<Matrix> phi_upper;
    Matrix phi_se;
    std::vector<Vector> shared_lower;
    std::vector<Vector> shared_upper;
    Vector shared_se;
};

// Time-in-state summary phi (J x M) for the given parameters.
Matrix group_phi(std::span<const SubjectSeries> data, std::span<const ThetaSubject> thetas,
                 std::span<const int> groups, int n_groups);

// Type-7 sample quantile of values at probability p.
double sample_quantile(std::vector<double> values, double p);

BootstrapResult bootstrap(std::span<const SubjectSeries> data, const HierarchySpec& spec, const FitConfig& fit_config,
                          const FitResult& base, const BootstrapConfig& config,
                          const Resampler& resampler = stratified_resample);

}  // namespace hcthmm
