#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "hcthmm/model.hpp"

namespace hcthmm {

struct UniformRange {
    double lo = 0.0;
    double hi = 0.0;
    double draw(RandomSource& rng) const;
};

// Laws of the group-level initial distribution and rate matrix of a
// 3-state chain. pi = (U1, U2, 1 - U1 - U2); rates[i][j] is the law of q_ij
// (diagonal entries unused).
struct GroupLaw {
    UniformRange pi1;
    UniformRange pi2;
    std::array<std::array<UniformRange, 3>, 3> rates{};
};

struct SimDesign {
    int n_subjects = 20;  // first half group 1 (male), second half group 2 (female)
    int min_length = 500;
    int max_length = 2500;  // number of observations K ~ U{min_length..max_length}
    int max_gap = 10;       // gaps uniform on {1..max_gap}
    double weekend_fraction = 2.0 / 7.0;
    bool interleave_weekend = false;  // default: weekend observations form a prefix

    // Subject intercepts b0 ~ N(mean, sd^2) in emission order
    // [zero odds, log mean state 1, 2, 3].
    std::array<double, 4> intercept_mean{-1.0, 3.912023005428146, 5.703782474656201, 6.551080335043404};
    double intercept_sd = 0.1;
    // Weekend effects in the same order.
    std::array<double, 4> weekend_slopes{0.1, -0.1, -0.2, -0.3};

    GroupLaw male = default_male();
    GroupLaw female = default_female();

    std::uint64_t seed = 1;

    static GroupLaw default_male();
    static GroupLaw default_female();
    void validate() const;
};

struct Cohort {
    std::vector<SubjectSeries> data;
    std::vector<ThetaSubject> truth;        // per subject, fitter coordinates
    std::vector<PiecewiseConstantPath> paths;
    std::array<Vector, 2> group_pi;         // drawn once per group
    std::array<Matrix, 2> group_rates;
    Vector slopes;                          // population weekend effects, emission order
};

// Group laws are drawn once per cohort from design.seed; each subject then
// gets its own RNG stream derived from the seed and its index.
Cohort generate_cohort(const SimDesign& design);

// Simulates counts from fitted or true parameters on the given design grid
// (times and covariates are reused, counts are replaced).
SubjectSeries simulate_series(const SubjectSeries& grid, const ThetaSubject& theta, RandomSource& rng);

}  // namespace hcthmm
