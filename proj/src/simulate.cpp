#include "hcthmm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace hcthmm {

double UniformRange::draw(RandomSource& rng) const {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

GroupLaw SimDesign::default_male() {
    GroupLaw g;
    g.pi1 = {0.2, 0.4};
    g.pi2 = {0.2, 0.4};
    for (auto& row : g.rates) row.fill({0.05, 0.15});
    return g;
}

GroupLaw SimDesign::default_female() {
    GroupLaw g;
    g.pi1 = {0.6, 0.8};
    g.pi2 = {0.1, 0.2};
    g.rates[0][1] = {0.05, 0.1};
    g.rates[0][2] = {0.05, 0.1};
    g.rates[1][0] = {0.3, 0.4};
    g.rates[1][2] = {0.1, 0.2};
    g.rates[2][0] = {0.3, 0.4};
    g.rates[2][1] = {0.1, 0.2};
    return g;
}

void SimDesign::validate() const {
    if (n_subjects < 1) throw std::invalid_argument("simulate: n_subjects must be positive");
    if (min_length < 1 || max_length < min_length) throw std::invalid_argument("simulate: bad series length range");
    if (max_gap < 1) throw std::invalid_argument("simulate: max_gap must be at least 1");
    if (!(weekend_fraction >= 0.0 && weekend_fraction <= 1.0)) {
        throw std::invalid_argument("simulate: weekend_fraction must lie in [0, 1]");
    }
    if (!(intercept_sd >= 0.0)) throw std::invalid_argument("simulate: intercept_sd must be non-negative");
    for (const GroupLaw* g : {&male, &female}) {
        if (g->pi1.lo < 0.0 || g->pi2.lo < 0.0 || g->pi1.hi + g->pi2.hi > 1.0 || g->pi1.hi < g->pi1.lo ||
            g->pi2.hi < g->pi2.lo) {
            throw std::invalid_argument("simulate: initial-probability ranges must leave mass for state 3");
        }
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                if (i == j) continue;
                const auto& r = g->rates[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                if (!(r.lo > 0.0) || r.hi < r.lo) throw std::invalid_argument("simulate: rate ranges must be positive");
            }
        }
    }
}

namespace {

void draw_group(const GroupLaw& law, RandomSource& rng, Vector& pi, Matrix& rates) {
    pi.resize(3);
    pi(0) = law.pi1.draw(rng);
    pi(1) = law.pi2.draw(rng);
    pi(2) = 1.0 - pi(0) - pi(1);
    Matrix off = Matrix::Zero(3, 3);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            if (i != j) off(i, j) = law.rates[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].draw(rng);
        }
    }
    rates = RateMatrix::from_off_diagonal(off).matrix();
}

// Draws the latent path on the grid and the counts given it.
void fill_counts(SubjectSeries& s, const NaturalParams& nat, RandomSource& rng,
                 PiecewiseConstantPath* path_out = nullptr) {
    const double t0 = s.times.front();
    const double horizon = s.times.back() - t0 + 1.0;
    PiecewiseConstantPath path = sample_path(nat.rates, nat.pi, horizon, rng);
    s.counts.resize(s.times.size());
    for (std::size_t k = 0; k < s.times.size(); ++k) {
        const int state = path.state_at(s.times[k] - t0);
        s.counts[k] = sample_emission(s.covariates.row(static_cast<Eigen::Index>(k)).transpose(), state, nat.emission, rng);
    }
    if (path_out) *path_out = std::move(path);
}

}  // namespace

Cohort generate_cohort(const SimDesign& design) {
    design.validate();
    Cohort out;
    RandomSource master(design.seed);
    draw_group(design.male, master, out.group_pi[0], out.group_rates[0]);
    draw_group(design.female, master, out.group_pi[1], out.group_rates[1]);
    out.slopes = Eigen::Map<const Vector>(design.weekend_slopes.data(), 4);

    const auto n = static_cast<std::size_t>(design.n_subjects);
    out.data.resize(n);
    out.truth.resize(n);
    out.paths.resize(n);
    const int n_male = (design.n_subjects + 1) / 2;

    for (std::size_t i = 0; i < n; ++i) {
        std::seed_seq seq{static_cast<std::uint32_t>(design.seed), static_cast<std::uint32_t>(design.seed >> 32),
                          static_cast<std::uint32_t>(i), 0x5eedu};
        RandomSource rng(seq);
        const int group = static_cast<int>(i) < n_male ? 1 : 2;

        NaturalParams nat;
        nat.pi = out.group_pi[static_cast<std::size_t>(group - 1)];
        nat.rates = RateMatrix(out.group_rates[static_cast<std::size_t>(group - 1)]);
        std::normal_distribution<double> unit(0.0, 1.0);
        auto& e = nat.emission;
        e.delta_intercept = design.intercept_mean[0] + design.intercept_sd * unit(rng);
        e.lambda_intercepts.resize(3);
        for (int s = 0; s < 3; ++s) {
            e.lambda_intercepts(s) = design.intercept_mean[static_cast<std::size_t>(s + 1)] + design.intercept_sd * unit(rng);
        }
        e.delta_slope = Vector::Constant(1, design.weekend_slopes[0]);
        e.lambda_slopes.resize(3, 1);
        for (int s = 0; s < 3; ++s) e.lambda_slopes(s, 0) = design.weekend_slopes[static_cast<std::size_t>(s + 1)];

        SubjectSeries& s = out.data[i];
        s.subject_id = "S" + std::to_string(i + 1);
        s.group_id = group;
        const int k_len = std::uniform_int_distribution<int>(design.min_length, design.max_length)(rng);
        std::uniform_int_distribution<int> gap(1, design.max_gap);
        s.times.resize(static_cast<std::size_t>(k_len));
        double t = 0.0;
        for (int k = 0; k < k_len; ++k) {
            if (k > 0) t += gap(rng);
            s.times[static_cast<std::size_t>(k)] = t;
        }
        s.covariates = Matrix::Zero(k_len, 1);
        const auto n_weekend = static_cast<Eigen::Index>(std::lround(design.weekend_fraction * k_len));
        if (design.interleave_weekend) {
            std::vector<Eigen::Index> idx(static_cast<std::size_t>(k_len));
            std::iota(idx.begin(), idx.end(), Eigen::Index{0});
            std::shuffle(idx.begin(), idx.end(), rng);
            for (Eigen::Index k = 0; k < n_weekend; ++k) s.covariates(idx[static_cast<std::size_t>(k)], 0) = 1.0;
        } else {
            s.covariates.topRows(n_weekend).setOnes();
        }

        fill_counts(s, nat, rng, &out.paths[i]);
        s.validate();
        out.truth[i] = from_natural(nat);
    }
    return out;
}

SubjectSeries simulate_series(const SubjectSeries& grid, const ThetaSubject& theta, RandomSource& rng) {
    if (grid.size() == 0) throw std::invalid_argument("simulate_series: empty grid");
    if (grid.covariate_dim() != theta.layout().covariates) {
        throw std::invalid_argument("simulate_series: covariate dimension differs from theta");
    }
    SubjectSeries out = grid;
    fill_counts(out, to_natural(theta), rng);
    return out;
}

}  // namespace hcthmm
