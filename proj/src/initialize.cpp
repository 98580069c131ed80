#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>

#include "hcthmm/admm.hpp"

namespace hcthmm {

namespace {

constexpr double kInitialRate = 0.1;

struct Cluster {
    double count_sum = 0.0;
    double n = 0.0;
};

// Optimal 1-D k-means of log(y) over the positive counts, solved exactly by
// dynamic programming over the distinct values. Returns clusters in
// ascending order; empty clusters only occur when there are fewer distinct
// values than clusters.
std::vector<Cluster> log_count_clusters(const std::vector<std::int64_t>& counts, int k) {
    std::map<std::int64_t, double> freq;
    for (const auto y : counts) {
        if (y > 0) freq[y] += 1.0;
    }
    const auto d = static_cast<int>(freq.size());
    std::vector<double> x, w, raw;
    for (const auto& [y, n] : freq) {
        x.push_back(std::log(static_cast<double>(y)));
        w.push_back(n);
        raw.push_back(static_cast<double>(y));
    }
    // prefix sums for the within-cluster sum of squares of x[i..j]
    std::vector<double> sw(d + 1, 0.0), sx(d + 1, 0.0), sxx(d + 1, 0.0);
    for (int i = 0; i < d; ++i) {
        sw[i + 1] = sw[i] + w[i];
        sx[i + 1] = sx[i] + w[i] * x[i];
        sxx[i + 1] = sxx[i] + w[i] * x[i] * x[i];
    }
    const auto cost = [&](int i, int j) {  // inclusive range
        const double ww = sw[j + 1] - sw[i];
        const double s = sx[j + 1] - sx[i];
        return sxx[j + 1] - sxx[i] - s * s / ww;
    };

    const int used = std::min(k, d);
    std::vector<Cluster> out(static_cast<std::size_t>(k));
    if (used == 0) return out;
    const double inf = std::numeric_limits<double>::infinity();
    // best[c][j]: optimal cost of x[0..j] in c+1 clusters; cut[c][j]: first index of the last cluster
    std::vector<std::vector<double>> best(used, std::vector<double>(d, inf));
    std::vector<std::vector<int>> cut(used, std::vector<int>(d, 0));
    for (int j = 0; j < d; ++j) best[0][j] = cost(0, j);
    for (int c = 1; c < used; ++c) {
        for (int j = c; j < d; ++j) {
            for (int i = c; i <= j; ++i) {
                const double v = best[c - 1][i - 1] + cost(i, j);
                if (v < best[c][j]) {
                    best[c][j] = v;
                    cut[c][j] = i;
                }
            }
        }
    }
    int hi = d - 1;
    for (int c = used - 1; c >= 0; --c) {
        const int lo = c == 0 ? 0 : cut[c][hi];
        auto& cl = out[static_cast<std::size_t>(c)];
        for (int i = lo; i <= hi; ++i) {
            cl.count_sum += w[i] * raw[i];
            cl.n += w[i];
        }
        hi = lo - 1;
    }
    return out;
}

// Starting point for one subject. Positive counts are clustered into M
// groups whose means seed the state intensities; all zeros are attributed to
// the zero-inflated state, whose zero probability starts at the zero share of
// that state minus the Poisson zero probability.
ThetaSubject initial_theta(const SubjectSeries& series, const ThetaLayout& layout) {
    const int m = layout.states;
    ThetaSubject theta(layout);
    theta.block(Block::Rates).setConstant(std::log(kInitialRate));

    const auto clusters = log_count_clusters(series.counts, m);
    const auto zeros = static_cast<double>(std::count(series.counts.begin(), series.counts.end(), 0));

    Vector log_means(m);
    if (clusters.front().n == 0.0) {
        for (int s = 0; s < m; ++s) log_means(s) = std::log(static_cast<double>(s + 1));
    } else {
        for (int s = 0; s < m; ++s) {
            const auto& c = clusters[static_cast<std::size_t>(s)];
            log_means(s) = c.n > 0.0 ? std::log(c.count_sum / c.n) : log_means(s - 1);
        }
    }

    const double first = clusters.front().n;
    const double zero_share = zeros + first > 0.0 ? zeros / (zeros + first) : 0.0;
    const double delta = std::clamp(zero_share - std::exp(-std::exp(log_means(0))), 0.05, 0.95);

    auto b0 = theta.block(Block::Intercepts);
    b0(0) = std::log(delta / (1.0 - delta));
    b0.tail(m) = log_means;
    return theta;
}

}  // namespace

std::vector<ThetaSubject> initialize(std::span<const SubjectSeries> data, const HierarchySpec& spec,
                                     const FitConfig& config) {
    if (config.states != spec.states) throw std::invalid_argument("initialize: config.states differs from hierarchy");
    if (data.size() != spec.n_subjects()) throw std::invalid_argument("initialize: hierarchy does not match the data");
    const ThetaLayout layout = spec.layout();
    std::vector<ThetaSubject> out;
    out.reserve(data.size());
    for (const auto& s : data) {
        if (s.covariate_dim() != layout.covariates) {
            throw std::invalid_argument("initialize: subject " + s.subject_id + " has the wrong covariate dimension");
        }
        out.push_back(initial_theta(s, layout));
    }
    // Start on the constraint set.
    const ConstraintSystem cs = build_constraints(spec);
    const Vector z = cs.consensus(out);
    for (std::size_t i = 0; i < out.size(); ++i) cs.project(i, out[i].values(), z);
    return out;
}

std::vector<std::vector<ThetaSubject>> initial_starts(std::span<const SubjectSeries> data,
                                                      const HierarchySpec& spec, const FitConfig& config,
                                                      RandomSource& rng) {
    if (config.n_starts < 1) throw std::invalid_argument("initial_starts: n_starts must be at least 1");
    const auto base = initialize(data, spec, config);
    const ConstraintSystem cs = build_constraints(spec);
    std::vector<std::vector<ThetaSubject>> starts{base};
    std::normal_distribution<double> noise(0.0, config.jitter_sd);
    for (int s = 1; s < config.n_starts; ++s) {
        auto start = base;
        for (auto& t : start) {
            for (Eigen::Index j = 0; j < t.size(); ++j) t.values()(j) += noise(rng);
        }
        const Vector z = cs.consensus(start);
        for (std::size_t i = 0; i < start.size(); ++i) cs.project(i, start[i].values(), z);
        starts.push_back(std::move(start));
    }
    return starts;
}

}  // namespace hcthmm
