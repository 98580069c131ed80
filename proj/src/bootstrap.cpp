#include "hcthmm/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

#include "hcthmm/parallel.hpp"

namespace hcthmm {

std::vector<std::size_t> stratified_resample(std::span<const int> groups, int n_groups, RandomSource& rng) {
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(n_groups));
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const int g = groups[i];
        if (g < 1 || g > n_groups) throw std::invalid_argument("stratified_resample: unknown group " + std::to_string(g));
        members[static_cast<std::size_t>(g - 1)].push_back(i);
    }
    std::vector<std::size_t> out(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const auto& pool = members[static_cast<std::size_t>(groups[i] - 1)];
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        out[i] = pool[pick(rng)];
    }
    return out;
}

Matrix group_phi(std::span<const SubjectSeries> data, std::span<const ThetaSubject> thetas,
                 std::span<const int> groups, int n_groups) {
    if (data.size() != thetas.size()) throw std::invalid_argument("group_phi: size mismatch");
    std::vector<ForwardBackwardResult> fb;
    fb.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) fb.push_back(forward_backward(data[i], thetas[i]));
    return time_in_state(fb, groups, n_groups).phi;
}

double sample_quantile(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("sample_quantile: no values");
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("sample_quantile: p must lie in [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

struct Replicate {
    Matrix phi;
    Vector shared;
};

std::optional<Replicate> run_replicate(std::span<const SubjectSeries> data, const HierarchySpec& spec,
                                       const FitConfig& fit_config, const FitResult& base,
                                       const BootstrapConfig& config, const Resampler& resampler,
                                       RandomSource& rng) {
    for (int attempt = 0; attempt <= config.retry_budget; ++attempt) {
        const auto idx = resampler(spec.groups, spec.n_groups, rng);
        if (idx.size() != data.size()) throw std::invalid_argument("bootstrap: resampler changed the sample size");
        std::vector<SubjectSeries> sample;
        std::vector<ThetaSubject> start;
        HierarchySpec rspec = spec;
        sample.reserve(idx.size());
        start.reserve(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            sample.push_back(data[idx[i]]);
            start.push_back(base.theta_hat[idx[i]]);
            rspec.groups[i] = data[idx[i]].group_id;
        }
        for (int g = 1; g <= spec.n_groups; ++g) {
            if (std::count(rspec.groups.begin(), rspec.groups.end(), g) !=
                std::count(spec.groups.begin(), spec.groups.end(), g)) {
                throw std::invalid_argument("bootstrap: resample does not preserve group sizes");
            }
        }
        try {
            FitConfig fc = fit_config;
            fc.max_iter = config.max_iter;
            fc.workers = 1;
            const FitResult r = fit_from(sample, rspec, fc, std::move(start));
            return Replicate{group_phi(sample, r.theta_hat, rspec.groups, rspec.n_groups), r.z_hat};
        } catch (const std::exception&) {
            // fall through to a fresh resample
        }
    }
    return std::nullopt;
}

Vector column_sd(const std::vector<Vector>& rows, Eigen::Index dim) {
    Vector se = Vector::Zero(dim);
    if (rows.size() < 2) return se;
    Vector mean = Vector::Zero(dim);
    for (const auto& r : rows) mean += r;
    mean /= static_cast<double>(rows.size());
    for (const auto& r : rows) se += (r - mean).cwiseAbs2();
    return (se / static_cast<double>(rows.size() - 1)).cwiseSqrt();
}

void percentile_bounds(const std::vector<Vector>& rows, Eigen::Index dim, double level, Vector& lower, Vector& upper) {
    lower.resize(dim);
    upper.resize(dim);
    std::vector<double> col(rows.size());
    for (Eigen::Index j = 0; j < dim; ++j) {
        for (std::size_t b = 0; b < rows.size(); ++b) col[b] = rows[b](j);
        lower(j) = sample_quantile(col, 0.5 * (1.0 - level));
        upper(j) = sample_quantile(col, 0.5 * (1.0 + level));
    }
}

}  // namespace

BootstrapResult bootstrap(std::span<const SubjectSeries> data, const HierarchySpec& spec, const FitConfig& fit_config,
                          const FitResult& base, const BootstrapConfig& config, const Resampler& resampler) {
    if (config.replicates < 2) throw std::invalid_argument("bootstrap: need at least 2 replicates");
    for (double l : config.levels) {
        if (!(l > 0.0 && l < 1.0)) throw std::invalid_argument("bootstrap: levels must lie in (0, 1)");
    }
    if (base.theta_hat.size() != data.size()) throw std::invalid_argument("bootstrap: base fit does not match data");

    BootstrapResult out;
    out.levels = config.levels;
    out.phi_hat = group_phi(data, base.theta_hat, spec.groups, spec.n_groups);
    out.shared_hat = base.z_hat;

    const auto n_rep = static_cast<std::size_t>(config.replicates);
    std::vector<std::optional<Replicate>> reps(n_rep);
    parallel_for(n_rep, config.workers, [&](std::size_t b) {
        std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                          static_cast<std::uint32_t>(b), 0xb007u};
        RandomSource rng(seq);
        reps[b] = run_replicate(data, spec, fit_config, base, config, resampler, rng);
    });

    for (auto& r : reps) {
        if (!r) {
            ++out.n_failed;
            continue;
        }
        out.phi.push_back(std::move(r->phi));
        out.shared.push_back(std::move(r->shared));
    }
    out.n_replicates = static_cast<int>(out.phi.size());
    if (out.n_replicates < 2) {
        throw std::runtime_error("bootstrap: only " + std::to_string(out.n_replicates) + " of " +
                                 std::to_string(config.replicates) + " replicates succeeded");
    }

    const Eigen::Index j = out.phi_hat.rows();
    const Eigen::Index m = out.phi_hat.cols();
    std::vector<Vector> phi_rows;
    phi_rows.reserve(out.phi.size());
    for (const auto& p : out.phi) phi_rows.push_back(Eigen::Map<const Vector>(p.data(), p.size()));
    const Eigen::Index zd = out.shared_hat.size();

    const Vector phi_se = column_sd(phi_rows, j * m);
    out.phi_se = Eigen::Map<const Matrix>(phi_se.data(), j, m);
    out.shared_se = column_sd(out.shared, zd);
    for (double level : config.levels) {
        Vector lo, hi;
        percentile_bounds(phi_rows, j * m, level, lo, hi);
        out.phi_lower.push_back(Eigen::Map<const Matrix>(lo.data(), j, m));
        out.phi_upper.push_back(Eigen::Map<const Matrix>(hi.data(), j, m));
        percentile_bounds(out.shared, zd, level, lo, hi);
        out.shared_lower.push_back(lo);
        out.shared_upper.push_back(hi);
    }
    return out;
}

}  // namespace hcthmm
