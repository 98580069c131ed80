#include "hcthmm/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace hcthmm {

namespace {

std::string subject_label(const SubjectSeries& s) {
    return s.subject_id.empty() ? std::string("<unnamed>") : s.subject_id;
}

void check_block(const ThetaSubject& theta, Block block, Eigen::Index expected) {
    if (theta.layout().block_size(block) != expected) {
        throw std::invalid_argument("theta block '" + std::string(block_name(block)) +
                                    "' has dimension " +
                                    std::to_string(theta.layout().block_size(block)) +
                                    ", expected " + std::to_string(expected));
    }
}

}  // namespace

void SubjectSeries::validate() const {
    const auto k = times.size();
    if (k == 0) {
        throw std::invalid_argument("subject " + subject_label(*this) + ": empty series");
    }
    if (counts.size() != k || static_cast<std::size_t>(covariates.rows()) != k) {
        throw std::invalid_argument("subject " + subject_label(*this) +
                                    ": times, counts and covariates differ in length");
    }
    for (std::size_t i = 0; i < k; ++i) {
        if (!std::isfinite(times[i])) {
            throw std::invalid_argument("subject " + subject_label(*this) + ": non-finite time at index " +
                                        std::to_string(i));
        }
        if (i > 0 && !(times[i] > times[i - 1])) {
            throw std::invalid_argument("subject " + subject_label(*this) +
                                        ": times not strictly increasing at index " + std::to_string(i));
        }
        if (counts[i] < 0) {
            throw std::invalid_argument("subject " + subject_label(*this) + ": negative count at index " +
                                        std::to_string(i));
        }
    }
    if (!covariates.allFinite()) {
        throw std::invalid_argument("subject " + subject_label(*this) + ": non-finite covariate");
    }
    if (group_id < 1) {
        throw std::invalid_argument("subject " + subject_label(*this) + ": group id must be >= 1");
    }
}

std::string_view block_name(Block block) {
    switch (block) {
        case Block::InitialProbs: return "initial";
        case Block::Rates: return "rates";
        case Block::Intercepts: return "intercepts";
        case Block::Slopes: return "slopes";
    }
    return "?";
}

Eigen::Index ThetaLayout::block_size(Block block) const {
    const Eigen::Index m = states;
    switch (block) {
        case Block::InitialProbs: return m - 1;
        case Block::Rates: return m * (m - 1);
        case Block::Intercepts: return m + 1;
        case Block::Slopes: return Eigen::Index(covariates) * (m + 1);
    }
    return 0;
}

Segment ThetaLayout::segment(Block block) const {
    Eigen::Index offset = 0;
    for (Block b : kAllBlocks) {
        if (b == block) return {offset, block_size(b)};
        offset += block_size(b);
    }
    return {};
}

Eigen::Index ThetaLayout::rate_index(int from, int to) const {
    return Eigen::Index(from) * (states - 1) + (to < from ? to : to - 1);
}

ThetaSubject::ThetaSubject(ThetaLayout layout) : layout_(layout), values_(Vector::Zero(layout.size())) {
    if (layout.states < 2 || layout.covariates < 0) {
        throw std::invalid_argument("theta layout needs at least 2 states and q >= 0");
    }
}

ThetaSubject::ThetaSubject(ThetaLayout layout, Vector values) : layout_(layout), values_(std::move(values)) {
    if (layout.states < 2 || layout.covariates < 0) {
        throw std::invalid_argument("theta layout needs at least 2 states and q >= 0");
    }
    if (values_.size() != layout.size()) {
        throw std::invalid_argument("theta has dimension " + std::to_string(values_.size()) + ", layout expects " +
                                    std::to_string(layout.size()));
    }
}

NaturalParams to_natural(const ThetaSubject& theta, int states, int covariates) {
    const ThetaLayout expected{states, covariates};
    for (Block b : kAllBlocks) check_block(theta, b, expected.block_size(b));
    if (theta.size() != expected.size()) {
        throw std::invalid_argument("theta dimension does not match (M, q)");
    }
    if (!theta.values().allFinite()) {
        throw std::invalid_argument("theta has non-finite entries");
    }
    return to_natural(theta);
}

NaturalParams to_natural(const ThetaSubject& theta) {
    const auto& lay = theta.layout();
    const int m = lay.states;
    const int q = lay.covariates;

    NaturalParams out;
    // softmax over [a, 0]
    const auto a = theta.block(Block::InitialProbs);
    const double top = std::max(0.0, m > 1 ? a.maxCoeff() : 0.0);
    Vector w(m);
    for (int s = 0; s < m - 1; ++s) w(s) = std::exp(a(s) - top);
    w(m - 1) = std::exp(-top);
    out.pi = w / w.sum();

    const auto c = theta.block(Block::Rates);
    Matrix off = Matrix::Zero(m, m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            if (i != j) off(i, j) = std::exp(c(lay.rate_index(i, j)));
        }
    }
    out.rates = RateMatrix::from_off_diagonal(off);

    const auto b0 = theta.block(Block::Intercepts);
    const auto b1 = theta.block(Block::Slopes);
    auto& e = out.emission;
    e.delta_intercept = b0(0);
    e.lambda_intercepts = b0.tail(m);
    e.delta_slope = b1.head(q);
    e.lambda_slopes.resize(m, q);
    for (int s = 0; s < m; ++s) {
        e.lambda_slopes.row(s) = b1.segment(Eigen::Index(s + 1) * q, q).transpose();
    }
    return out;
}

ThetaSubject from_natural(const NaturalParams& params) {
    const int m = params.states();
    const int q = params.emission.covariates();
    if (m < 2) throw std::invalid_argument("from_natural: need at least 2 states");
    if (params.rates.states() != m || params.emission.states() != m) {
        throw std::invalid_argument("from_natural: pi, Q and emission coefficients disagree on M");
    }
    if (std::abs(params.pi.sum() - 1.0) > 1e-10) {
        throw std::domain_error("from_natural: initial probabilities do not sum to one");
    }
    for (int s = 0; s < m; ++s) {
        if (!(params.pi(s) > 0.0)) {
            throw std::domain_error("from_natural: initial probability of state " + std::to_string(s) +
                                    " is on the boundary");
        }
    }

    ThetaSubject theta(ThetaLayout{m, q});
    const auto& lay = theta.layout();
    auto a = theta.block(Block::InitialProbs);
    const double ref = std::log(params.pi(m - 1));
    for (int s = 0; s < m - 1; ++s) a(s) = std::log(params.pi(s)) - ref;

    auto c = theta.block(Block::Rates);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            if (i == j) continue;
            const double r = params.rates(i, j);
            if (!(r > 0.0)) {
                throw std::domain_error("from_natural: rate q(" + std::to_string(i) + "," + std::to_string(j) +
                                        ") is zero");
            }
            c(lay.rate_index(i, j)) = std::log(r);
        }
    }

    params.emission.validate();
    auto b0 = theta.block(Block::Intercepts);
    auto b1 = theta.block(Block::Slopes);
    b0(0) = params.emission.delta_intercept;
    b0.tail(m) = params.emission.lambda_intercepts;
    b1.head(q) = params.emission.delta_slope;
    for (int s = 0; s < m; ++s) {
        b1.segment(Eigen::Index(s + 1) * q, q) = params.emission.lambda_slopes.row(s).transpose();
    }
    return theta;
}

ThetaSubject permute_states(const ThetaSubject& theta, std::span<const int> perm) {
    const auto& lay = theta.layout();
    const int m = lay.states;
    const int q = lay.covariates;
    if (static_cast<int>(perm.size()) != m) throw std::invalid_argument("permutation has wrong length");
    std::vector<int> seen(m, 0);
    for (int p : perm) {
        if (p < 0 || p >= m || seen[p]++) throw std::invalid_argument("not a permutation");
    }
    if (perm[0] != 0) throw std::invalid_argument("the zero-inflated state cannot be relabelled");

    ThetaSubject out(lay);
    // logits relative to the last state
    Vector logits(m);
    logits.head(m - 1) = theta.block(Block::InitialProbs);
    logits(m - 1) = 0.0;
    auto a = out.block(Block::InitialProbs);
    for (int s = 0; s < m - 1; ++s) a(s) = logits(perm[s]) - logits(perm[m - 1]);

    const auto c_in = theta.block(Block::Rates);
    auto c = out.block(Block::Rates);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            if (i != j) c(lay.rate_index(i, j)) = c_in(lay.rate_index(perm[i], perm[j]));
        }
    }

    const auto b0_in = theta.block(Block::Intercepts);
    const auto b1_in = theta.block(Block::Slopes);
    auto b0 = out.block(Block::Intercepts);
    auto b1 = out.block(Block::Slopes);
    b0(0) = b0_in(0);
    b1.head(q) = b1_in.head(q);
    for (int s = 0; s < m; ++s) {
        b0(s + 1) = b0_in(perm[s] + 1);
        b1.segment(Eigen::Index(s + 1) * q, q) = b1_in.segment(Eigen::Index(perm[s] + 1) * q, q);
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string_view level_name(Level level) {
    switch (level) {
        case Level::Subject: return "subject";
        case Level::Subgroup: return "subgroup";
        case Level::Population: return "population";
    }
    return "?";
}

Level parse_level(std::string_view name) {
    if (name == "subject") return Level::Subject;
    if (name == "subgroup") return Level::Subgroup;
    if (name == "population") return Level::Population;
    throw std::invalid_argument("unknown hierarchy level '" + std::string(name) + "'");
}

std::string_view preset_name(HierarchyPreset preset) {
    switch (preset) {
        case HierarchyPreset::TypeI: return "I";
        case HierarchyPreset::TypeII: return "II";
        case HierarchyPreset::TypeIII: return "III";
        case HierarchyPreset::TypeIV: return "IV";
    }
    return "?";
}

HierarchyPreset parse_preset(std::string_view name) {
    if (name == "I") return HierarchyPreset::TypeI;
    if (name == "II") return HierarchyPreset::TypeII;
    if (name == "III") return HierarchyPreset::TypeIII;
    if (name == "IV") return HierarchyPreset::TypeIV;
    throw std::invalid_argument("unknown hierarchy type '" + std::string(name) + "'");
}

Level BlockLevels::operator[](Block block) const {
    switch (block) {
        case Block::InitialProbs: return initial;
        case Block::Rates: return rates;
        case Block::Intercepts: return intercepts;
        case Block::Slopes: return slopes;
    }
    return Level::Subject;
}

BlockLevels BlockLevels::from_preset(HierarchyPreset preset) {
    switch (preset) {
        case HierarchyPreset::TypeI:
            return {Level::Subject, Level::Subject, Level::Subject, Level::Subject};
        case HierarchyPreset::TypeII:
            return {Level::Subject, Level::Subject, Level::Subject, Level::Population};
        case HierarchyPreset::TypeIII:
            return {Level::Subgroup, Level::Subgroup, Level::Subject, Level::Population};
        case HierarchyPreset::TypeIV:
            return {Level::Subgroup, Level::Subgroup, Level::Subject, Level::Subgroup};
    }
    return {};
}

HierarchySpec HierarchySpec::for_data(std::span<const SubjectSeries> data, BlockLevels levels, int states,
                                      int n_groups) {
    if (data.empty()) throw std::invalid_argument("hierarchy needs at least one subject");
    HierarchySpec spec;
    spec.levels = levels;
    spec.states = states;
    spec.covariates = data.front().covariate_dim();
    int max_group = 0;
    for (const auto& s : data) {
        if (s.covariate_dim() != spec.covariates) {
            throw std::invalid_argument("subject " + s.subject_id + " has covariate dimension " +
                                        std::to_string(s.covariate_dim()) + ", expected " +
                                        std::to_string(spec.covariates));
        }
        spec.groups.push_back(s.group_id);
        max_group = std::max(max_group, s.group_id);
    }
    spec.n_groups = n_groups > 0 ? n_groups : max_group;
    return spec;
}

Eigen::Index ConstraintSystem::constrained_dim() const {
    Eigen::Index total = 0;
    for (const auto& l : links) total += static_cast<Eigen::Index>(l.size());
    return total;
}

Matrix ConstraintSystem::selector_a(std::size_t subject) const {
    const auto& l = links.at(subject);
    Matrix a = Matrix::Zero(static_cast<Eigen::Index>(l.size()), theta_dim);
    for (std::size_t r = 0; r < l.size(); ++r) a(static_cast<Eigen::Index>(r), l[r].theta_index) = 1.0;
    return a;
}

Matrix ConstraintSystem::selector_b(std::size_t subject) const {
    const auto& l = links.at(subject);
    Matrix b = Matrix::Zero(static_cast<Eigen::Index>(l.size()), z_dim);
    for (std::size_t r = 0; r < l.size(); ++r) b(static_cast<Eigen::Index>(r), l[r].z_index) = 1.0;
    return b;
}

Vector ConstraintSystem::residual(std::size_t subject, const Vector& theta, const Vector& z) const {
    const auto& l = links.at(subject);
    Vector r(static_cast<Eigen::Index>(l.size()));
    for (std::size_t k = 0; k < l.size(); ++k) {
        r(static_cast<Eigen::Index>(k)) = theta(l[k].theta_index) - z(l[k].z_index);
    }
    return r;
}

Vector ConstraintSystem::consensus(std::span<const ThetaSubject> thetas) const {
    if (thetas.size() != links.size()) throw std::invalid_argument("consensus: subject count mismatch");
    Vector z = Vector::Zero(z_dim);
    for (std::size_t i = 0; i < links.size(); ++i) {
        for (const auto& lk : links[i]) z(lk.z_index) += thetas[i].values()(lk.theta_index);
    }
    for (Eigen::Index j = 0; j < z_dim; ++j) {
        if (sharers[j] > 0) z(j) /= sharers[j];
    }
    return z;
}

void ConstraintSystem::project(std::size_t subject, Vector& theta, const Vector& z) const {
    for (const auto& lk : links.at(subject)) theta(lk.theta_index) = z(lk.z_index);
}

ConstraintSystem build_constraints(const HierarchySpec& spec) {
    if (spec.groups.empty()) throw std::invalid_argument("build_constraints: no subjects");
    if (spec.n_groups < 1) throw std::invalid_argument("build_constraints: need at least one group");
    const ThetaLayout lay = spec.layout();

    ConstraintSystem sys;
    sys.theta_dim = lay.size();
    sys.links.resize(spec.groups.size());

    for (std::size_t i = 0; i < spec.groups.size(); ++i) {
        const int g = spec.groups[i];
        if (g < 1 || g > spec.n_groups) {
            throw std::invalid_argument("subject " + std::to_string(i) + " has unknown group id " +
                                        std::to_string(g) + " (J = " + std::to_string(spec.n_groups) + ")");
        }
    }

    Eigen::Index z_offset = 0;
    for (Block b : kAllBlocks) {
        const Level level = spec.levels[b];
        if (level == Level::Subject) continue;
        const Segment seg = lay.segment(b);
        for (std::size_t i = 0; i < spec.groups.size(); ++i) {
            const Eigen::Index base =
                z_offset + (level == Level::Subgroup ? Eigen::Index(spec.groups[i] - 1) * seg.size : 0);
            for (Eigen::Index e = 0; e < seg.size; ++e) {
                sys.links[i].push_back({seg.offset + e, base + e});
            }
        }
        z_offset += seg.size * (level == Level::Subgroup ? spec.n_groups : 1);
    }
    sys.z_dim = z_offset;
    sys.sharers.assign(static_cast<std::size_t>(sys.z_dim), 0);
    for (const auto& l : sys.links) {
        for (const auto& lk : l) ++sys.sharers[static_cast<std::size_t>(lk.z_index)];
    }
    // Constrained entries are listed in theta order for every subject.
    for (auto& l : sys.links) {
        std::sort(l.begin(), l.end(), [](const ConstraintLink& x, const ConstraintLink& y) {
            return x.theta_index < y.theta_index;
        });
    }
    return sys;
}

long free_parameter_count(const HierarchySpec& spec) {
    const ThetaLayout lay = spec.layout();
    const std::set<int> used(spec.groups.begin(), spec.groups.end());
    long total = 0;
    for (Block b : kAllBlocks) {
        const long size = static_cast<long>(lay.block_size(b));
        switch (spec.levels[b]) {
            case Level::Subject: total += size * static_cast<long>(spec.groups.size()); break;
            case Level::Subgroup: total += size * static_cast<long>(used.size()); break;
            case Level::Population: total += spec.groups.empty() ? 0 : size; break;
        }
    }
    return total;
}

}  // namespace hcthmm
