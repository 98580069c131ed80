#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "hcthmm/ctmc.hpp"
#include "hcthmm/emissions.hpp"

namespace hcthmm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// One subject's observed trajectory on an irregular time grid. Baseline
// characteristics are folded into the covariate rows.
struct SubjectSeries {
    std::string subject_id;
    int group_id = 1;                  // 1..J
    std::vector<double> times;         // strictly increasing, minutes
    std::vector<std::int64_t> counts;  // Y(T_k) >= 0
    Matrix covariates;                 // K x q, row k holds X(T_k)

    std::size_t size() const { return times.size(); }
    int covariate_dim() const { return static_cast<int>(covariates.cols()); }

    // Throws std::invalid_argument when an invariant is broken.
    void validate() const;
};

// The four parameter blocks of a subject vector, in storage order.
enum class Block { InitialProbs, Rates, Intercepts, Slopes };
inline constexpr std::array<Block, 4> kAllBlocks{Block::InitialProbs, Block::Rates,
                                                 Block::Intercepts, Block::Slopes};
std::string_view block_name(Block block);

struct Segment {
    Eigen::Index offset = 0;
    Eigen::Index size = 0;
};

// Dimensions of theta_i = [a, c, b0, b1] for M states and q covariates.
//   a  : M-1          multinomial-logit coordinates of pi (state M is reference)
//   c  : M(M-1)       log off-diagonal rates, row-major skipping the diagonal
//   b0 : M+1          [zero-odds intercept, log-mean intercept of states 1..M]
//   b1 : q(M+1)       slopes in the same emission order, q entries each
struct ThetaLayout {
    int states = 2;
    int covariates = 0;

    Eigen::Index block_size(Block block) const;
    Segment segment(Block block) const;
    Eigen::Index size() const { return Eigen::Index(states + 1) * (states + covariates); }

    // Position of q(from, to) inside c; from != to, both 0-based.
    Eigen::Index rate_index(int from, int to) const;

    bool operator==(const ThetaLayout&) const = default;
};

// Per-subject parameter vector in unconstrained coordinates.
class ThetaSubject {
public:
    ThetaSubject() = default;
    explicit ThetaSubject(ThetaLayout layout);
    ThetaSubject(ThetaLayout layout, Vector values);

    const ThetaLayout& layout() const { return layout_; }
    const Vector& values() const { return values_; }
    Vector& values() { return values_; }
    Eigen::Index size() const { return values_.size(); }

    Eigen::VectorBlock<const Vector> block(Block b) const {
        const auto s = layout_.segment(b);
        return values_.segment(s.offset, s.size);
    }
    Eigen::VectorBlock<Vector> block(Block b) {
        const auto s = layout_.segment(b);
        return values_.segment(s.offset, s.size);
    }

private:
    ThetaLayout layout_{};
    Vector values_;
};

// Natural-scale parameters of one subject.
struct NaturalParams {
    Vector pi;
    RateMatrix rates;
    EmissionCoeffs emission;

    int states() const { return static_cast<int>(pi.size()); }
};

// Maps unconstrained coordinates to the natural space (softmax / exp).
NaturalParams to_natural(const ThetaSubject& theta);
NaturalParams to_natural(const ThetaSubject& theta, int states, int covariates);

// Exact inverse of to_natural. Throws std::domain_error on boundary values
// (a zero probability or a zero off-diagonal rate).
ThetaSubject from_natural(const NaturalParams& params);

// Relabels latent states: new state s is old state perm[s]. perm[0] must be 0
// because zero inflation is attached to the first state.
ThetaSubject permute_states(const ThetaSubject& theta, std::span<const int> perm);

// ---------------------------------------------------------------------------
// Hierarchy and constraints
// ---------------------------------------------------------------------------

enum class Level { Subject, Subgroup, Population };
std::string_view level_name(Level level);
Level parse_level(std::string_view name);

enum class HierarchyPreset { TypeI, TypeII, TypeIII, TypeIV };
std::string_view preset_name(HierarchyPreset preset);
HierarchyPreset parse_preset(std::string_view name);

struct BlockLevels {
    Level initial = Level::Subject;
    Level rates = Level::Subject;
    Level intercepts = Level::Subject;
    Level slopes = Level::Subject;

    Level operator[](Block block) const;
    bool operator==(const BlockLevels&) const = default;

    static BlockLevels from_preset(HierarchyPreset preset);
};

// Which blocks are shared at which level, plus the subject-to-group map.
struct HierarchySpec {
    BlockLevels levels;
    std::vector<int> groups;  // group id (1..J) of each subject, data order
    int states = 2;
    int n_groups = 1;
    int covariates = 0;

    ThetaLayout layout() const { return {states, covariates}; }
    std::size_t n_subjects() const { return groups.size(); }

    static HierarchySpec for_data(std::span<const SubjectSeries> data, BlockLevels levels,
                                  int states, int n_groups = 0);
};

// One equality A_i theta_i = B_i z, expressed entrywise.
struct ConstraintLink {
    Eigen::Index theta_index;
    Eigen::Index z_index;
};

// Selector form of D theta = 0: subject i ties theta_i[link.theta_index] to
// z[link.z_index] for every link in links[i].
struct ConstraintSystem {
    Eigen::Index z_dim = 0;
    Eigen::Index theta_dim = 0;
    std::vector<std::vector<ConstraintLink>> links;
    std::vector<int> sharers;  // subjects tied to each z entry

    std::size_t n_subjects() const { return links.size(); }
    Eigen::Index constrained_dim() const;

    // Dense A_i (|links_i| x theta_dim) and B_i (|links_i| x z_dim).
    Matrix selector_a(std::size_t subject) const;
    Matrix selector_b(std::size_t subject) const;

    // A_i theta_i - B_i z.
    Vector residual(std::size_t subject, const Vector& theta, const Vector& z) const;

    // Averages the constrained entries of the given thetas into z.
    Vector consensus(std::span<const ThetaSubject> thetas) const;

    // Overwrites constrained entries of theta with their z values.
    void project(std::size_t subject, Vector& theta, const Vector& z) const;
};

ConstraintSystem build_constraints(const HierarchySpec& spec);

// Free parameters after sharing: subject blocks count n times, subgroup
// blocks once per non-empty group, population blocks once.
long free_parameter_count(const HierarchySpec& spec);

}  // namespace hcthmm
