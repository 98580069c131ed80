#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "hcthmm/inference.hpp"
#include "hcthmm/model.hpp"
#include "hcthmm/optimizer.hpp"

namespace hcthmm {

struct FitConfig {
    int states = 3;
    // Below about 1 some subjects' augmented subproblems lose convexity and
    // the iterates can cycle; adaptation never takes rho under min_rho.
    double rho = 2.0;
    double min_rho = 2.0;
    bool adaptive_rho = true;
    double balance_ratio = 10.0;  // adapt rho when one residual exceeds the other by this factor
    double rho_factor = 2.0;
    // When the primal residual has not halved over this many iterations the
    // iterates are taken to be cycling: rho and its floor both go up by
    // rho_factor. 0 disables the check.
    int stall_window = 20;
    double tol_abs = 1e-4;        // residual tolerance is tol_abs * sqrt(constrained entries)
    int max_iter = 500;
    double inner_tol = 1e-6;      // gradient tolerance per observation (scaled by K_i)
    int inner_max_iter = 500;
    int inner_retries = 2;
    // Measure constraint residuals in a curvature metric (mean Hessian of the
    // sharing subjects), so a single rho suits blocks whose curvatures differ
    // by orders of magnitude. Off: the plain Euclidean penalty.
    bool curvature_metric = true;
    int hessian_refresh = 5;      // outer iterations between curvature re-estimates
    int n_starts = 1;
    double jitter_sd = 0.1;
    std::uint64_t seed = 1;
    int workers = 0;  // 0: hardware concurrency
};

struct ResidualRecord {
    int iteration = 0;
    double primal = 0.0;
    double dual = 0.0;
    double rho = 0.0;
    double neg_loglik = 0.0;  // f at the theta iterate
};

struct AdmmState {
    std::vector<ThetaSubject> theta;
    Vector z;
    std::vector<Vector> xi;  // one multiplier per constrained entry of each subject
    double rho = 1.0;
    int iteration = 0;
    double primal_residual = std::numeric_limits<double>::infinity();
    double dual_residual = std::numeric_limits<double>::infinity();
};

struct FitResult {
    std::vector<ThetaSubject> theta_hat;  // constrained blocks equal z_hat exactly
    Vector z_hat;
    std::vector<Vector> xi;
    double neg_loglik = 0.0;
    int n_iterations = 0;
    std::vector<ResidualRecord> residual_history;
    bool converged = false;
    double bic = 0.0;
    double rho = 0.0;
    double tol_primal = 0.0;
    double tol_dual = 0.0;
    int start_index = 0;
};

// Consensus ADMM over the hierarchy constraints. Holds a view of the data,
// which must outlive the solver.
class AdmmSolver {
public:
    AdmmSolver(std::span<const SubjectSeries> data, const HierarchySpec& spec, FitConfig config,
               std::vector<ThetaSubject> initial);

    // One theta -> z -> xi sweep followed by the residual update.
    void step();
    bool converged() const;

    // Iterates to convergence or config.max_iter, then projects onto Dtheta = 0.
    FitResult run();
    FitResult result() const;

    const AdmmState& state() const { return state_; }
    // Penalty metric P_i over subject i's constrained entries (link order);
    // the penalty is xi_i^T r_i + (rho/2) r_i^T P_i r_i with r_i = A_i theta_i - B_i z.
    const Matrix& subject_metric(std::size_t i) const { return subject_metric_[i]; }
    const ConstraintSystem& constraints() const { return constraints_; }
    const FitConfig& config() const { return config_; }
    double tolerance() const { return tolerance_; }

    // L_rho at the given iterate (recomputes f).
    double augmented_lagrangian(std::span<const ThetaSubject> theta, const Vector& z,
                                std::span<const Vector> xi, double rho) const;

private:
    // z entries shared by exactly the same subjects; the metric is block
    // diagonal over these classes, which keeps the z-update a plain mean.
    struct SharingClass {
        std::vector<Eigen::Index> entries;
        std::vector<std::size_t> subjects;
        std::vector<std::vector<int>> links;  // per member subject, link index of each entry
        Matrix metric;
        Matrix metric_inverse;
    };

    void build_classes();
    void refresh_hessians();
    void update_metric();
    void update_theta();
    bool stalled() const;
    SmoothObjective subject_objective(std::size_t i, bool with_penalty) const;

    std::span<const SubjectSeries> data_;
    HierarchySpec spec_;
    FitConfig config_;
    ConstraintSystem constraints_;
    AdmmState state_;
    std::vector<double> subject_f_;
    std::vector<Matrix> hessian_;  // curvature of f_i, refreshed every hessian_refresh iterations
    std::vector<SharingClass> classes_;
    std::vector<Matrix> subject_metric_;
    std::vector<ResidualRecord> history_;
    double tolerance_ = 0.0;
    double rho_floor_ = 0.0;
    int last_rho_raise_ = 0;
};

// Deterministic data-driven starting point (see initialize.cpp).
std::vector<ThetaSubject> initialize(std::span<const SubjectSeries> data, const HierarchySpec& spec,
                                     const FitConfig& config);

// config.n_starts starting points: the deterministic one first, then
// Gaussian jitters of it with sd config.jitter_sd.
std::vector<std::vector<ThetaSubject>> initial_starts(std::span<const SubjectSeries> data,
                                                      const HierarchySpec& spec, const FitConfig& config,
                                                      RandomSource& rng);

// Multi-start fit; the lowest final f wins, ties go to the earlier start.
FitResult fit(std::span<const SubjectSeries> data, const HierarchySpec& spec, const FitConfig& config);

// Single ADMM run from the given starting point.
FitResult fit_from(std::span<const SubjectSeries> data, const HierarchySpec& spec, const FitConfig& config,
                   std::vector<ThetaSubject> initial);

// 2 f(theta_hat) + p_eff log(N), N = total observations.
double bic(const FitResult& fit, std::span<const SubjectSeries> data, const HierarchySpec& spec);

// Permutation ordering states by mean fitted log-mean intercept. The
// zero-inflated state keeps index 0.
std::vector<int> canonical_permutation(std::span<const ThetaSubject> thetas);

// Applies a state permutation to every subject and recomputes z.
void relabel(FitResult& fit, std::span<const int> perm, const ConstraintSystem& constraints);

}  // namespace hcthmm
