#pragma once

#include <functional>
#include <string>

#include <Eigen/Dense>

namespace hcthmm {

// Smooth objective: returns f(x) and writes the gradient when grad != nullptr.
// May throw; a throwing evaluation is treated as an infeasible trial point.
using SmoothObjective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct InnerOptions {
    double gradient_tolerance = 1e-6;  // on the max-norm of the gradient
    int max_iterations = 500;
    int lbfgs_rank = 10;
    // Optional curvature estimate (symmetric, possibly indefinite). When set,
    // the search runs in coordinates whitened by its absolute eigenvalues.
    const Eigen::MatrixXd* metric = nullptr;
};

struct InnerResult {
    Eigen::VectorXd x;
    double value = 0.0;
    double gradient_max_norm = 0.0;
    int iterations = 0;
    bool converged = false;  // gradient tolerance reached
    bool usable = false;     // finite and no worse than the start
    std::string message;
};

// Forward-difference Hessian from the analytic gradient, symmetrized.
// Throws if the objective cannot be evaluated near x.
Eigen::MatrixXd fd_hessian(const SmoothObjective& objective, const Eigen::VectorXd& x);

// Limited-memory BFGS with a Wolfe line search.
InnerResult minimize_lbfgs(const SmoothObjective& objective, const Eigen::VectorXd& x0,
                           const InnerOptions& options);

}  // namespace hcthmm
