#include "hcthmm/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <ceres/gradient_problem.h>
#include <glog/logging.h>
#include <ceres/gradient_problem_solver.h>

namespace hcthmm {

namespace {

// Evaluates f(origin + T u) and T^T grad.
class ObjectiveAdapter final : public ceres::FirstOrderFunction {
public:
    ObjectiveAdapter(const SmoothObjective& f, const Eigen::VectorXd& origin, const Eigen::MatrixXd* transform)
        : f_(f), origin_(origin), transform_(transform), n_(static_cast<int>(origin.size())) {}

    Eigen::VectorXd to_x(const Eigen::Map<const Eigen::VectorXd>& u) const {
        if (!transform_) return u;
        return origin_ + *transform_ * u;
    }

    bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
        const Eigen::Map<const Eigen::VectorXd> u(parameters, n_);
        const Eigen::VectorXd x = to_x(u);
        Eigen::VectorXd g;
        try {
            *cost = f_(x, gradient ? &g : nullptr);
        } catch (const std::exception&) {
            return false;
        }
        if (!std::isfinite(*cost)) return false;
        if (gradient) {
            if (g.size() != n_ || !g.allFinite()) return false;
            Eigen::Map<Eigen::VectorXd> out(gradient, n_);
            if (transform_) {
                out.noalias() = transform_->transpose() * g;
            } else {
                out = g;
            }
        }
        return true;
    }

    int NumParameters() const override { return n_; }

private:
    const SmoothObjective& f_;
    Eigen::VectorXd origin_;
    const Eigen::MatrixXd* transform_;
    int n_;
};

}  // namespace

Eigen::MatrixXd fd_hessian(const SmoothObjective& objective, const Eigen::VectorXd& x) {
    const auto n = x.size();
    Eigen::VectorXd g0;
    objective(x, &g0);
    Eigen::MatrixXd h(n, n);
    Eigen::VectorXd xs = x;
    Eigen::VectorXd g;
    for (Eigen::Index j = 0; j < n; ++j) {
        const double step = 1e-5 * std::max(1.0, std::abs(x(j)));
        xs(j) = x(j) + step;
        objective(xs, &g);
        h.col(j) = (g - g0) / step;
        xs(j) = x(j);
    }
    if (!h.allFinite()) throw std::runtime_error("fd_hessian: non-finite curvature");
    return 0.5 * (h + h.transpose());
}

InnerResult minimize_lbfgs(const SmoothObjective& objective, const Eigen::VectorXd& x0, const InnerOptions& options) {
    // Ceres warns through glog on flat line-search interpolations; keep errors only.
    static const bool quiet = [] {
        FLAGS_minloglevel = google::GLOG_ERROR;
        return true;
    }();
    (void)quiet;
    const int n = static_cast<int>(x0.size());
    InnerResult out;
    out.x = x0;
    if (n == 0) {
        out.value = objective(x0, nullptr);
        out.converged = out.usable = std::isfinite(out.value);
        return out;
    }

    // Whitening transform T = V |L|^{-1/2}, so that T^T H T is close to the identity.
    Eigen::MatrixXd transform;
    double gradient_scale = 1.0;
    if (options.metric) {
        if (options.metric->rows() != n || options.metric->cols() != n) {
            throw std::invalid_argument("minimize_lbfgs: metric has the wrong size");
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(*options.metric);
        if (eig.info() != Eigen::Success) throw std::runtime_error("minimize_lbfgs: metric eigendecomposition failed");
        Eigen::VectorXd lam = eig.eigenvalues().cwiseAbs();
        const double top = std::max(lam.maxCoeff(), 1e-12);
        lam = lam.cwiseMax(1e-10 * top).cwiseMax(1e-12);
        transform = eig.eigenvectors() * lam.cwiseSqrt().cwiseInverse().asDiagonal();
        gradient_scale = 1.0 / std::sqrt(top * n);
    }
    const Eigen::MatrixXd* t = options.metric ? &transform : nullptr;

    ceres::GradientProblem problem(new ObjectiveAdapter(objective, x0, t));
    ceres::GradientProblemSolver::Options opts;
    opts.line_search_direction_type = ceres::LBFGS;
    opts.max_lbfgs_rank = options.lbfgs_rank;
    opts.max_num_iterations = options.max_iterations;
    opts.gradient_tolerance = options.gradient_tolerance * gradient_scale;
    opts.function_tolerance = 1e-16;
    opts.parameter_tolerance = 1e-16;
    opts.logging_type = ceres::SILENT;
    opts.minimizer_progress_to_stdout = false;

    // L-BFGS can stall on a stale curvature memory before reaching a tight
    // gradient tolerance; restart it from the last iterate while that helps.
    constexpr int kMaxRestarts = 3;
    Eigen::VectorXd u = t ? Eigen::VectorXd::Zero(n) : x0;
    Eigen::VectorXd x, g;
    double initial_cost = std::numeric_limits<double>::quiet_NaN();
    out.iterations = 0;
    for (int attempt = 0; attempt <= kMaxRestarts; ++attempt) {
        ceres::GradientProblemSolver::Summary summary;
        opts.max_num_iterations = std::max(1, options.max_iterations - out.iterations);
        ceres::Solve(opts, problem, u.data(), &summary);
        if (attempt == 0) initial_cost = summary.initial_cost;
        x = t ? Eigen::VectorXd(x0 + transform * u) : u;
        out.iterations += static_cast<int>(summary.iterations.size());
        out.message = summary.message;
        try {
            out.value = objective(x, &g);
            out.gradient_max_norm = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
        } catch (const std::exception& e) {
            out.value = std::numeric_limits<double>::infinity();
            out.message += std::string("; final evaluation failed: ") + e.what();
            break;
        }
        const bool stalled = summary.termination_type == ceres::CONVERGENCE && summary.iterations.size() > 1;
        if (out.gradient_max_norm <= options.gradient_tolerance || !stalled || out.iterations >= options.max_iterations) break;
    }
    out.x = std::move(x);
    out.usable = std::isfinite(out.value) && g.allFinite() &&
                 (!std::isfinite(initial_cost) || out.value <= initial_cost + 1e-12 * std::abs(initial_cost));
    out.converged = out.usable && out.gradient_max_norm <= options.gradient_tolerance;
    return out;
}

}  // namespace hcthmm
