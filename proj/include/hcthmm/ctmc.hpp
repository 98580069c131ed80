#pragma once

#include <cstdint>
#include <random>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace hcthmm {

using RandomSource = std::mt19937_64;

// Infinitesimal generator of a continuous-time Markov chain.
// Off-diagonals are non-negative and every row sums to zero.
class RateMatrix {
public:
    RateMatrix() = default;
    // Throws std::invalid_argument if the generator invariants fail.
    explicit RateMatrix(Eigen::MatrixXd q);

    // Builds a generator from off-diagonal rates; the diagonal is set to the
    // negative row sum.
    static RateMatrix from_off_diagonal(const Eigen::MatrixXd& rates);

    const Eigen::MatrixXd& matrix() const { return q_; }
    int states() const { return static_cast<int>(q_.rows()); }
    double operator()(int from, int to) const { return q_(from, to); }

private:
    Eigen::MatrixXd q_;
};

// e^A by scaling and squaring with Pade approximants up to degree 13.
Eigen::MatrixXd expm(const Eigen::MatrixXd& a);

// Frechet derivative of the exponential at A in direction E, i.e. the
// upper-right block of exp([[A, E], [0, A]]).
Eigen::MatrixXd expm_frechet(const Eigen::MatrixXd& a, const Eigen::MatrixXd& e);

// e^{dt Q}, with entries clamped into [0, 1]. Throws on non-finite input or dt <= 0.
Eigen::MatrixXd transition_matrix(const RateMatrix& q, double dt);

// Solves pi Q = 0, sum(pi) = 1. Throws std::domain_error for reducible Q.
Eigen::VectorXd stationary_distribution(const RateMatrix& q);

// Memoizes e^{dt Q} by dt for a single generator; one instance per worker.
class TransitionCache {
public:
    explicit TransitionCache(const RateMatrix& q, double floor = 0.0);

    const Eigen::MatrixXd& get(double dt);
    std::size_t size() const { return cache_.size(); }

private:
    Eigen::MatrixXd q_;
    double floor_;
    std::unordered_map<double, Eigen::MatrixXd> cache_;
};

// Right-continuous piecewise-constant trajectory on [0, horizon].
struct PiecewiseConstantPath {
    std::vector<double> jump_times;  // jump_times[0] == 0
    std::vector<int> states;         // state held from jump_times[j]
    double horizon = 0.0;

    int state_at(double t) const;
};

// Gillespie jump-chain simulation. States are 0-based.
PiecewiseConstantPath sample_path(const RateMatrix& q, const Eigen::VectorXd& pi0,
                                  double horizon, RandomSource& rng);

}  // namespace hcthmm
