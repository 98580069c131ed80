#include "hcthmm/ctmc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hcthmm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

RateMatrix::RateMatrix(MatrixXd q) : q_(std::move(q)) {
    if (q_.rows() != q_.cols() || q_.rows() < 1) {
        throw std::invalid_argument("rate matrix must be square and non-empty");
    }
    if (!q_.allFinite()) throw std::invalid_argument("rate matrix has non-finite entries");
    for (Eigen::Index i = 0; i < q_.rows(); ++i) {
        double scale = 1.0;
        for (Eigen::Index j = 0; j < q_.cols(); ++j) {
            if (i != j && q_(i, j) < 0.0) {
                throw std::invalid_argument("rate matrix has a negative off-diagonal at (" + std::to_string(i) +
                                            "," + std::to_string(j) + ")");
            }
            scale = std::max(scale, std::abs(q_(i, j)));
        }
        if (std::abs(q_.row(i).sum()) > 1e-12 * scale) {
            throw std::invalid_argument("rate matrix row " + std::to_string(i) + " does not sum to zero");
        }
    }
}

RateMatrix RateMatrix::from_off_diagonal(const MatrixXd& rates) {
    MatrixXd q = rates;
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        q(i, i) = 0.0;
        q(i, i) = -q.row(i).sum();
    }
    return RateMatrix(std::move(q));
}

namespace {

// Higham (2005) Pade coefficients and switching thresholds.
constexpr std::array<double, 4> kPade3{120.0, 60.0, 12.0, 1.0};
constexpr std::array<double, 6> kPade5{30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
constexpr std::array<double, 8> kPade7{17297280.0, 8648640.0, 1995840.0, 277200.0,
                                       25200.0,    1512.0,    56.0,      1.0};
constexpr std::array<double, 10> kPade9{17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
                                        2162160.0,     110880.0,     3960.0,       90.0,        1.0};
constexpr std::array<double, 14> kPade13{64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                         1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                         670442572800.0,      33522128640.0,       1323241920.0,
                                         40840800.0,          960960.0,            16380.0,
                                         182.0,               1.0};
constexpr double kTheta3 = 1.495585217958292e-2;
constexpr double kTheta5 = 2.539398330063230e-1;
constexpr double kTheta7 = 9.504178996162932e-1;
constexpr double kTheta9 = 2.097847961257068e0;
constexpr double kTheta13 = 5.371920351148152e0;

template <std::size_t N>
MatrixXd pade_low(const MatrixXd& a, const std::array<double, N>& b) {
    const auto n = a.rows();
    const MatrixXd ident = MatrixXd::Identity(n, n);
    const MatrixXd a2 = a * a;
    MatrixXd power = ident;
    MatrixXd u_inner = MatrixXd::Zero(n, n);
    MatrixXd v = MatrixXd::Zero(n, n);
    for (std::size_t k = 0; k < N; k += 2) {
        v += b[k] * power;
        u_inner += b[k + 1] * power;
        power = power * a2;
    }
    const MatrixXd u = a * u_inner;
    return (v - u).partialPivLu().solve(v + u);
}

MatrixXd pade13(const MatrixXd& a) {
    const auto& b = kPade13;
    const auto n = a.rows();
    const MatrixXd ident = MatrixXd::Identity(n, n);
    const MatrixXd a2 = a * a;
    const MatrixXd a4 = a2 * a2;
    const MatrixXd a6 = a4 * a2;
    const MatrixXd u =
        a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident);
    const MatrixXd v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;
    return (v - u).partialPivLu().solve(v + u);
}

double one_norm(const MatrixXd& a) { return a.cwiseAbs().colwise().sum().maxCoeff(); }

}  // namespace

MatrixXd expm(const MatrixXd& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("expm: matrix must be square");
    if (!a.allFinite()) throw std::invalid_argument("expm: non-finite entries");
    if (a.rows() == 0) return a;

    const double norm = one_norm(a);
    if (norm <= kTheta3) return pade_low(a, kPade3);
    if (norm <= kTheta5) return pade_low(a, kPade5);
    if (norm <= kTheta7) return pade_low(a, kPade7);
    if (norm <= kTheta9) return pade_low(a, kPade9);

    const int s = std::max(0, static_cast<int>(std::ceil(std::log2(norm / kTheta13))));
    MatrixXd r = pade13(a / std::ldexp(1.0, s));
    for (int k = 0; k < s; ++k) r = r * r;
    return r;
}

MatrixXd expm_frechet(const MatrixXd& a, const MatrixXd& e) {
    if (a.rows() != a.cols() || e.rows() != a.rows() || e.cols() != a.cols()) {
        throw std::invalid_argument("expm_frechet: dimension mismatch");
    }
    const auto n = a.rows();
    MatrixXd big = MatrixXd::Zero(2 * n, 2 * n);
    big.topLeftCorner(n, n) = a;
    big.topRightCorner(n, n) = e;
    big.bottomRightCorner(n, n) = a;
    return expm(big).topRightCorner(n, n);
}

MatrixXd transition_matrix(const RateMatrix& q, double dt) {
    if (!std::isfinite(dt) || dt <= 0.0) {
        throw std::invalid_argument("transition_matrix: dt must be positive and finite, got " + std::to_string(dt));
    }
    MatrixXd p = expm(dt * q.matrix());
    return p.cwiseMax(0.0).cwiseMin(1.0);
}

VectorXd stationary_distribution(const RateMatrix& q) {
    const int m = q.states();
    // Irreducibility: every state reaches every other through positive rates.
    const auto reach_all = [&](bool transpose) {
        std::vector<char> seen(m, 0);
        std::vector<int> stack{0};
        seen[0] = 1;
        while (!stack.empty()) {
            const int i = stack.back();
            stack.pop_back();
            for (int j = 0; j < m; ++j) {
                const double r = transpose ? q(j, i) : q(i, j);
                if (j != i && r > 0.0 && !seen[j]) {
                    seen[j] = 1;
                    stack.push_back(j);
                }
            }
        }
        return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
    };
    if (!reach_all(false) || !reach_all(true)) {
        throw std::domain_error("stationary_distribution: generator is reducible");
    }

    MatrixXd aug(m + 1, m);
    aug.topRows(m) = q.matrix().transpose();
    aug.row(m).setOnes();
    VectorXd rhs = VectorXd::Zero(m + 1);
    rhs(m) = 1.0;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(aug);
    if (qr.rank() < m) throw std::domain_error("stationary_distribution: augmented system is rank deficient");
    VectorXd pi = qr.solve(rhs);
    pi = pi.cwiseMax(0.0);
    return pi / pi.sum();
}

TransitionCache::TransitionCache(const RateMatrix& q, double floor) : q_(q.matrix()), floor_(floor) {}

const MatrixXd& TransitionCache::get(double dt) {
    auto it = cache_.find(dt);
    if (it != cache_.end()) return it->second;
    if (!std::isfinite(dt) || dt <= 0.0) {
        throw std::invalid_argument("transition_matrix: dt must be positive and finite, got " + std::to_string(dt));
    }
    MatrixXd p = expm(dt * q_).cwiseMin(1.0).cwiseMax(floor_);
    return cache_.emplace(dt, std::move(p)).first->second;
}

int PiecewiseConstantPath::state_at(double t) const {
    if (states.empty()) throw std::logic_error("empty path");
    auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
    if (it == jump_times.begin()) return states.front();
    return states[static_cast<std::size_t>(std::distance(jump_times.begin(), it) - 1)];
}

PiecewiseConstantPath sample_path(const RateMatrix& q, const VectorXd& pi0, double horizon, RandomSource& rng) {
    if (!(horizon > 0.0)) throw std::invalid_argument("sample_path: horizon must be positive");
    const int m = q.states();
    if (pi0.size() != m) throw std::invalid_argument("sample_path: pi0 has wrong length");

    std::discrete_distribution<int> initial(pi0.data(), pi0.data() + m);
    PiecewiseConstantPath path;
    path.horizon = horizon;
    int state = initial(rng);
    double t = 0.0;
    path.jump_times.push_back(0.0);
    path.states.push_back(state);

    std::vector<double> weights(static_cast<std::size_t>(m));
    while (true) {
        const double exit_rate = -q(state, state);
        if (exit_rate <= 0.0) break;  // absorbing
        t += std::exponential_distribution<double>(exit_rate)(rng);
        if (t >= horizon) break;
        for (int j = 0; j < m; ++j) weights[static_cast<std::size_t>(j)] = j == state ? 0.0 : q(state, j);
        state = std::discrete_distribution<int>(weights.begin(), weights.end())(rng);
        path.jump_times.push_back(t);
        path.states.push_back(state);
    }
    return path;
}

}  // namespace hcthmm
