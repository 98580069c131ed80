#include <doctest.h>

#include <cmath>
#include <random>

#include "hcthmm/emissions.hpp"
#include "oracles.hpp"

using namespace hcthmm;
using Eigen::VectorXd;

namespace {

EmissionCoeffs coeffs(double delta_intercept, std::vector<double> log_means, int q = 0) {
    EmissionCoeffs c;
    c.delta_intercept = delta_intercept;
    c.delta_slope = VectorXd::Zero(q);
    c.lambda_intercepts = Eigen::Map<VectorXd>(log_means.data(), static_cast<Eigen::Index>(log_means.size()));
    c.lambda_slopes = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(log_means.size()), q);
    return c;
}

EmissionCoeffs random_coeffs(int m, int q, std::mt19937_64& rng, double max_log_mean) {
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> u(-2.0, max_log_mean);
    EmissionCoeffs c;
    c.delta_intercept = n01(rng);
    c.delta_slope = VectorXd(q);
    for (auto& v : c.delta_slope) v = 0.3 * n01(rng);
    c.lambda_intercepts = VectorXd(m);
    for (auto& v : c.lambda_intercepts) v = u(rng);
    c.lambda_slopes = Eigen::MatrixXd::Zero(m, q);
    return c;
}

}  // namespace

TEST_CASE("zero-inflated pmf at zero") {
    const auto c = coeffs(0.0, {std::log(2.0)});
    const VectorXd x(0);
    CHECK(std::abs(log_emission(0, x, 0, c) - std::log(0.5676676416183064)) <= 1e-15);
    CHECK(std::abs(std::exp(log_emission(0, x, 0, c)) - (0.5 + 0.5 * std::exp(-2.0))) <= 1e-15);
}

TEST_CASE("vanishing inflation reduces to Poisson") {
    const auto c = coeffs(-40.0, {std::log(3.5), std::log(3.5)});
    const VectorXd x(0);
    for (int y = 0; y <= 20; ++y) {
        const double poisson = static_cast<double>(oracle::poisson_pmf(y, 3.5L));
        CHECK(std::abs(std::exp(log_emission(y, x, 0, c)) - poisson) <= 1e-12);
        CHECK(std::abs(std::exp(log_emission(y, x, 1, c)) - poisson) <= 1e-12);
    }
}

TEST_CASE("log pmf agrees with the long double oracle") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> ys(0, 3000);
    std::bernoulli_distribution bit(0.5);
    for (int rep = 0; rep < 200; ++rep) {
        auto c = random_coeffs(3, 1, rng, std::log(1500.0));
        c.lambda_slopes(1, 0) = 0.2;
        VectorXd x(1);
        x(0) = bit(rng) ? 1.0 : 0.0;
        oracle::Decoded d;
        d.delta_intercept = c.delta_intercept;
        d.delta_slope = c.delta_slope.cast<long double>();
        d.lambda_intercepts = c.lambda_intercepts.cast<long double>();
        d.lambda_slopes = c.lambda_slopes.cast<long double>();
        const std::int64_t y = rep % 3 == 0 ? 0 : ys(rng);
        for (int s = 0; s < 3; ++s) {
            const long double ref = std::log(oracle::emission_pmf(d, y, x, s));
            if (!std::isfinite(static_cast<double>(ref))) continue;
            CHECK(std::abs(log_emission(y, x, s, c) - static_cast<double>(ref)) <= 1e-9 * std::max(1.0L, std::abs(ref)));
        }
    }
}

TEST_CASE("pmf sums to one") {
    std::mt19937_64 rng(19);
    const VectorXd x = VectorXd::Zero(1);
    for (int rep = 0; rep < 20; ++rep) {
        const auto c = random_coeffs(3, 1, rng, std::log(1500.0));
        for (int s = 0; s < 3; ++s) {
            long double total = 0;
            for (int y = 0; y <= 5000; ++y) total += std::exp(static_cast<long double>(log_emission(y, x, s, c)));
            CHECK(std::abs(static_cast<double>(total) - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("inflation adds mass at zero") {
    std::mt19937_64 rng(23);
    for (int rep = 0; rep < 100; ++rep) {
        const auto c = random_coeffs(2, 0, rng, 5.0);
        const double delta = 1.0 / (1.0 + std::exp(-c.delta_intercept));
        const double lambda = std::exp(c.lambda_intercepts(0));
        CHECK(std::exp(log_emission(0, VectorXd(0), 0, c)) >= (1 - delta) * std::exp(-lambda) * (1 - 1e-14));
    }
}

TEST_CASE("predictor partials match differences") {
    std::mt19937_64 rng(29);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_int_distribution<int> ys(0, 40);
    for (int rep = 0; rep < 200; ++rep) {
        const double de = n01(rng), le = 1.5 + n01(rng);
        const std::int64_t y = rep % 4 == 0 ? 0 : ys(rng);
        const bool zi = rep % 2 == 0;
        const double lf = log_factorial(y);
        const EmissionTerms t = emission_terms(y, de, le, zi, lf);
        const double h = 1e-6;
        const double dd = (emission_terms(y, de + h, le, zi, lf).log_prob - emission_terms(y, de - h, le, zi, lf).log_prob) / (2 * h);
        const double dl = (emission_terms(y, de, le + h, zi, lf).log_prob - emission_terms(y, de, le - h, zi, lf).log_prob) / (2 * h);
        CHECK(std::abs(t.d_delta_eta - dd) <= 1e-6 * std::max(1.0, std::abs(dd)));
        CHECK(std::abs(t.d_lambda_eta - dl) <= 1e-6 * std::max(1.0, std::abs(dl)));
        if (!zi) CHECK(t.d_delta_eta == 0.0);
    }
}

TEST_CASE("cached rows reproduce direct evaluation") {
    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 50; ++rep) {
        auto c = random_coeffs(3, 1, rng, 6.0);
        c.lambda_slopes.col(0).setConstant(-0.2);
        VectorXd x(1);
        x(0) = rep % 2;
        const EmissionRow row = emission_row(c, x);
        for (std::int64_t y : {0, 1, 7, 250}) {
            for (int s = 0; s < 3; ++s) {
                CHECK(std::abs(emission_terms(y, row, s, log_factorial(y)).log_prob - log_emission(y, x, s, c)) <= 1e-12);
            }
        }
    }
}

TEST_CASE("log factorial and log sigmoid") {
    for (std::int64_t y : {0, 1, 2, 10, 170, 1499, 1500, 100000}) {
        CHECK(log_factorial(y) == doctest::Approx(std::lgamma(static_cast<double>(y) + 1)).epsilon(1e-14));
    }
    CHECK(log_sigmoid(0.0) == doctest::Approx(std::log(0.5)));
    CHECK(log_sigmoid(800.0) == 0.0);
    CHECK(log_sigmoid(-800.0) == doctest::Approx(-800.0));
    CHECK(std::isfinite(log_sigmoid(-1e6)));
}

TEST_CASE("argument errors") {
    auto c = coeffs(0.0, {1.0, 2.0});
    CHECK_THROWS_AS(log_emission(-1, VectorXd(0), 0, c), std::invalid_argument);
    CHECK_THROWS_AS(log_emission(1, VectorXd(0), 2, c), std::invalid_argument);
    CHECK_THROWS_AS(log_emission(1, VectorXd(0), -1, c), std::invalid_argument);
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(sample_emission(VectorXd(0), 3, c, rng), std::invalid_argument);
    c.lambda_slopes = Eigen::MatrixXd::Zero(3, 0);
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = coeffs(NAN, {1.0});
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("sampling") {
    std::mt19937_64 rng(41);
    SUBCASE("certain inflation always yields zero") {
        const auto c = coeffs(40.0, {std::log(100.0)});
        for (int i = 0; i < 1000; ++i) CHECK(sample_emission(VectorXd(0), 0, c, rng) == 0);
    }
    SUBCASE("means and zero fraction") {
        auto c = coeffs(-0.5, {std::log(1.3), std::log(50.0), std::log(300.0)}, 1);
        c.lambda_slopes(2, 0) = -0.3;
        const int n = 100000;
        for (double xv : {0.0, 1.0}) {
            VectorXd x(1);
            x(0) = xv;
            for (int s = 0; s < 3; ++s) {
                double sum = 0, sum2 = 0;
                int zeros = 0;
                for (int i = 0; i < n; ++i) {
                    const auto y = static_cast<double>(sample_emission(x, s, c, rng));
                    sum += y;
                    sum2 += y * y;
                    zeros += y == 0;
                }
                const double mean = sum / n, var = sum2 / n - mean * mean;
                const double lambda = std::exp(c.lambda_eta(s, x));
                const double delta = s == 0 ? 1.0 / (1.0 + std::exp(0.5)) : 0.0;
                const double expected = (1 - delta) * lambda;
                CHECK(std::abs(mean - expected) <= 3.0 * std::sqrt(var / n));
                if (s == 0) {
                    const double p0 = delta + (1 - delta) * std::exp(-lambda);
                    CHECK(std::abs(zeros / double(n) - p0) <= 3.0 * std::sqrt(p0 * (1 - p0) / n));
                }
            }
        }
    }
}
