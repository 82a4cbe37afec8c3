#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "kr/density.hpp"
#include "kr/map.hpp"

using namespace kr;

namespace {
constexpr double PI = 3.14159265358979323846;
}

TEST_CASE("make_density geometry") {
    auto gd = make_density(0.5, 0.0, 1.0 / 1000.0);
    CHECK(gd.sx == doctest::Approx(std::sqrt(1.0e-3 / (4.0 * PI))).epsilon(1e-14));
    CHECK(gd.sx == gd.sp);
    CHECK(gd.sx == doctest::Approx(0.00892062).epsilon(1e-5));
    CHECK(gd.footprint() == doctest::Approx(1.0e-3).epsilon(1e-13));
    CHECK_THROWS_AS(make_density(0.5, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("density factor: peak, periodicity, decay") {
    auto gd = make_density(0.3, 0.7, 1.0 / 1000.0);
    CHECK(density_factor(gd, 0.3, 0.7) == doctest::Approx(1.0).epsilon(1e-12));
    // same torus point expressed across the seam
    CHECK(density_factor(gd, 0.999, 0.7) ==
          doctest::Approx(density_factor(gd, -0.001, 0.7)).epsilon(1e-12));
    CHECK(density_factor(gd, 0.3 + 3.0 * gd.sx, 0.7) == doctest::Approx(std::exp(-4.5)).epsilon(1e-9));
    // far point: all images negligible
    CHECK(density_factor(gd, 0.8, 0.2) < 1e-200);
}

TEST_CASE("gaussian sampling moments and determinism") {
    auto gd = make_density(0.5, 0.0, 1.0 / 1000.0);
    const long long M = 1000000;
    auto pts = sample(gd, M, 11);
    double mx = 0, mp_ = 0;
    for (auto& z : pts) {
        mx += z.x;
        mp_ += z.p - std::round(z.p);  // p wraps around 0
    }
    mx /= M;
    mp_ /= M;
    double se = gd.sx / std::sqrt(static_cast<double>(M));
    CHECK(std::abs(mx - 0.5) < 5.0 * se);
    CHECK(std::abs(mp_ - 0.0) < 5.0 * se);
    double vx = 0, vp = 0;
    for (auto& z : pts) {
        double dx = z.x - mx, dp = z.p - std::round(z.p) - mp_;
        vx += dx * dx;
        vp += dp * dp;
    }
    CHECK(vx / M == doctest::Approx(gd.sx * gd.sx).epsilon(0.01));
    CHECK(vp / M == doctest::Approx(gd.sp * gd.sp).epsilon(0.01));

    auto again = sample(gd, 1000, 11);
    CHECK(again[999].x == pts[999].x);
    CHECK(again[999].p == pts[999].p);

    auto tight = sample(make_density(0.25, 0.25, 4.0 * PI * 1e-16), 200, 3);
    for (auto& z : tight) {
        CHECK(std::abs(z.x - 0.25) < 1e-6);
        CHECK(std::abs(z.p - 0.25) < 1e-6);
    }
    CHECK_THROWS_AS(sample(gd, 0, 1), std::invalid_argument);
}

TEST_CASE("disk sampling stays inside the blob") {
    auto dd = make_disk(0.5, 0.0, 1.0 / 1000.0);
    CHECK(dd.radius == doctest::Approx(std::sqrt(1.0e-3 / PI)).epsilon(1e-14));
    auto pts = sample(dd, 20000, 5);
    for (auto& z : pts) {
        double dx = z.x - 0.5 - std::round(z.x - 0.5);
        double dp = z.p - 0.0 - std::round(z.p - 0.0);
        CHECK(dx * dx + dp * dp <= dd.radius * dd.radius * (1.0 + 1e-12));
    }
    auto again = sample(dd, 100, 5);
    CHECK(again[99].x == pts[99].x);
}

TEST_CASE("zero-perturbation echo is exact") {
    MapParams mp{10.0};
    auto gd = make_density(0.5, 0.0, 1.0 / 1000.0);
    auto curve = classical_fidelity(mp, 0.0, gd, 8, 5000, 9);
    for (auto& fp : curve) CHECK(fp.value == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(curve[0].value == 1.0);
    CHECK_THROWS_AS(classical_fidelity(mp, 0.0, gd, 2, 500, 9), std::invalid_argument);
}

TEST_CASE("echo overlap is leg-symmetric within sampling error") {
    auto gd = make_density(0.5, 0.0, 1.0 / 1000.0);
    auto fwd = classical_fidelity(MapParams{10.0}, 1e-4, gd, 4, 50000, 12);
    auto swp = classical_fidelity(MapParams{10.0 + 1e-4}, -1e-4, gd, 4, 50000, 12);
    CHECK(std::abs(fwd[4].value - swp[4].value) < 0.02);
    CHECK(std::abs(fwd[3].value - swp[3].value) < 0.01);
}

TEST_CASE("echo model closed form and horizon") {
    CHECK(classical_fidelity_model(1e-5, 1.599, 1.0, 0.0) == 1.0);
    CHECK(classical_fidelity_model(1e-5, 1.599, 1.0, 7.2) == doctest::Approx(0.3678).epsilon(2e-3));
    double prev = 1.0;
    for (double t = 0.5; t <= 10.0; t += 0.5) {
        double v = classical_fidelity_model(1e-5, 1.599, 1.0, t);
        CHECK(v <= prev);
        prev = v;
    }
    double mu = lyapunov_analytic(10.0);
    CHECK(predictability_time(1e-5, 1.0, mu) == doctest::Approx(7.1997).epsilon(1e-3));
    CHECK(predictability_time(1e-7, 1.0, mu) ==
          doctest::Approx(predictability_time(1e-5, 1.0, mu) + std::log(100.0) / mu).epsilon(1e-12));
    CHECK(predictability_time(0.999, 1.0, mu) < 1e-3);
    CHECK_THROWS_AS(predictability_time(2.0, 1.0, mu), std::invalid_argument);
}

TEST_CASE("fit recovers parameters of synthetic model data") {
    const double eps = 1e-5, mu = 1.5, alpha = 2.0;
    std::vector<FidelityPoint> curve;
    for (long long t = 0; t <= 12; ++t)
        curve.push_back({t, classical_fidelity_model(eps, mu, alpha, static_cast<double>(t)), 0.0});
    auto fit = fit_echo_model(curve, eps, mu, 4, 8);
    CHECK(fit.alpha == doctest::Approx(alpha).epsilon(0.01));
    CHECK(fit.mu_free == doctest::Approx(mu).epsilon(0.01));
    CHECK(fit.tau_r == doctest::Approx(std::log(1.0 / (alpha * eps)) / mu).epsilon(0.01));
    CHECK(fit.n_used >= 2);
    CHECK_THROWS_AS(fit_echo_model(curve, eps, mu, 0, 0), std::runtime_error);
}

TEST_CASE("measured echo: thresholds, rate, horizon") {
    MapParams mp{10.0};
    auto gd = make_density(0.5, 0.0, 1.0 / 1000.0);
    auto curve = classical_fidelity(mp, 1e-4, gd, 13, 100000, 42);
    CHECK(curve[3].value > 0.9);
    CHECK(curve[6].value > 0.05);
    CHECK(curve[6].value < 0.2);
    CHECK(curve[12].value < 0.01);
    for (auto& fp : curve) CHECK(fp.stderr_value < 0.01);

    double mu = lyapunov_analytic(10.0);
    auto fit = fit_echo_model(curve, 1e-5, mu, 4, 8);
    CHECK(std::abs(fit.mu_free - mu) / mu < 0.2);
    CHECK(fit.alpha > 5.0);
    CHECK(fit.alpha < 14.0);
    CHECK(fit.tau_r > 5.5);
    CHECK(fit.tau_r < 8.7);
}

TEST_CASE("coverage growth and saturation") {
    MapParams mp{10.0};
    auto dd = make_disk(0.5, 0.0, 1.0 / 1000.0);
    auto cov = mixing_coverage(mp, dd, 32, {0, 1, 2, 3, 4, 5}, 200000, 7);
    REQUIRE(cov.series.size() == 6);
    CHECK(cov.grid_n == 32);
    CHECK(!cov.undersampled);
    // starts as a handful of cells
    CHECK(cov.series[0].fraction * 32 * 32 >= 1.0);
    CHECK(cov.series[0].fraction < 0.03);
    for (std::size_t i = 1; i < cov.series.size(); ++i)
        CHECK(cov.series[i].fraction >= cov.series[i - 1].fraction - 0.005);
    CHECK(cov.series[3].fraction <= 0.7);
    CHECK(cov.series[5].fraction >= 0.9);

    auto gcov = mixing_coverage(mp, make_density(0.5, 0.0, 1.0 / 1000.0), 32, {5}, 200000, 7);
    CHECK(gcov.series[0].fraction >= 0.9);

    auto sparse = mixing_coverage(mp, dd, 32, {1}, 5000, 7);
    CHECK(sparse.undersampled);
    auto rerun = mixing_coverage(mp, dd, 32, {0, 1, 2, 3, 4, 5}, 200000, 7);
    CHECK(rerun.series[3].fraction == cov.series[3].fraction);
    CHECK_THROWS_AS(mixing_coverage(mp, dd, 32, {3, 2}, 200000, 7), std::invalid_argument);
}

TEST_CASE("cell-count horizon") {
    CHECK(mixing_time(1000.0, std::log(5.0)) == doctest::Approx(4.2920).epsilon(1e-4));
    CHECK(mixing_time(1.0, std::log(5.0)) == 0.0);
    CHECK(mixing_time(1.0e6, std::log(5.0)) ==
          doctest::Approx(2.0 * mixing_time(1000.0, std::log(5.0))).epsilon(1e-12));
    CHECK_THROWS_AS(mixing_time(0.5, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(mixing_time(10.0, 0.0), std::invalid_argument);
}
