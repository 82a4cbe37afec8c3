#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "kr/map.hpp"

using namespace kr;

namespace {
constexpr double PI = 3.14159265358979323846;
}

TEST_CASE("single step from (0.25, 0) at K=10") {
    MapParams mp{10.0};
    Point z = step(mp, {0.25, 0.0});
    // p' = -10/(2 pi) mod 1, x' = 0.25 + p' mod 1, evaluated by hand
    CHECK(z.p == doctest::Approx(0.4084505690810465).epsilon(1e-12));
    CHECK(z.x == doctest::Approx(0.6584505690810465).epsilon(1e-12));
}

TEST_CASE("step then inverse returns start to near roundoff") {
    MapParams mp{10.0};
    Point z0{0.123456, 0.654321};
    Point z = z0;
    for (int i = 0; i < 50; ++i) z = step(mp, z);
    for (int i = 0; i < 50; ++i) z = step_inverse(mp, z);
    // 50 chaotic steps amplify roundoff by ~lambda^50; only short windows invert cleanly
    Point w0{0.123456, 0.654321};
    Point w = w0;
    for (int i = 0; i < 8; ++i) w = step(mp, w);
    for (int i = 0; i < 8; ++i) w = step_inverse(mp, w);
    CHECK(std::abs(w.x - w0.x) < 1e-6);
    CHECK(std::abs(w.p - w0.p) < 1e-6);
    // single step inverts to machine precision
    Point v = step_inverse(mp, step(mp, w0));
    CHECK(std::abs(v.x - w0.x) < 1e-14);
    CHECK(std::abs(v.p - w0.p) < 1e-14);
}

TEST_CASE("points stay on the unit torus") {
    MapParams mp{8.0};
    Point z{0.9999999, 0.9999999};
    for (int i = 0; i < 1000; ++i) {
        z = step(mp, z);
        CHECK(z.x >= 0.0);
        CHECK(z.x < 1.0);
        CHECK(z.p >= 0.0);
        CHECK(z.p < 1.0);
    }
}

TEST_CASE("lift counters recover the unwrapped trajectory") {
    MapParams mp{10.0};
    Orbit orb = iterate(mp, {0.3, 0.7}, 40);
    REQUIRE(orb.size() == 41);
    double x = 0.3, p = 0.7;
    for (std::size_t i = 0; i < orb.size(); ++i) {
        CHECK(orb.lifted_x(i) == doctest::Approx(x).epsilon(1e-12));
        CHECK(orb.lifted_p(i) == doctest::Approx(p).epsilon(1e-12));
        step_lifted(mp, x, p);
    }
    // backward orbit via negative t
    Orbit back = iterate(mp, orb.pts.back(), -5);
    CHECK(back.size() == 6);
    CHECK(back.pts[1].x == doctest::Approx(step_inverse(mp, orb.pts.back()).x).epsilon(1e-12));
}

TEST_CASE("jacobian matches finite differences and has unit determinant") {
    MapParams mp{10.0};
    double x0 = 0.37, p0 = 0.21;
    TangentFrame M = jacobian(mp, x0);
    CHECK(M.det() == doctest::Approx(1.0).epsilon(1e-14));

    double h = 1e-7;
    auto f = [&](double x, double p) {
        step_lifted(mp, x, p);
        return std::array<double, 2>{x, p};
    };
    auto fx = f(x0 + h, p0), fmx = f(x0 - h, p0);
    auto fp = f(x0, p0 + h), fmp = f(x0, p0 - h);
    CHECK(M.a11 == doctest::Approx((fx[0] - fmx[0]) / (2 * h)).epsilon(1e-5));
    CHECK(M.a21 == doctest::Approx((fx[1] - fmx[1]) / (2 * h)).epsilon(1e-5));
    CHECK(M.a12 == doctest::Approx((fp[0] - fmp[0]) / (2 * h)).epsilon(1e-5));
    CHECK(M.a22 == doctest::Approx((fp[1] - fmp[1]) / (2 * h)).epsilon(1e-5));
}

TEST_CASE("fixed points and their linearization at K=10") {
    MapParams mp{10.0};
    auto fps = fixed_points(mp);
    // (0,0): trace -8, reflection hyperbolic, |lambda_u| = 4 + sqrt(15)
    CHECK(fps[0].z.x == 0.0);
    CHECK(fps[0].trace == doctest::Approx(-8.0).epsilon(1e-14));
    CHECK(fps[0].stability == Stability::hyperbolic);
    CHECK(std::abs(fps[0].lambda_u) == doctest::Approx(4.0 + std::sqrt(15.0)).epsilon(1e-14));
    CHECK(fps[0].lambda_u < 0);
    // (1/2,0): trace 12, lambda_u = 6 + sqrt(35)
    CHECK(fps[1].z.x == 0.5);
    CHECK(fps[1].trace == doctest::Approx(12.0).epsilon(1e-14));
    CHECK(fps[1].lambda_u == doctest::Approx(6.0 + std::sqrt(35.0)).epsilon(1e-14));
    CHECK(fps[1].lambda_u * fps[1].lambda_s == doctest::Approx(1.0).epsilon(1e-12));

    // eigenvectors: M v = lambda v
    TangentFrame M = jacobian(mp, 0.5);
    auto v = fps[1].ev_u;
    double r1 = M.a11 * v[0] + M.a12 * v[1];
    double r2 = M.a21 * v[0] + M.a22 * v[1];
    CHECK(r1 == doctest::Approx(fps[1].lambda_u * v[0]).epsilon(1e-12));
    CHECK(r2 == doctest::Approx(fps[1].lambda_u * v[1]).epsilon(1e-12));

    // both period-1 points hyperbolic only for K > 4
    auto fps3 = fixed_points(MapParams{3.0});
    CHECK(fps3[0].stability == Stability::elliptic);
    CHECK(fps3[1].stability == Stability::hyperbolic);
}

TEST_CASE("analytic Lyapunov values") {
    CHECK(lyapunov_analytic(10.0) ==
          doctest::Approx(std::log(5.0) - 1.0 / 96.0).epsilon(1e-15));
    CHECK(lyapunov_analytic(8.0) ==
          doctest::Approx(std::log(4.0) - 1.0 / 60.0).epsilon(1e-15));
    CHECK_THROWS_AS(lyapunov_analytic(2.0), std::domain_error);
}

TEST_CASE("numeric Lyapunov tracks the closed form, gap shrinking with K") {
    // The closed form ln(K/2) - 1/(K^2-4) is a large-K expansion; the
    // phase-averaged numeric exponent sits slightly above it, converging to
    // roughly +6.5% at K=6, +2.5% at K=8, +1.3% at K=10 (long-time limit).
    struct Probe { double K, bound; };
    for (auto [K, bound] : {Probe{10.0, 0.02}, Probe{8.0, 0.04}, Probe{6.0, 0.08}}) {
        MapParams mp{K};
        auto est = lyapunov_numeric(mp, 200, 400, 20260822);
        double ref = lyapunov_analytic(K);
        double gap = (est.mean - ref) / ref;
        INFO("K=", K, " measured gap ", gap * 100.0, "%");
        CHECK(gap > 0.0);
        CHECK(gap < bound);
    }
    CHECK_THROWS_AS(lyapunov_numeric(MapParams{10.0}, 10, 50, 1), std::invalid_argument);
}

TEST_CASE("numeric Lyapunov is reproducible for a fixed seed") {
    MapParams mp{10.0};
    auto a = lyapunov_numeric(mp, 32, 150, 7);
    auto b = lyapunov_numeric(mp, 32, 150, 7);
    CHECK(a.mean == b.mean);  // bitwise
    auto c = lyapunov_numeric(mp, 32, 150, 8);
    CHECK(a.mean != c.mean);
}

TEST_CASE("step action: Legendre relations reproduce the map") {
    MapParams mp{10.0};
    // discrete derivative of F recovers the momenta of a lifted orbit
    double x0 = 0.3, p0 = 0.7;
    double x1 = x0, p1 = p0;
    step_lifted(mp, x1, p1);
    double h = 1e-6;
    double dF1 = (step_action(mp, x0, x1 + h) - step_action(mp, x0, x1 - h)) / (2 * h);
    double dF0 = (step_action(mp, x0 + h, x1) - step_action(mp, x0 - h, x1)) / (2 * h);
    CHECK(dF1 == doctest::Approx(p1).epsilon(1e-8));   // dF/dx_{j+1} = p_{j+1}
    CHECK(-dF0 == doctest::Approx(p0).epsilon(1e-8));  // -dF/dx_j = p_j
}

TEST_CASE("step action at the fixed points of K=10") {
    MapParams mp{10.0};
    double a = 10.0 / (4.0 * PI * PI);
    CHECK(step_action(mp, 0.5, 0.5) == doctest::Approx(-a).epsilon(1e-14));
    CHECK(step_action(mp, 0.0, 0.0) == doctest::Approx(a).epsilon(1e-14));
    CHECK(step_action(mp, 0.5, 0.5) == doctest::Approx(-0.2533029591058444).epsilon(1e-12));
}

TEST_CASE("path action sums the steps") {
    MapParams mp{6.0};
    Orbit orb = iterate(mp, {0.31, 0.12}, 6);
    std::vector<double> xs;
    for (std::size_t i = 0; i < orb.size(); ++i) xs.push_back(orb.lifted_x(i));
    double s = 0.0;
    for (int j = 0; j < 6; ++j) s += step_action(mp, xs[j], xs[j + 1]);
    CHECK(path_action(mp, xs) == doctest::Approx(s).epsilon(1e-15));
}

TEST_CASE("sensitivity: K=6.00 vs 6.02 orbits separate quickly") {
    Point z0{0.3, 0.1};
    Orbit a = iterate(MapParams{6.00}, z0, 3);
    Orbit b = iterate(MapParams{6.02}, z0, 3);
    double dx = a.pts[3].x - b.pts[3].x;
    dx -= std::round(dx);
    double dp = a.pts[3].p - b.pts[3].p;
    dp -= std::round(dp);
    CHECK(std::sqrt(dx * dx + dp * dp) > 0.1);
}

TEST_CASE("poincare section: K=0.5 orbit stays in a narrow momentum band") {
    MapParams mp{0.5};
    auto sec = poincare_section(mp, {{0.1, 0.3}}, 2000);
    double lo = 1.0, hi = 0.0;
    for (const Point& z : sec[0].pts) {
        lo = std::min(lo, z.p);
        hi = std::max(hi, z.p);
    }
    CHECK(hi - lo < 0.2);
}

TEST_CASE("poincare section: K=8 single orbit fills >= 90% of a 50x50 grid") {
    MapParams mp{8.0};
    auto sec = poincare_section(mp, {{0.1, 0.3}}, 100000);
    std::set<int> cells;
    for (const Point& z : sec[0].pts) {
        int ix = std::min(49, static_cast<int>(z.x * 50));
        int ip = std::min(49, static_cast<int>(z.p * 50));
        cells.insert(ix * 50 + ip);
    }
    CHECK(static_cast<double>(cells.size()) / 2500.0 >= 0.9);
}
