#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "kr/manifold.hpp"

using namespace kr;

namespace {

double tdist(const Point& a, const Point& b) {
    double dx = a.x - b.x - std::nearbyint(a.x - b.x);
    double dp = a.p - b.p - std::nearbyint(a.p - b.p);
    return std::hypot(dx, dp);
}

// Interior extrema of a noisy sequence, merged over flat tops: a sample is an
// extremum candidate when it is the max (min) of the window where the values
// stay within `prominence` of it; candidates closer than that in value and
// adjacent in index collapse to one bracket [lo, hi].
struct Extremum {
    std::size_t lo = 0, hi = 0;
    bool is_max = false;
};

std::vector<Extremum> plateau_extrema(const std::vector<double>& v, double prominence) {
    std::vector<Extremum> out;
    if (v.size() < 3) return out;
    for (int sign : {+1, -1}) {
        std::size_t i = 1;
        while (i + 1 < v.size()) {
            double vi = sign > 0 ? v[i] : -v[i];
            // extend the plateau of values within prominence of v[i]
            std::size_t hi = i;
            double best = vi;
            std::size_t best_at = i;
            while (hi + 1 < v.size()) {
                double vh = sign > 0 ? v[hi + 1] : -v[hi + 1];
                if (best - vh > prominence) break;
                ++hi;
                if (vh > best) { best = vh; best_at = hi; }
            }
            // require a drop by prominence on both sides of the plateau peak
            bool left_drop = false;
            for (std::size_t j = i; j-- > 0;) {
                double vj = sign > 0 ? v[j] : -v[j];
                if (best - vj > prominence) { left_drop = true; break; }
                if (vj > best) break;
            }
            double after = hi + 1 < v.size() ? (sign > 0 ? v[hi + 1] : -v[hi + 1]) : best;
            bool right_drop = hi + 1 < v.size() && best - after > prominence;
            if (left_drop && right_drop) {
                // plateau bracket: samples within prominence of the peak
                std::size_t lo = best_at;
                while (lo > 0 && best - (sign > 0 ? v[lo - 1] : -v[lo - 1]) <= prominence) --lo;
                std::size_t hi2 = best_at;
                while (hi2 + 1 < v.size() &&
                       best - (sign > 0 ? v[hi2 + 1] : -v[hi2 + 1]) <= prominence)
                    ++hi2;
                out.push_back({lo, hi2, sign > 0});
            }
            i = hi + 1;
        }
    }
    std::sort(out.begin(), out.end(), [](const Extremum& a, const Extremum& b) { return a.lo < b.lo; });
    return out;
}

}  // namespace

TEST_CASE("seed chord starts within 1e-8 of the anchor, tangent to the eigenvector") {
    MapParams mp{10.0};
    FixedPointInfo fa = fixed_points(mp)[1];
    ManifoldCurve c = grow_manifold(mp, fa, ManifoldKind::unstable, 0.01);
    CHECK(c.seed_distance <= 1e-8);
    CHECK(c.seed_distance > 0.0);
    double dx = c.pts[1].x - c.pts[0].x - std::nearbyint(c.pts[1].x - c.pts[0].x);
    double dp = c.pts[1].p - c.pts[0].p - std::nearbyint(c.pts[1].p - c.pts[0].p);
    double cross = dx * fa.ev_u[1] - dp * fa.ev_u[0];
    double angle = std::asin(std::fabs(cross) / std::hypot(dx, dp));
    CHECK(angle < 1e-4);
}

TEST_CASE("one map application stretches near-anchor arc length by the eigenvalue") {
    MapParams mp{10.0};
    FixedPointInfo fa = fixed_points(mp)[1];
    ManifoldCurve c = grow_manifold(mp, fa, ManifoldKind::unstable, 1e-4);
    REQUIRE(c.pieces() >= 3);
    int last = c.pieces() - 2;  // final full piece
    double l0 = c.ell[c.piece_first[last]] - c.ell[c.piece_first[last - 1]];
    double l1 = c.ell[c.piece_first[last + 1]] - c.ell[c.piece_first[last]];
    CHECK(l1 / l0 == doctest::Approx(fa.lambda_u).epsilon(0.02));
}

TEST_CASE("stable curve of the inverted dynamics coincides with the unstable curve") {
    MapParams mp{6.0};
    FixedPointInfo fa = fixed_points(mp)[1];
    ManifoldCurve uf = grow_manifold(mp, fa, ManifoldKind::unstable, 2.0);
    ManifoldCurve si = grow_manifold(mp, fa, ManifoldKind::stable, 2.0, 1e-3, 0.2, +1, true);
    REQUIRE(uf.size() == si.size());
    CHECK(manifold_distance(uf, si) < 1e-15);
    CHECK(uf.forward_expanding());
    CHECK(si.forward_expanding());
}

TEST_CASE("curve maps into itself: node images are nodes, midpoints stay on the polyline") {
    MapParams mp{6.0};
    FixedPointInfo fa = fixed_points(mp)[1];
    ManifoldCurve c = grow_manifold(mp, fa, ManifoldKind::unstable, 3.0);
    REQUIRE(c.map_power == 1);
    std::size_t lo = c.piece_first[2], hi = c.piece_first[3];
    double worst_node = 0.0, worst_mid = 0.0;
    for (std::size_t i = lo; i < hi && i + 1 < c.size(); ++i) {
        worst_node = std::max(worst_node, distance_to_curve(c, step(mp, c.pts[i])));
        Point m{c.pts[i].x + 0.5 * (c.pts[i + 1].x - c.pts[i].x - std::nearbyint(c.pts[i + 1].x - c.pts[i].x)),
                c.pts[i].p + 0.5 * (c.pts[i + 1].p - c.pts[i].p - std::nearbyint(c.pts[i + 1].p - c.pts[i].p))};
        worst_mid = std::max(worst_mid, distance_to_curve(c, step(mp, {wrap01(m.x), wrap01(m.p)})));
    }
    CHECK(worst_node < 1e-12);
    CHECK(worst_mid < 1e-6);
}

TEST_CASE("growth reaches the target and truncation is tight") {
    MapParams mp{10.0};
    FixedPointInfo fa = fixed_points(mp)[1];
    ManifoldCurve c = grow_manifold(mp, fa, ManifoldKind::unstable, 3.0);
    CHECK(c.length() >= 3.0);
    // at most one node past the cut
    CHECK(c.ell[c.size() - 2] < 3.0);
    ManifoldCurve t = truncate(c, 1.0);
    CHECK(t.length() >= 1.0);
    CHECK(t.ell[t.size() - 2] < 1.0);
    CHECK(t.size() < c.size());
}

TEST_CASE("point budget overflow reports the achieved arc length") {
    MapParams mp{10.0};
    FixedPointInfo fa = fixed_points(mp)[1];
    CHECK_THROWS_AS(grow_manifold(mp, fa, ManifoldKind::unstable, 50.0, 1e-3, 0.2, +1, false, 200),
                    std::runtime_error);
    CHECK_THROWS_AS(grow_manifold(mp, fa, ManifoldKind::unstable, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(grow_manifold(mp, fa, ManifoldKind::unstable, 1.0, -1e-3), std::invalid_argument);
    MapParams weak{0.5};
    FixedPointInfo el = fixed_points(weak)[0];  // elliptic below the stability border
    CHECK(el.stability == Stability::elliptic);
    CHECK_THROWS_AS(grow_manifold(weak, el, ManifoldKind::unstable, 1.0), std::invalid_argument);
}

TEST_CASE("reflection-hyperbolic anchor uses the squared map as generator") {
    MapParams mp{6.0};
    auto fps = fixed_points(mp);
    ManifoldCurve c0 = grow_manifold(mp, fps[0], ManifoldKind::unstable, 0.5);
    ManifoldCurve c1 = grow_manifold(mp, fps[1], ManifoldKind::unstable, 0.5);
    CHECK(fps[0].lambda_u < 0.0);
    CHECK(c0.map_power == 2);
    CHECK(c1.map_power == 1);
}

TEST_CASE("iterate-count growth pins the base segment by arc length") {
    MapParams mp{6.0};
    FixedPointInfo fa = fixed_points(mp)[1];
    ManifoldCurve a = grow_manifold_iterates(mp, fa, ManifoldKind::unstable, 4, 1e-3);
    ManifoldCurve b = grow_manifold_iterates(mp, fa, ManifoldKind::unstable, 5, 1e-4);
    CHECK(a.base_piece == 5);
    CHECK(b.base_piece == 4);
    CHECK(a.iterates == 4);
    // same total piece count -> identical curve
    CHECK(a.length() == b.length());
    CHECK(a.length() == doctest::Approx(4.0619).epsilon(1e-3));
    ManifoldCurve c = grow_manifold_iterates(mp, fa, ManifoldKind::unstable, 5, 1e-3);
    CHECK(c.length() == doctest::Approx(15.853).epsilon(1e-3));
}

TEST_CASE("orbit attached to a node ends on it and satisfies the map") {
    MapParams mp{6.0};
    FixedPointInfo fa = fixed_points(mp)[1];
    ManifoldCurve c = grow_manifold_iterates(mp, fa, ManifoldKind::unstable, 4, 1e-3);
    for (std::size_t i : {c.size() / 3, c.size() / 2, c.size() - 2}) {
        Orbit ob = node_orbit(c, i);
        REQUIRE(ob.size() >= 2);
        CHECK(tdist(ob.pts.back(), c.pts[i]) < 1e-12);
        for (std::size_t j = 0; j + 1 < ob.size(); ++j)
            CHECK(tdist(step(mp, ob.pts[j]), ob.pts[j + 1]) < 1e-12);
    }
}

TEST_CASE("nearby kick strengths keep the manifold close while orbits separate") {
    MapParams mpa{6.00}, mpb{6.02};
    FixedPointInfo fa = fixed_points(mpa)[1], fb = fixed_points(mpb)[1];
    // the t=5 windows, compared against one-iterate-longer references so the
    // far endpoint of each curve has matching material on the other side
    ManifoldCurve a5 = grow_manifold_iterates(mpa, fa, ManifoldKind::unstable, 5, 1e-4);
    ManifoldCurve b5 = grow_manifold_iterates(mpb, fb, ManifoldKind::unstable, 5, 1e-4);
    ManifoldCurve a6 = grow_manifold_iterates(mpa, fa, ManifoldKind::unstable, 6, 1e-4);
    ManifoldCurve b6 = grow_manifold_iterates(mpb, fb, ManifoldKind::unstable, 6, 1e-4);
    double dab = manifold_distance_directed(a5, b6);
    double dba = manifold_distance_directed(b5, a6);
    CHECK(dab < 1e-2);
    CHECK(dba < 1e-2);
    CHECK(dab == doctest::Approx(0.00452).epsilon(0.05));
    CHECK(dba == doctest::Approx(0.00452).epsilon(0.05));

    // same seed, the two dynamics: macroscopic separation by t=3
    Orbit oa = iterate(mpa, {0.3, 0.2}, 3);
    Orbit ob = iterate(mpb, {0.3, 0.2}, 3);
    CHECK(tdist(oa.pts.back(), ob.pts.back()) > 0.1);

    // identical curves at distance zero
    CHECK(manifold_distance(a5, a5) == 0.0);
}

TEST_CASE("distant kick strengths give distant manifolds") {
    MapParams m6{6.0}, m7{7.0};
    ManifoldCurve c6 = grow_manifold_iterates(m6, fixed_points(m6)[1], ManifoldKind::unstable, 5, 1e-4);
    ManifoldCurve c7 = grow_manifold_iterates(m7, fixed_points(m7)[1], ManifoldKind::unstable, 5, 1e-4);
    CHECK(manifold_distance(c6, c7) > 1e-1);
}

TEST_CASE("manifold displacement scales linearly with the kick perturbation") {
    MapParams mp{6.00};
    FixedPointInfo fa = fixed_points(mp)[1];
    ManifoldCurve base = grow_manifold_iterates(mp, fa, ManifoldKind::unstable, 4, 1e-3);
    double d[2];
    int k = 0;
    for (double dK : {0.02, 0.01}) {
        MapParams mq{6.00 + dK};
        ManifoldCurve q = grow_manifold_iterates(mq, fixed_points(mq)[1], ManifoldKind::unstable, 4, 1e-3);
        d[k++] = manifold_distance(base, q);
    }
    CHECK(d[0] / d[1] > 1.5);
    CHECK(d[0] / d[1] < 2.5);
}

TEST_CASE("distance rejects mismatched or degenerate inputs") {
    MapParams mp{6.0};
    FixedPointInfo fa = fixed_points(mp)[1];
    ManifoldCurve u = grow_manifold(mp, fa, ManifoldKind::unstable, 0.1);
    ManifoldCurve s = grow_manifold(mp, fa, ManifoldKind::stable, 0.1);
    CHECK_THROWS_AS(manifold_distance(u, s), std::invalid_argument);
    ManifoldCurve empty;
    CHECK_THROWS_AS(manifold_distance(u, empty), std::invalid_argument);
}

TEST_CASE("near-anchor segment has no folds; a long curve's folds are stable") {
    MapParams mp{10.0};
    FixedPointInfo fa = fixed_points(mp)[1];
    ManifoldCurve straight = grow_manifold(mp, fa, ManifoldKind::unstable, 0.01);
    CHECK(caustic_count(straight).count() == 0);

    ManifoldCurve c = grow_manifold(mp, fa, ManifoldKind::unstable, 6.0);
    CausticReport r = caustic_count(c);
    CHECK(r.count() == 1);
    CHECK_FALSE(r.under_resolved);
    CHECK(r.locations[0].ell == doctest::Approx(2.79435).epsilon(1e-4));
    CHECK(r.locations[0].x == doctest::Approx(0.59980).epsilon(1e-4));

    ManifoldCurve c2 = grow_manifold(mp, fa, ManifoldKind::unstable, 6.0, 5e-4, 0.1);
    CausticReport r2 = caustic_count(c2);
    CHECK(r2.count() == 1);
    CHECK(std::fabs(r2.locations[0].ell - r.locations[0].ell) < 1e-4);
    CHECK(std::fabs(r2.locations[0].x - r.locations[0].x) < 1e-4);
}

TEST_CASE("folds separated by fewer than 2 samples raise the resolution flag") {
    ManifoldCurve z;
    z.pts = {{0.500, 0.10}, {0.510, 0.20}, {0.505, 0.30}, {0.510, 0.40}, {0.520, 0.50}};
    z.lift.assign(z.pts.size(), {0, 0});
    z.ell.resize(z.pts.size());
    z.ell[0] = 0.0;
    for (std::size_t i = 1; i < z.pts.size(); ++i)
        z.ell[i] = z.ell[i - 1] + tdist(z.pts[i], z.pts[i - 1]);
    CausticReport r = caustic_count(z);
    CHECK(r.count() == 2);
    CHECK(r.under_resolved);
}

TEST_CASE("matched fold counts and barely shifted fold locations across a small kick change") {
    MapParams mpa{6.00}, mpb{6.02};
    ManifoldCurve a = grow_manifold_iterates(mpa, fixed_points(mpa)[1], ManifoldKind::unstable, 5, 1e-4);
    ManifoldCurve b = grow_manifold_iterates(mpb, fixed_points(mpb)[1], ManifoldKind::unstable, 5, 1e-4);
    CausticReport ra = caustic_count(a), rb = caustic_count(b);
    REQUIRE(ra.count() == rb.count());
    CHECK(ra.count() == 2);
    CHECK(ra.locations[0].ell == doctest::Approx(1.90309).epsilon(1e-3));
    CHECK(ra.locations[0].x == doctest::Approx(0.969804).epsilon(1e-4));
    for (int i = 0; i < ra.count(); ++i) {
        double dx = ra.locations[i].x - rb.locations[i].x;
        dx -= std::nearbyint(dx);
        CHECK(std::fabs(dx) < 1e-2);
    }
}

TEST_CASE("homoclinic crossings: count, transversality, and refinement stability") {
    MapParams mp{10.0};
    FixedPointInfo fa = fixed_points(mp)[1];
    ManifoldCurve U = grow_manifold(mp, fa, ManifoldKind::unstable, 6.0);
    ManifoldCurve S = grow_manifold(mp, fa, ManifoldKind::stable, 6.0);
    IntersectionSet is = heteroclinic_intersections(U, S);
    REQUIRE(is.crossings.size() >= 1);
    CHECK(is.crossings.size() == 25);
    CHECK(is.tangential.empty());
    CHECK(is.loop_areas.size() == is.crossings.size() - 1);
    CHECK(is.crossings[0].z.x == doctest::Approx(0.588284).epsilon(1e-4));
    CHECK(is.crossings[0].z.p == doctest::Approx(0.080873).epsilon(1e-4));
    for (std::size_t i = 0; i + 1 < is.crossings.size(); ++i)
        CHECK(is.crossings[i].ell_u < is.crossings[i + 1].ell_u);
    for (const auto& c : is.crossings) CHECK(c.sin_angle > 1e-6);

    ManifoldCurve U2 = grow_manifold(mp, fa, ManifoldKind::unstable, 6.0, 5e-4, 0.1);
    ManifoldCurve S2 = grow_manifold(mp, fa, ManifoldKind::stable, 6.0, 5e-4, 0.1);
    IntersectionSet is2 = heteroclinic_intersections(U2, S2);
    REQUIRE(is2.crossings.size() == is.crossings.size());
    double worst = 0.0;
    for (const auto& c : is.crossings) {
        double best = 1e9;
        for (const auto& d : is2.crossings) best = std::min(best, tdist(c.z, d.z));
        worst = std::max(worst, best);
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("crossing loop areas telescope to the arc integral difference") {
    MapParams mp{10.0};
    FixedPointInfo fa = fixed_points(mp)[1];
    ManifoldCurve U = grow_manifold(mp, fa, ManifoldKind::unstable, 6.0);
    ManifoldCurve S = grow_manifold(mp, fa, ManifoldKind::stable, 6.0);
    IntersectionSet is = heteroclinic_intersections(U, S);
    REQUIRE(is.crossings.size() >= 4);
    double sum = 0.0;
    for (std::size_t i = 0; i < 3; ++i) sum += is.loop_areas[i];
    double aU = area_action(U, is.crossings[0].z, is.crossings[3].z);
    double aS = area_action(S, is.crossings[0].z, is.crossings[3].z);
    CHECK(sum == doctest::Approx(aU - aS).epsilon(1e-10));
    CHECK(is.loop_areas[0] == doctest::Approx(8.307232e-02).epsilon(1e-4));
}

TEST_CASE("short disjoint curve pieces have no crossings") {
    MapParams mp{10.0};
    FixedPointInfo fa = fixed_points(mp)[1];
    ManifoldCurve U = grow_manifold(mp, fa, ManifoldKind::unstable, 0.01);
    ManifoldCurve S = grow_manifold(mp, fa, ManifoldKind::stable, 0.01);
    IntersectionSet is = heteroclinic_intersections(U, S);
    CHECK(is.crossings.empty());
    CHECK(is.tangential.empty());
    CHECK(is.loop_areas.empty());
    CHECK_THROWS_AS(heteroclinic_intersections(U, U), std::invalid_argument);
}

TEST_CASE("arc integral of p dx: endpoints on the curve, signed and additive") {
    MapParams mp{10.0};
    FixedPointInfo fa = fixed_points(mp)[1];
    ManifoldCurve c = grow_manifold(mp, fa, ManifoldKind::unstable, 2.0);
    Point a = c.pts[c.size() / 5], b = c.pts[c.size() / 2], d = c.pts[4 * c.size() / 5];
    CHECK(area_action(c, a, a) == 0.0);
    CHECK(area_action(c, a, b) == doctest::Approx(-area_action(c, b, a)).epsilon(1e-12));
    CHECK(area_action(c, a, b) + area_action(c, b, d) ==
          doctest::Approx(area_action(c, a, d)).epsilon(1e-12));
    CHECK_THROWS_AS(area_action(c, a, Point{0.9, 0.9}), std::invalid_argument);
}

TEST_CASE("first-order action shift at the fixed points and at zero perturbation") {
    MapParams mp{6.0};
    auto fps = fixed_points(mp);
    double unit = 0.02 / (TWO_PI * TWO_PI);
    Orbit at_half = iterate(mp, fps[1].z, 7);
    CHECK(perturbative_action_difference(at_half, 0.02) == doctest::Approx(-unit * 7).epsilon(1e-12));
    Orbit at_zero = iterate(mp, fps[0].z, 7);
    CHECK(perturbative_action_difference(at_zero, 0.02) == doctest::Approx(unit * 7).epsilon(1e-12));
    CHECK(perturbative_action_difference(at_half, 0.0) == 0.0);
}

TEST_CASE("exact and first-order action differences agree to under a percent") {
    MapParams mp{6.00};
    FixedPointInfo fa = fixed_points(mp)[1];
    for (auto [ds, th] : {std::pair{1e-3, 0.2}, std::pair{5e-4, 0.1}}) {
        ActionDifferenceSeries s = action_difference_series(mp, 0.02, fa, 4, 1000, ds, th, 1e-4);
        REQUIRE(s.ell.size() > 900);
        CHECK(s.excluded == 0);
        double lo = 1e9, hi = -1e9, dev = 0.0;
        for (std::size_t k = 0; k < s.ell.size(); ++k) {
            lo = std::min(lo, s.dS_exact[k]);
            hi = std::max(hi, s.dS_exact[k]);
            dev = std::max(dev, std::fabs(s.dS_exact[k] - s.dS_pert[k]));
        }
        double rel = dev / (hi - lo);
        CHECK(rel < 0.01);
        CHECK(rel == doctest::Approx(0.00282).epsilon(0.1));
    }
}

TEST_CASE("zero perturbation gives an identically zero series") {
    MapParams mp{6.00};
    FixedPointInfo fa = fixed_points(mp)[1];
    ActionDifferenceSeries s = action_difference_series(mp, 0.0, fa, 3, 200, 1e-3, 0.2, 1e-4);
    CHECK(s.excluded == 0);
    for (std::size_t k = 0; k < s.ell.size(); ++k) {
        CHECK(s.dS_exact[k] == 0.0);
        CHECK(s.dS_pert[k] == 0.0);
    }
    CHECK_THROWS_AS(action_difference_series(mp, 0.02, fa, 1, 100), std::invalid_argument);
}

TEST_CASE("series over the longer window: pairing coverage and extrema at manifold crossings") {
    MapParams mp{6.00};
    FixedPointInfo fa = fixed_points(mp)[1];
    ActionDifferenceSeries s = action_difference_series(mp, 0.02, fa, 4, 4000, 1e-3, 0.2, 1e-3);
    REQUIRE(s.ell.size() > 3000);
    // pairing by final position resolves all but a small reported fraction
    CHECK(static_cast<double>(s.excluded) / (s.ell.size() + s.excluded) < 0.01);
    for (std::size_t k = 1; k < s.ell.size(); ++k) CHECK(s.ell[k] > s.ell[k - 1]);

    double lo = *std::min_element(s.dS_exact.begin(), s.dS_exact.end());
    double hi = *std::max_element(s.dS_exact.begin(), s.dS_exact.end());
    CHECK(hi - lo == doctest::Approx(1.0561e-3).epsilon(0.02));

    // interior extrema of the exact series (flat tops merged) sit where the
    // transverse separation of the two manifolds changes sign
    auto ext = plateau_extrema(s.dS_exact, 1e-3 * (hi - lo));
    REQUIRE(ext.size() == 1);
    CHECK(ext[0].is_max);
    std::size_t peak = ext[0].lo;
    for (std::size_t k = ext[0].lo; k <= ext[0].hi; ++k)
        if (s.dS_exact[k] > s.dS_exact[peak]) peak = k;
    CHECK(s.ell[peak] == doctest::Approx(2.8734).epsilon(0.012));
    for (const auto& e : ext) {
        bool flips = false;
        std::size_t lo_k = e.lo >= 2 ? e.lo - 2 : 0;
        std::size_t hi_k = std::min(e.hi + 2, s.ell.size() - 1);
        for (std::size_t k = lo_k; k < hi_k; ++k)
            if (s.partner_dp[k] * s.partner_dp[k + 1] < 0) flips = true;
        CHECK(flips);
    }
    // with both endpoints counted as turning points the sequence alternates
    std::vector<double> turning{s.dS_exact.front()};
    for (const auto& e : ext) turning.push_back(s.dS_exact[e.lo]);
    turning.push_back(s.dS_exact.back());
    for (std::size_t k = 1; k + 1 < turning.size(); ++k) {
        double d2 = turning[k + 1] - 2.0 * turning[k] + turning[k - 1];
        double d2n = k + 2 < turning.size()
                         ? turning[k + 2] - 2.0 * turning[k + 1] + turning[k]
                         : -d2;
        CHECK(d2 * d2n <= 0.0);
    }
}

TEST_CASE("accumulated transverse separation integrates to the exact action change") {
    MapParams mp{6.00};
    FixedPointInfo fa = fixed_points(mp)[1];
    ActionDifferenceSeries s = action_difference_series(mp, 0.02, fa, 4, 2000, 1e-3, 0.2, 1e-4);
    ManifoldCurve c0 = grow_manifold_iterates(mp, fa, ManifoldKind::unstable, 4, 1e-4);
    std::vector<double> xs(s.ell.size());
    std::size_t seg = 1;
    for (std::size_t k = 0; k < s.ell.size(); ++k) {
        while (seg + 1 < c0.ell.size() && c0.ell[seg] < s.ell[k]) ++seg;
        double l0 = c0.ell[seg - 1], l1 = c0.ell[seg];
        double f = l1 > l0 ? (s.ell[k] - l0) / (l1 - l0) : 0.0;
        xs[k] = c0.lifted_x(seg - 1) + f * (c0.lifted_x(seg) - c0.lifted_x(seg - 1));
    }
    double integ = 0.0;
    for (std::size_t k = 0; k + 1 < s.ell.size(); ++k)
        integ += 0.5 * (s.partner_dp[k] + s.partner_dp[k + 1]) * (xs[k + 1] - xs[k]);
    double dds = s.dS_exact.back() - s.dS_exact.front();
    double range = *std::max_element(s.dS_exact.begin(), s.dS_exact.end()) -
                   *std::min_element(s.dS_exact.begin(), s.dS_exact.end());
    CHECK(std::fabs(integ - dds) / range < 1e-3);
}

TEST_CASE("action spread is Gaussian with variance growing linearly in time") {
    MapParams mp{6.00};
    FixedPointInfo fa = fixed_points(mp)[1];
    ActionHistogram h = action_difference_histogram(mp, 0.02, fa, 8, 10000);
    CHECK(h.n_samples == 10000);
    CHECK(h.mean == doctest::Approx(-1.7516e-4).epsilon(0.02));
    CHECK(h.variance == doctest::Approx(8.2249e-7).epsilon(0.01));
    CHECK(h.skewness == doctest::Approx(-0.0723).epsilon(0.1));
    CHECK(h.excess_kurtosis == doctest::Approx(0.0473).epsilon(0.2));
    // distributional distance from the fitted Gaussian, and the 1% band
    CHECK(h.lilliefors_stat == doctest::Approx(0.010340).epsilon(0.02));
    CHECK(h.lilliefors_crit_1pct == doctest::Approx(1.0348 / 100.0).epsilon(1e-6));
    CHECK(h.normal_at_1pct == (h.lilliefors_stat < h.lilliefors_crit_1pct));

    REQUIRE(h.sweep_t.size() == 9);
    CHECK(h.sweep_t.front() == 4);
    CHECK(h.sweep_t.back() == 12);
    CHECK(h.sweep_var[4] == doctest::Approx(h.variance).epsilon(1e-12));
    CHECK(h.r_squared > 0.98);
    CHECK(h.r_squared == doctest::Approx(0.999409).epsilon(1e-3));
    CHECK(h.slope == doctest::Approx(1.0158e-7).epsilon(0.01));
    // fitted slope against the analytic diffusion constant: the convention
    // factor lands between the 1x and 2x readings, within a factor of 2 of both
    CHECK(h.diffusion_ratio == doctest::Approx(3.0786).epsilon(0.02));
    CHECK(h.diffusion_ratio > 0.5);
    CHECK(h.diffusion_ratio < 4.0);

    // histogram payload is consistent
    REQUIRE(h.bin_centers.size() == h.counts.size());
    REQUIRE(h.bin_centers.size() == h.gaussian_fit.size());
    long long total = 0;
    for (double c : h.counts) total += static_cast<long long>(c);
    CHECK(total == h.n_samples);
}

TEST_CASE("histogram construction is deterministic and validates its inputs") {
    MapParams mp{6.00};
    FixedPointInfo fa = fixed_points(mp)[1];
    ActionHistogram h1 = action_difference_histogram(mp, 0.02, fa, 8, 10000);
    ActionHistogram h2 = action_difference_histogram(mp, 0.02, fa, 8, 10000);
    CHECK(h1.mean == h2.mean);
    CHECK(h1.variance == h2.variance);
    CHECK(h1.lilliefors_stat == h2.lilliefors_stat);
    CHECK(h1.counts == h2.counts);
    CHECK_THROWS_AS(action_difference_histogram(mp, 0.02, fa, 3, 10000), std::invalid_argument);
    CHECK_THROWS_AS(action_difference_histogram(mp, 0.02, fa, 8, 9999), std::invalid_argument);
    MapParams weak{0.5};
    CHECK_THROWS_AS(action_difference_histogram(weak, 0.02, fixed_points(weak)[0], 8, 10000),
                    std::invalid_argument);
}
