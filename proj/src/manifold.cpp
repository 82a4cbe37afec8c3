#include "kr/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "kr/quantum.hpp"

namespace kr {

namespace {

// Nearest-image difference on the unit torus.
double mi(double d) { return d - std::nearbyint(d); }

double torus_dist(const Point& a, const Point& b) {
    return std::hypot(mi(a.x - b.x), mi(a.p - b.p));
}

struct ChordSpec {
    Point z0, z1;
    double dx = 0.0, dp = 0.0;  // nearest-image displacement z1 - z0
};

// Endpoints are returned exactly so piece seams are bitwise seamless.
Point chord_point(const ChordSpec& c, double u) {
    if (u <= 0.0) return c.z0;
    if (u >= 1.0) return c.z1;
    return {wrap01(c.z0.x + u * c.dx), wrap01(c.z0.p + u * c.dp)};
}

Point apply_gen(const MapParams& mp, bool forward, int m, Point z) {
    for (int k = 0; k < m; ++k) z = forward ? step(mp, z) : step_inverse(mp, z);
    return z;
}

Point eval_node(const MapParams& mp, bool forward, int m, const ChordSpec& c, double u,
                int piece) {
    Point z = chord_point(c, u);
    for (int j = 0; j < piece; ++j) z = apply_gen(mp, forward, m, z);
    return z;
}

ChordSpec curve_chord(const ManifoldCurve& c) {
    ChordSpec spec{c.seed0, c.seed1, mi(c.seed1.x - c.seed0.x), mi(c.seed1.p - c.seed0.p)};
    return spec;
}

double turn_angle(const Point& a, const Point& b, const Point& c) {
    double ux = mi(b.x - a.x), up = mi(b.p - a.p);
    double vx = mi(c.x - b.x), vp = mi(c.p - b.p);
    double cross = ux * vp - up * vx;
    double dot = ux * vx + up * vp;
    if (cross == 0.0 && dot == 0.0) return 0.0;
    return std::atan2(std::fabs(cross), dot);
}

struct GrowSpec {
    double target = std::numeric_limits<double>::infinity();
    double base = -1.0;   // >= 0 selects iterate-count mode
    int extra_pieces = 0;
};

void check_growth_args(const MapParams& mp, const FixedPointInfo& anchor, double ds_max,
                       double theta_max, int branch) {
    if (anchor.stability != Stability::hyperbolic)
        throw std::invalid_argument("grow_manifold: anchor must be hyperbolic");
    if (torus_dist(step(mp, anchor.z), anchor.z) > 1e-9)
        throw std::invalid_argument("grow_manifold: anchor is not a fixed point of the map");
    if (!(ds_max > 0.0) || !(theta_max > 0.0))
        throw std::invalid_argument("grow_manifold: tolerances must be positive");
    if (branch != 1 && branch != -1)
        throw std::invalid_argument("grow_manifold: branch must be +1 or -1");
}

ManifoldCurve grow_engine(const MapParams& mp, const FixedPointInfo& anchor, ManifoldKind kind,
                          const GrowSpec& spec, double ds_max, double theta_max, int branch,
                          bool inverted_dynamics, std::size_t max_points) {
    check_growth_args(mp, anchor, ds_max, theta_max, branch);

    ManifoldCurve curve;
    curve.params = mp;
    curve.anchor = anchor;
    curve.kind = kind;
    curve.inverted_dynamics = inverted_dynamics;
    curve.branch = branch;

    const bool forward = curve.forward_expanding();
    const double lambda = forward ? anchor.lambda_u : 1.0 / anchor.lambda_s;
    const std::array<double, 2> ev = forward ? anchor.ev_u : anchor.ev_s;
    curve.map_power = lambda > 0.0 ? 1 : 2;

    const double seed_dist = 1e-8;
    curve.seed_distance = seed_dist;
    double norm = std::hypot(ev[0], ev[1]);
    double vx = ev[0] / norm, vp = ev[1] / norm;
    curve.seed0 = {wrap01(anchor.z.x + branch * seed_dist * vx),
                   wrap01(anchor.z.p + branch * seed_dist * vp)};
    curve.seed1 = apply_gen(mp, forward, curve.map_power, curve.seed0);

    ChordSpec chord = curve_chord(curve);

    auto append_node = [&](const Point& z, double u, int piece) {
        if (curve.pts.empty()) {
            curve.pts.push_back(z);
            curve.lift.push_back({0, 0});
            curve.ell.push_back(0.0);
        } else {
            const Point& prev = curve.pts.back();
            double dxr = z.x - prev.x, dpr = z.p - prev.p;
            long long jx = dxr > 0.5 ? -1 : (dxr < -0.5 ? 1 : 0);
            long long jp = dpr > 0.5 ? -1 : (dpr < -0.5 ? 1 : 0);
            curve.pts.push_back(z);
            curve.lift.push_back({curve.lift.back()[0] + jx, curve.lift.back()[1] + jp});
            curve.ell.push_back(curve.ell.back() +
                                std::hypot(dxr + static_cast<double>(jx),
                                           dpr + static_cast<double>(jp)));
        }
        curve.history.push_back({u, piece});
    };

    std::vector<double> us = {0.0, 1.0};
    std::vector<Point> zs = {chord.z0, chord.z1};

    const double du_min = 1e-14;
    for (int piece = 0;; ++piece) {
        if (piece > 0) {
            for (Point& z : zs) z = apply_gen(mp, forward, curve.map_power, z);
        }

        // Pass-wise midpoint insertion until every gap and turning angle is
        // within tolerance. The predecessor vertex of the piece's first node
        // lives on the already-frozen previous piece.
        bool have_pred = curve.size() >= 2;
        Point pred = have_pred ? curve.pts[curve.size() - 2] : Point{};
        for (int pass = 0; pass < 64; ++pass) {
            if (curve.size() + us.size() > max_points)
                throw std::runtime_error(
                    "grow_manifold: point budget exceeded; achieved arc length " +
                    std::to_string(curve.length()));
            bool changed = false;
            std::vector<double> nus;
            std::vector<Point> nzs;
            nus.reserve(us.size() * 2);
            nzs.reserve(us.size() * 2);
            nus.push_back(us[0]);
            nzs.push_back(zs[0]);
            for (std::size_t i = 0; i + 1 < us.size(); ++i) {
                bool split = torus_dist(zs[i], zs[i + 1]) > ds_max;
                if (!split) {
                    if (i > 0)
                        split = turn_angle(zs[i - 1], zs[i], zs[i + 1]) > theta_max;
                    else if (have_pred)
                        split = turn_angle(pred, zs[i], zs[i + 1]) > theta_max;
                }
                if (!split && i + 2 < us.size())
                    split = turn_angle(zs[i], zs[i + 1], zs[i + 2]) > theta_max;
                if (split && us[i + 1] - us[i] > du_min) {
                    double um = 0.5 * (us[i] + us[i + 1]);
                    nus.push_back(um);
                    nzs.push_back(eval_node(mp, forward, curve.map_power, chord, um, piece));
                    changed = true;
                }
                nus.push_back(us[i + 1]);
                nzs.push_back(zs[i + 1]);
            }
            us.swap(nus);
            zs.swap(nzs);
            if (!changed) break;
        }

        if (curve.size() + us.size() > max_points)
            throw std::runtime_error("grow_manifold: point budget exceeded; achieved arc length " +
                                     std::to_string(curve.length()));

        curve.piece_first.push_back(piece == 0 ? 0 : curve.size());
        for (std::size_t i = 0; i < us.size(); ++i) {
            if (piece > 0 && i == 0) continue;  // seam node owned by the previous piece
            append_node(zs[i], us[i], piece);
        }

        double length = curve.length();
        if (spec.base >= 0.0) {
            if (curve.base_piece < 0 && length >= spec.base) curve.base_piece = piece;
            if (curve.base_piece >= 0 && piece >= curve.base_piece + spec.extra_pieces) break;
        } else if (length >= spec.target) {
            break;
        }
        if (piece > 4000)
            throw std::runtime_error(
                "grow_manifold: piece limit exceeded; achieved arc length " +
                std::to_string(curve.length()));
    }
    return curve;
}

}  // namespace

ManifoldCurve grow_manifold(const MapParams& mp, const FixedPointInfo& anchor, ManifoldKind kind,
                            double target_arclength, double ds_max, double theta_max, int branch,
                            bool inverted_dynamics, std::size_t max_points) {
    if (!(target_arclength > 0.0))
        throw std::invalid_argument("grow_manifold: target arc length must be positive");
    GrowSpec spec;
    spec.target = target_arclength;
    ManifoldCurve curve = grow_engine(mp, anchor, kind, spec, ds_max, theta_max, branch,
                                      inverted_dynamics, max_points);
    return truncate(curve, target_arclength);
}

ManifoldCurve grow_manifold_iterates(const MapParams& mp, const FixedPointInfo& anchor,
                                     ManifoldKind kind, int t, double base_arclength,
                                     double ds_max, double theta_max, int branch,
                                     bool inverted_dynamics, std::size_t max_points) {
    if (t < 0) throw std::invalid_argument("grow_manifold_iterates: t must be >= 0");
    if (!(base_arclength > 0.0))
        throw std::invalid_argument("grow_manifold_iterates: base arc length must be positive");
    GrowSpec spec;
    spec.base = base_arclength;
    spec.extra_pieces = t;
    ManifoldCurve curve = grow_engine(mp, anchor, kind, spec, ds_max, theta_max, branch,
                                      inverted_dynamics, max_points);
    curve.iterates = t;
    return curve;
}

ManifoldCurve truncate(const ManifoldCurve& curve, double arclength) {
    if (curve.size() < 2) throw std::invalid_argument("truncate: curve has fewer than 2 points");
    std::size_t n = 2;
    while (n < curve.size() && curve.ell[n] <= arclength) ++n;
    if (n < curve.size()) ++n;  // include the node that crosses the cut
    ManifoldCurve out = curve;
    out.pts.assign(curve.pts.begin(), curve.pts.begin() + n);
    out.lift.assign(curve.lift.begin(), curve.lift.begin() + n);
    out.ell.assign(curve.ell.begin(), curve.ell.begin() + n);
    out.history.assign(curve.history.begin(), curve.history.begin() + n);
    out.piece_first.clear();
    for (std::size_t pf : curve.piece_first)
        if (pf < n) out.piece_first.push_back(pf);
    return out;
}

Orbit node_orbit(const ManifoldCurve& curve, std::size_t i) {
    if (i >= curve.size()) throw std::invalid_argument("node_orbit: index out of range");
    const ManifoldNode& h = curve.history[i];
    long long total = static_cast<long long>(curve.map_power) * h.piece;
    if (curve.forward_expanding())
        return iterate(curve.params, chord_point(curve_chord(curve), h.u), total);
    return iterate(curve.params, curve.pts[i], total);
}

namespace {

// Uniform spatial hash over a curve's segments (binned by midpoint), used for
// nearest-segment queries and segment-pair candidate generation. Cell size is
// at least twice the longest segment so a 3x3 neighborhood bounds any overlap.
struct SegmentGrid {
    const ManifoldCurve* curve = nullptr;
    int n = 1;
    double h = 1.0;
    double max_seg = 0.0;
    std::vector<int> start;  // CSR offsets, size n*n + 1
    std::vector<int> segs;

    int cell_of(double x, double p) const {
        int ix = static_cast<int>(wrap01(x) * n);
        int ip = static_cast<int>(wrap01(p) * n);
        if (ix >= n) ix = n - 1;
        if (ip >= n) ip = n - 1;
        return ix * n + ip;
    }
};

SegmentGrid build_grid(const ManifoldCurve& c, double h_min = 0.0) {
    SegmentGrid g;
    g.curve = &c;
    std::size_t nseg = c.size() - 1;
    for (std::size_t i = 0; i < nseg; ++i) g.max_seg = std::max(g.max_seg, c.ell[i + 1] - c.ell[i]);
    double h_req = std::max({2.0 * g.max_seg, 1.0 / 1024.0, h_min});
    g.n = std::max(1, static_cast<int>(std::floor(1.0 / h_req)));
    g.h = 1.0 / g.n;

    std::vector<int> cell(nseg);
    std::vector<int> count(static_cast<std::size_t>(g.n) * g.n, 0);
    for (std::size_t i = 0; i < nseg; ++i) {
        const Point& a = c.pts[i];
        const Point& b = c.pts[i + 1];
        cell[i] = g.cell_of(a.x + 0.5 * mi(b.x - a.x), a.p + 0.5 * mi(b.p - a.p));
        ++count[cell[i]];
    }
    g.start.assign(count.size() + 1, 0);
    for (std::size_t k = 0; k < count.size(); ++k) g.start[k + 1] = g.start[k] + count[k];
    g.segs.resize(nseg);
    std::vector<int> fill(g.start.begin(), g.start.end() - 1);
    for (std::size_t i = 0; i < nseg; ++i) g.segs[fill[cell[i]]++] = static_cast<int>(i);
    return g;
}

// Distance from q to segment i of the grid's curve, via the nearest image.
double point_segment_dist(const ManifoldCurve& c, std::size_t i, const Point& q) {
    double ax = q.x + mi(c.pts[i].x - q.x);
    double ap = q.p + mi(c.pts[i].p - q.p);
    double dx = mi(c.pts[i + 1].x - c.pts[i].x);
    double dp = mi(c.pts[i + 1].p - c.pts[i].p);
    double len2 = dx * dx + dp * dp;
    double s = len2 > 0.0 ? ((q.x - ax) * dx + (q.p - ap) * dp) / len2 : 0.0;
    s = std::clamp(s, 0.0, 1.0);
    return std::hypot(ax + s * dx - q.x, ap + s * dp - q.p);
}

double grid_point_distance(const SegmentGrid& g, const Point& q) {
    const ManifoldCurve& c = *g.curve;
    double best = std::numeric_limits<double>::infinity();
    int qx = g.cell_of(q.x, q.p) / g.n;
    int qp = g.cell_of(q.x, q.p) % g.n;
    for (int k = 0;; ++k) {
        if (k > 0 && (static_cast<double>(k - 1) * g.h - 0.5 * g.max_seg) >= best) break;
        if (2 * k + 1 > g.n) {
            // Ring wraps the whole torus: finish with a full scan.
            for (std::size_t i = 0; i + 1 < c.size(); ++i)
                best = std::min(best, point_segment_dist(c, i, q));
            break;
        }
        for (int dx = -k; dx <= k; ++dx) {
            for (int dp = -k; dp <= k; ++dp) {
                if (std::max(std::abs(dx), std::abs(dp)) != k) continue;
                int ix = ((qx + dx) % g.n + g.n) % g.n;
                int ip = ((qp + dp) % g.n + g.n) % g.n;
                int cellk = ix * g.n + ip;
                for (int s = g.start[cellk]; s < g.start[cellk + 1]; ++s)
                    best = std::min(best, point_segment_dist(c, g.segs[s], q));
            }
        }
        if (best == 0.0) break;
    }
    return best;
}

}  // namespace

double distance_to_curve(const ManifoldCurve& curve, const Point& z) {
    if (curve.size() < 2)
        throw std::invalid_argument("distance_to_curve: curve has fewer than 2 points");
    SegmentGrid g = build_grid(curve);
    return grid_point_distance(g, z);
}

double manifold_distance(const ManifoldCurve& a, const ManifoldCurve& b) {
    if (a.size() < 2 || b.size() < 2)
        throw std::invalid_argument("manifold_distance: curves must have at least 2 points");
    if (a.forward_expanding() != b.forward_expanding())
        throw std::invalid_argument("manifold_distance: curves expand in opposite time directions");
    SegmentGrid ga = build_grid(a);
    SegmentGrid gb = build_grid(b);
    double worst = 0.0;
    for (const Point& q : a.pts) worst = std::max(worst, grid_point_distance(gb, q));
    for (const Point& q : b.pts) worst = std::max(worst, grid_point_distance(ga, q));
    return worst;
}

double manifold_distance_directed(const ManifoldCurve& from, const ManifoldCurve& to) {
    if (from.size() < 2 || to.size() < 2)
        throw std::invalid_argument(
            "manifold_distance_directed: curves must have at least 2 points");
    SegmentGrid g = build_grid(to);
    double worst = 0.0;
    for (const Point& q : from.pts) worst = std::max(worst, grid_point_distance(g, q));
    return worst;
}

CausticReport caustic_count(const ManifoldCurve& curve) {
    if (curve.size() < 3)
        throw std::invalid_argument("caustic_count: need at least 3 points");
    CausticReport rep;
    // Segment slopes dx/dl at segment midpoints; a fold sits between
    // consecutive segments whose dx changes sign.
    long long prev_idx = -1;
    int prev_sign = 0;
    long long last_caustic_idx = -100;
    for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
        double dx = curve.lifted_x(i + 1) - curve.lifted_x(i);
        double ds = curve.ell[i + 1] - curve.ell[i];
        if (dx == 0.0 || ds == 0.0) continue;
        int s = dx > 0.0 ? 1 : -1;
        if (prev_sign != 0 && s != prev_sign) {
            double m0 = 0.5 * (curve.ell[prev_idx] + curve.ell[prev_idx + 1]);
            double m1 = 0.5 * (curve.ell[i] + curve.ell[i + 1]);
            double g0 = (curve.lifted_x(prev_idx + 1) - curve.lifted_x(prev_idx)) /
                        (curve.ell[prev_idx + 1] - curve.ell[prev_idx]);
            double g1 = dx / ds;
            double f = g0 / (g0 - g1);
            double ell_star = m0 + f * (m1 - m0);
            double x0 = 0.5 * (curve.lifted_x(prev_idx) + curve.lifted_x(prev_idx + 1));
            double x1 = 0.5 * (curve.lifted_x(i) + curve.lifted_x(i + 1));
            rep.locations.push_back({ell_star, wrap01(x0 + f * (x1 - x0))});
            if (static_cast<long long>(i) - last_caustic_idx < 2) rep.under_resolved = true;
            last_caustic_idx = static_cast<long long>(i);
        }
        prev_sign = s;
        prev_idx = static_cast<long long>(i);
    }
    return rep;
}

namespace {

// Signed \int p dx along the stored lift from (seg_a, frac_a) to (seg_b, frac_b);
// negative when b precedes a along the curve.
double arc_pdx(const ManifoldCurve& curve, std::size_t seg_a, double frac_a, std::size_t seg_b,
               double frac_b) {
    auto lx = [&](std::size_t i) { return curve.lifted_x(i); };
    auto lp = [&](std::size_t i) { return curve.lifted_p(i); };
    auto at = [&](std::size_t seg, double frac, double& x, double& p) {
        x = lx(seg) + frac * (lx(seg + 1) - lx(seg));
        p = lp(seg) + frac * (lp(seg + 1) - lp(seg));
    };
    bool flip = (seg_b < seg_a) || (seg_b == seg_a && frac_b < frac_a);
    std::size_t s0 = flip ? seg_b : seg_a, s1 = flip ? seg_a : seg_b;
    double f0 = flip ? frac_b : frac_a, f1 = flip ? frac_a : frac_b;

    double x0, p0, x1, p1;
    at(s0, f0, x0, p0);
    at(s1, f1, x1, p1);
    double area;
    if (s0 == s1) {
        area = 0.5 * (p0 + p1) * (x1 - x0);
    } else {
        area = 0.5 * (p0 + lp(s0 + 1)) * (lx(s0 + 1) - x0);
        for (std::size_t i = s0 + 1; i < s1; ++i)
            area += 0.5 * (lp(i) + lp(i + 1)) * (lx(i + 1) - lx(i));
        area += 0.5 * (lp(s1) + p1) * (x1 - lx(s1));
    }
    return flip ? -area : area;
}

Point crossing_point(const ManifoldCurve& u, const HeteroclinicCrossing& c) {
    const Point& a = u.pts[c.seg_u];
    const Point& b = u.pts[c.seg_u + 1];
    return {wrap01(a.x + c.frac_u * mi(b.x - a.x)), wrap01(a.p + c.frac_u * mi(b.p - a.p))};
}

}  // namespace

IntersectionSet heteroclinic_intersections(const ManifoldCurve& unstable_curve,
                                           const ManifoldCurve& stable_curve, double angle_tol) {
    if (unstable_curve.size() < 2 || stable_curve.size() < 2)
        throw std::invalid_argument("heteroclinic_intersections: curves must have >= 2 points");
    if (!unstable_curve.forward_expanding() || stable_curve.forward_expanding())
        throw std::invalid_argument(
            "heteroclinic_intersections: expected an unstable and a stable curve");

    IntersectionSet out;
    // Cell size covers both curves' segments so the 3x3 neighborhood of an
    // unstable segment's midpoint contains every stable segment it can touch.
    double max_seg_u = 0.0;
    for (std::size_t i = 0; i + 1 < unstable_curve.size(); ++i)
        max_seg_u = std::max(max_seg_u, unstable_curve.ell[i + 1] - unstable_curve.ell[i]);
    SegmentGrid gs = build_grid(stable_curve, 2.0 * max_seg_u);

    for (std::size_t i = 0; i + 1 < unstable_curve.size(); ++i) {
        const Point& p0 = unstable_curve.pts[i];
        const Point& p1 = unstable_curve.pts[i + 1];
        double d1x = mi(p1.x - p0.x), d1p = mi(p1.p - p0.p);
        double mx = p0.x + 0.5 * d1x, mp_ = p0.p + 0.5 * d1p;
        int cx = gs.cell_of(mx, mp_) / gs.n;
        int cp = gs.cell_of(mx, mp_) % gs.n;
        for (int dxc = -1; dxc <= 1; ++dxc) {
            for (int dpc = -1; dpc <= 1; ++dpc) {
                int ix = ((cx + dxc) % gs.n + gs.n) % gs.n;
                int ip = ((cp + dpc) % gs.n + gs.n) % gs.n;
                int cellk = ix * gs.n + ip;
                for (int s = gs.start[cellk]; s < gs.start[cellk + 1]; ++s) {
                    int j = gs.segs[s];
                    const Point& q0r = stable_curve.pts[j];
                    const Point& q1r = stable_curve.pts[j + 1];
                    double q0x = p0.x + mi(q0r.x - p0.x);
                    double q0p = p0.p + mi(q0r.p - p0.p);
                    double d2x = mi(q1r.x - q0r.x), d2p = mi(q1r.p - q0r.p);
                    double rx = q0x - p0.x, rp = q0p - p0.p;
                    double det = d2x * d1p - d2p * d1x;
                    double l1 = std::hypot(d1x, d1p), l2 = std::hypot(d2x, d2p);
                    if (l1 == 0.0 || l2 == 0.0) continue;
                    double sin_ang = std::fabs(det) / (l1 * l2);
                    if (sin_ang < angle_tol) {
                        // Near-tangent pair: report a touch if they overlap.
                        double dmin = point_segment_dist(stable_curve, j, p0);
                        dmin = std::min(dmin, point_segment_dist(stable_curve, j, p1));
                        if (dmin < 1e-9) {
                            HeteroclinicCrossing t;
                            t.seg_u = i;
                            t.seg_s = static_cast<std::size_t>(j);
                            t.frac_u = 0.5;
                            t.frac_s = 0.5;
                            t.sin_angle = sin_ang;
                            t.ell_u = unstable_curve.ell[i] + 0.5 * l1;
                            t.ell_s = stable_curve.ell[j] + 0.5 * l2;
                            t.z = crossing_point(unstable_curve, t);
                            out.tangential.push_back(t);
                        }
                        continue;
                    }
                    double su = (d2x * rp - d2p * rx) / det;
                    double sw = (d1x * rp - d1p * rx) / det;
                    if (su < 0.0 || su >= 1.0 || sw < 0.0 || sw >= 1.0) continue;
                    HeteroclinicCrossing c;
                    c.seg_u = i;
                    c.seg_s = static_cast<std::size_t>(j);
                    c.frac_u = su;
                    c.frac_s = sw;
                    c.sin_angle = sin_ang;
                    c.ell_u = unstable_curve.ell[i] + su * l1;
                    c.ell_s = stable_curve.ell[j] + sw * l2;
                    c.z = {wrap01(p0.x + su * d1x), wrap01(p0.p + su * d1p)};
                    out.crossings.push_back(c);
                }
            }
        }
    }

    std::sort(out.crossings.begin(), out.crossings.end(),
              [](const HeteroclinicCrossing& a, const HeteroclinicCrossing& b) {
                  return a.ell_u < b.ell_u;
              });
    std::vector<HeteroclinicCrossing> dedup;
    for (const auto& c : out.crossings) {
        if (!dedup.empty() && std::fabs(c.ell_u - dedup.back().ell_u) < 1e-12 &&
            std::fabs(c.ell_s - dedup.back().ell_s) < 1e-12)
            continue;
        dedup.push_back(c);
    }
    out.crossings.swap(dedup);

    // Loop between successive crossings: circulation of p dx around the
    // unstable arc forward and the stable arc back.  Computed as the
    // difference of the two arc integrals so it stays defined when the arcs
    // wind the torus, and telescopes exactly over crossing chains.
    for (std::size_t k = 0; k + 1 < out.crossings.size(); ++k) {
        const auto& ca = out.crossings[k];
        const auto& cb = out.crossings[k + 1];
        double along_u = arc_pdx(unstable_curve, ca.seg_u, ca.frac_u, cb.seg_u, cb.frac_u);
        double along_s = arc_pdx(stable_curve, ca.seg_s, ca.frac_s, cb.seg_s, cb.frac_s);
        out.loop_areas.push_back(along_u - along_s);
    }
    return out;
}

namespace {

struct CurveLocation {
    std::size_t seg = 0;
    double frac = 0.0;
    double dist = std::numeric_limits<double>::infinity();
};

CurveLocation locate_on_curve(const ManifoldCurve& c, const Point& q) {
    CurveLocation loc;
    for (std::size_t i = 0; i + 1 < c.size(); ++i) {
        double ax = q.x + mi(c.pts[i].x - q.x);
        double ap = q.p + mi(c.pts[i].p - q.p);
        double dx = mi(c.pts[i + 1].x - c.pts[i].x);
        double dp = mi(c.pts[i + 1].p - c.pts[i].p);
        double len2 = dx * dx + dp * dp;
        double s = len2 > 0.0 ? ((q.x - ax) * dx + (q.p - ap) * dp) / len2 : 0.0;
        s = std::clamp(s, 0.0, 1.0);
        double d = std::hypot(ax + s * dx - q.x, ap + s * dp - q.p);
        if (d < loc.dist) loc = {i, s, d};
    }
    return loc;
}

}  // namespace

double area_action(const ManifoldCurve& curve, const Point& pt_a, const Point& pt_b) {
    if (curve.size() < 2) throw std::invalid_argument("area_action: curve has fewer than 2 points");
    CurveLocation a = locate_on_curve(curve, pt_a);
    CurveLocation b = locate_on_curve(curve, pt_b);
    if (a.dist > 1e-6 || b.dist > 1e-6)
        throw std::invalid_argument("area_action: point is not on the curve");
    return arc_pdx(curve, a.seg, a.frac, b.seg, b.frac);
}

double perturbative_action_difference(const Orbit& orbit, double deltaK) {
    if (orbit.size() < 2) return 0.0;
    double acc = 0.0;
    for (std::size_t j = 0; j + 1 < orbit.size(); ++j) acc += std::cos(TWO_PI * orbit.pts[j].x);
    return deltaK / (TWO_PI * TWO_PI) * acc;
}

namespace {

FixedPointInfo matching_fixed_point(const MapParams& mp, const Point& z) {
    auto fps = fixed_points(mp);
    return torus_dist(fps[0].z, z) <= torus_dist(fps[1].z, z) ? fps[0] : fps[1];
}

// Trailing t-step lifted positions of the history ending at node (u, piece).
// The window restarts from a torus representative of its first point; when
// `align` is given the representative is taken in the image nearest to it so
// a paired window shares its lift. Returns t+1 lifted x values.
std::vector<double> trailing_window(const ManifoldCurve& curve, double u, int piece, int t,
                                    const Point* align, Point* start_out) {
    ChordSpec chord = curve_chord(curve);
    Point c = chord_point(chord, u);
    long long total = static_cast<long long>(curve.map_power) * piece;
    Point w0;
    if (total >= t)
        w0 = iterate(curve.params, c, total - t).pts.back();
    else
        w0 = iterate(curve.params, c, -(t - total)).pts.back();
    double x = w0.x, p = w0.p;
    if (align) {
        x = align->x + mi(w0.x - align->x);
        p = align->p + mi(w0.p - align->p);
    }
    if (start_out) *start_out = w0;
    std::vector<double> xs;
    xs.reserve(t + 1);
    xs.push_back(x);
    for (int k = 0; k < t; ++k) {
        step_lifted(curve.params, x, p);
        xs.push_back(x);
    }
    return xs;
}

}  // namespace

ActionDifferenceSeries action_difference_series(const MapParams& mp, double deltaK,
                                                const FixedPointInfo& anchor, int t,
                                                int n_points, double ds_max, double theta_max,
                                                double base_arclength) {
    if (t < 2) throw std::invalid_argument("action_difference_series: t must be >= 2");
    if (n_points < 2) throw std::invalid_argument("action_difference_series: n_points must be >= 2");

    ManifoldCurve c0 = grow_manifold_iterates(mp, anchor, ManifoldKind::unstable, t,
                                              base_arclength, ds_max, theta_max);
    ActionDifferenceSeries out;
    out.t = t;
    out.deltaK = deltaK;

    MapParams mp1{mp.K + deltaK};
    ManifoldCurve c1;
    if (deltaK != 0.0) {
        FixedPointInfo anchor1 = matching_fixed_point(mp1, anchor.z);
        c1 = grow_manifold_iterates(mp1, anchor1, ManifoldKind::unstable, t, base_arclength,
                                    ds_max, theta_max);
        if (c1.map_power != c0.map_power)
            throw std::runtime_error("action_difference_series: anchor type changed under deltaK");
    }

    // Lifted-x interval buckets over the perturbed curve's segments.
    double bx_lo = 0.0, bx_hi = 0.0, bh = 1.0;
    std::vector<std::vector<int>> buckets;
    if (deltaK != 0.0) {
        bx_lo = c1.lifted_x(0);
        bx_hi = bx_lo;
        for (std::size_t i = 0; i < c1.size(); ++i) {
            bx_lo = std::min(bx_lo, c1.lifted_x(i));
            bx_hi = std::max(bx_hi, c1.lifted_x(i));
        }
        bh = 0.01;
        std::size_t nb = static_cast<std::size_t>((bx_hi - bx_lo) / bh) + 2;
        buckets.assign(nb, {});
        for (std::size_t i = 0; i + 1 < c1.size(); ++i) {
            double lo = std::min(c1.lifted_x(i), c1.lifted_x(i + 1));
            double hi = std::max(c1.lifted_x(i), c1.lifted_x(i + 1));
            std::size_t k0 = static_cast<std::size_t>((lo - bx_lo) / bh);
            std::size_t k1 = static_cast<std::size_t>((hi - bx_lo) / bh);
            for (std::size_t k = k0; k <= k1 && k < buckets.size(); ++k)
                buckets[k].push_back(static_cast<int>(i));
        }
    }

    ChordSpec chord1 = deltaK != 0.0 ? curve_chord(c1) : ChordSpec{};

    std::size_t last_node = std::numeric_limits<std::size_t>::max();
    for (int k = 0; k < n_points; ++k) {
        double target = (k + 0.5) / n_points * c0.length();
        std::size_t idx =
            std::lower_bound(c0.ell.begin(), c0.ell.end(), target) - c0.ell.begin();
        if (idx >= c0.size()) idx = c0.size() - 1;
        if (idx > 0 && target - c0.ell[idx - 1] < c0.ell[idx] - target) --idx;
        if (idx == last_node) continue;
        last_node = idx;

        if (deltaK == 0.0) {
            out.ell.push_back(c0.ell[idx]);
            out.dS_exact.push_back(0.0);
            out.dS_pert.push_back(0.0);
            out.partner_dp.push_back(0.0);
            continue;
        }

        double x_t = c0.lifted_x(idx);
        double p_t = c0.pts[idx].p;

        // Candidate branches: perturbed segments whose lifted-x span covers x_t.
        struct Cand {
            int seg;
            double adp;
            double dp;
        };
        std::vector<Cand> cands;
        long long kb = static_cast<long long>((x_t - bx_lo) / bh);
        if (kb >= 0 && kb < static_cast<long long>(buckets.size())) {
            for (int segi : buckets[kb]) {
                double xa = c1.lifted_x(segi), xb = c1.lifted_x(segi + 1);
                if ((x_t < xa && x_t < xb) || (x_t > xa && x_t > xb)) continue;
                double den = xb - xa;
                if (std::fabs(den) < 1e-15) continue;
                double f = (x_t - xa) / den;
                double pc = c1.pts[segi].p + f * mi(c1.pts[segi + 1].p - c1.pts[segi].p);
                double dp = mi(pc - p_t);
                cands.push_back({segi, std::fabs(dp), dp});
            }
        }
        std::sort(cands.begin(), cands.end(),
                  [](const Cand& a, const Cand& b) { return a.adp < b.adp; });
        if (cands.empty() || cands[0].adp > 0.05) {
            ++out.excluded;
            continue;
        }
        if (cands.size() >= 2 && cands[1].adp - cands[0].adp < 1e-6) {
            ++out.excluded;  // fold region: branch assignment ambiguous
            continue;
        }

        // Refine the partner's chord parameter until its final lifted x
        // matches the sample's.
        int seg = cands[0].seg;
        double ua = c1.history[seg].u;
        int pa = c1.history[seg].piece;
        if (ua >= 1.0) {
            ua = 0.0;
            ++pa;
        }
        double ub = c1.history[seg + 1].u;
        int pb = c1.history[seg + 1].piece;
        if (pb == pa + 1 && ub == 0.0) ub = 1.0;
        if (pb != pa && !(pb == pa + 1 && c1.history[seg + 1].u == 0.0)) {
            // Seam bookkeeping failed to align; treat as unmatched.
            ++out.excluded;
            continue;
        }
        double ga = c1.lifted_x(seg) - x_t;
        double gb = c1.lifted_x(seg + 1) - x_t;
        if (ga * gb > 0.0) {
            ++out.excluded;
            continue;
        }
        double ulo = ua, uhi = ub, glo = ga;
        Point zp{};
        double gm = 0.0;
        for (int it = 0; it < 60; ++it) {
            double um = 0.5 * (ulo + uhi);
            zp = eval_node(mp1, true, c1.map_power, chord1, um, pa);
            gm = c1.lifted_x(seg) + mi(zp.x - c1.pts[seg].x) - x_t;
            if (std::fabs(gm) < 1e-10) {
                ulo = uhi = um;
                break;
            }
            if ((gm > 0.0) == (glo > 0.0)) {
                ulo = um;
                glo = gm;
            } else {
                uhi = um;
            }
        }
        double u_star = 0.5 * (ulo + uhi);
        zp = eval_node(mp1, true, c1.map_power, chord1, u_star, pa);

        Point sample_start;
        std::vector<double> xs0 =
            trailing_window(c0, c0.history[idx].u, c0.history[idx].piece, t, nullptr,
                            &sample_start);
        std::vector<double> xs1 = trailing_window(c1, u_star, pa, t, &sample_start, nullptr);

        out.ell.push_back(c0.ell[idx]);
        out.dS_exact.push_back(path_action(mp1, xs1) - path_action(mp, xs0));
        double acc = 0.0;
        for (int j = 0; j < t; ++j) acc += std::cos(TWO_PI * xs0[j]);
        out.dS_pert.push_back(deltaK / (TWO_PI * TWO_PI) * acc);
        out.partner_dp.push_back(mi(zp.p - p_t));
    }
    return out;
}

ActionHistogram action_difference_histogram(const MapParams& mp, double deltaK,
                                            const FixedPointInfo& anchor, int t,
                                            long long n_points) {
    if (t < 4) throw std::invalid_argument("action_difference_histogram: t must be >= 4");
    if (n_points < 10000)
        throw std::invalid_argument("action_difference_histogram: n_points must be >= 10000");
    if (anchor.stability != Stability::hyperbolic)
        throw std::invalid_argument("action_difference_histogram: anchor must be hyperbolic");

    ActionHistogram rep;
    rep.t = t;
    rep.deltaK = deltaK;
    rep.n_samples = n_points;

    // Seed chord of the unstable curve; windows end this many steps out so the
    // longest trailing window still sits in the developed chaotic region.
    const double seed_dist = 1e-8;
    double lam = std::fabs(anchor.lambda_u);
    int m = anchor.lambda_u > 0.0 ? 1 : 2;
    int settle = static_cast<int>(std::ceil(std::log(1.0 / seed_dist) / std::log(lam))) + 2;
    int t_hi = std::max(12, t);
    int t_lo = std::min(4, t);
    long long j_dev = settle + t_hi;

    double norm = std::hypot(anchor.ev_u[0], anchor.ev_u[1]);
    double vx = anchor.ev_u[0] / norm, vp = anchor.ev_u[1] / norm;
    Point z0{wrap01(anchor.z.x + seed_dist * vx), wrap01(anchor.z.p + seed_dist * vp)};
    Point z1 = z0;
    for (int k = 0; k < m; ++k) z1 = step(mp, z1);
    ChordSpec chord{z0, z1, mi(z1.x - z0.x), mi(z1.p - z0.p)};
    double cn = std::hypot(chord.dx, chord.dp);
    double tx0 = chord.dx / cn, tp0 = chord.dp / cn;

    // Stretch factor of the chord tangent after j_dev steps gives the final
    // arc-length weight of each chord parameter; quantiles of that weight
    // sample the manifold uniformly in final arc length, with no RNG.
    const long long n_grid = std::max<long long>(131072, 4 * n_points);
    std::vector<double> logw(n_grid);
    double logw_max = -std::numeric_limits<double>::infinity();
    for (long long g = 0; g < n_grid; ++g) {
        double u = (g + 0.5) / n_grid;
        Point z = chord_point(chord, u);
        double tx = tx0, tp = tp0, acc = 0.0;
        for (long long k = 0; k < j_dev; ++k) {
            TangentFrame J = jacobian(mp, z.x);
            double nx = J.a11 * tx + J.a12 * tp;
            double np_ = J.a21 * tx + J.a22 * tp;
            double nn = std::hypot(nx, np_);
            acc += std::log(nn);
            tx = nx / nn;
            tp = np_ / nn;
            z = step(mp, z);
        }
        logw[g] = acc;
        logw_max = std::max(logw_max, acc);
    }
    std::vector<double> cum(n_grid + 1, 0.0);
    for (long long g = 0; g < n_grid; ++g) cum[g + 1] = cum[g] + std::exp(logw[g] - logw_max);
    double W = cum[n_grid];

    // Quantile-sampled trailing action sums for every window length at once.
    int n_sweep = t_hi - t_lo + 1;
    std::vector<std::vector<double>> samples(n_sweep);
    for (auto& v : samples) v.reserve(n_points);
    const double pref = deltaK / (TWO_PI * TWO_PI);
    long long g_at = 0;
    for (long long i = 0; i < n_points; ++i) {
        double q = (i + 0.5) / n_points * W;
        while (g_at + 1 < n_grid && cum[g_at + 1] < q) ++g_at;
        double w = cum[g_at + 1] - cum[g_at];
        double f = w > 0.0 ? (q - cum[g_at]) / w : 0.5;
        double u = (g_at + f) / n_grid;
        Point z = chord_point(chord, u);
        std::vector<double> cosv(j_dev);
        for (long long k = 0; k < j_dev; ++k) {
            cosv[k] = std::cos(TWO_PI * z.x);
            z = step(mp, z);
        }
        double suffix = 0.0;
        std::vector<double> suf(j_dev + 1, 0.0);
        for (long long k = j_dev - 1; k >= 0; --k) {
            suffix += cosv[k];
            suf[k] = suffix;
        }
        for (int tt = t_lo; tt <= t_hi; ++tt)
            samples[tt - t_lo].push_back(pref * suf[j_dev - tt]);
    }

    const std::vector<double>& prim = samples[t - t_lo];
    double n = static_cast<double>(prim.size());
    double mean = 0.0;
    for (double v : prim) mean += v;
    mean /= n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : prim) {
        double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    rep.mean = mean;
    rep.variance = m2;
    double sd = std::sqrt(m2);
    rep.skewness = m2 > 0.0 ? m3 / (m2 * sd) : 0.0;
    rep.excess_kurtosis = m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : 0.0;

    const int nbins = 61;
    rep.bin_centers.assign(nbins, 0.0);
    rep.counts.assign(nbins, 0.0);
    rep.gaussian_fit.assign(nbins, 0.0);
    double lo = mean - 4.5 * sd, hi = mean + 4.5 * sd;
    double bw = (hi - lo) / nbins;
    if (bw > 0.0) {
        for (int b = 0; b < nbins; ++b) rep.bin_centers[b] = lo + (b + 0.5) * bw;
        for (double v : prim) {
            int b = static_cast<int>((v - lo) / bw);
            b = std::clamp(b, 0, nbins - 1);
            rep.counts[b] += 1.0;
        }
        for (int b = 0; b < nbins; ++b) {
            double zc = (rep.bin_centers[b] - mean) / sd;
            rep.gaussian_fit[b] = n * bw * std::exp(-0.5 * zc * zc) / (sd * std::sqrt(2.0 * M_PI));
        }
    }

    // Lilliefors normality test: KS distance to the fitted Gaussian, with the
    // 1%-level critical value 1.0348/sqrt(n) (Monte Carlo calibrated for the
    // estimated-parameter case; good for n >= 1000).
    if (m2 > 0.0) {
        std::vector<double> sorted(prim);
        std::sort(sorted.begin(), sorted.end());
        double dmax = 0.0;
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            double z = (sorted[i] - mean) / sd;
            double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
            double up = (i + 1.0) / n - cdf;
            double dn = cdf - i / n;
            dmax = std::max({dmax, up, dn});
        }
        rep.lilliefors_stat = dmax;
        rep.lilliefors_crit_1pct = 1.0348 / std::sqrt(n);
        rep.normal_at_1pct = dmax < rep.lilliefors_crit_1pct;
    }

    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (int tt = t_lo; tt <= t_hi; ++tt) {
        const std::vector<double>& sv = samples[tt - t_lo];
        double mu = 0.0;
        for (double v : sv) mu += v;
        mu /= sv.size();
        double var = 0.0;
        for (double v : sv) var += (v - mu) * (v - mu);
        var /= sv.size();
        rep.sweep_t.push_back(tt);
        rep.sweep_var.push_back(var);
        sx += tt;
        sy += var;
        sxx += static_cast<double>(tt) * tt;
        sxy += tt * var;
        syy += var * var;
    }
    double ns = static_cast<double>(rep.sweep_t.size());
    double den = ns * sxx - sx * sx;
    rep.slope = (ns * sxy - sx * sy) / den;
    rep.intercept = (sy - rep.slope * sx) / ns;
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < rep.sweep_t.size(); ++i) {
        double fit = rep.intercept + rep.slope * rep.sweep_t[i];
        ss_res += (rep.sweep_var[i] - fit) * (rep.sweep_var[i] - fit);
        ss_tot += (rep.sweep_var[i] - sy / ns) * (rep.sweep_var[i] - sy / ns);
    }
    rep.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    rep.diffusion_ratio =
        deltaK != 0.0 ? rep.slope / (deltaK * deltaK * action_diffusion_constant(mp.K)) : 0.0;
    return rep;
}

}  // namespace kr
