#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "kr/map.hpp"

namespace kr {

enum class ManifoldKind { unstable, stable };

// Provenance of a curve point: the parameter u in [0,1] on the primitive seed
// chord, pushed through `piece` applications of the growth generator. The
// generator is the map for unstable curves and the inverse map for stable
// ones, applied twice per piece at reflection-hyperbolic anchors.
struct ManifoldNode {
    double u = 0.0;
    int piece = 0;
};

// Piecewise-linear invariant curve of a hyperbolic fixed point. Points are
// stored as wrapped torus representatives plus integer lift counters chosen so
// consecutive lifted points are nearest images; all arc lengths, angles and
// areas are taken on that continuous lift.
struct ManifoldCurve {
    MapParams params;
    FixedPointInfo anchor;
    ManifoldKind kind = ManifoldKind::unstable;
    bool inverted_dynamics = false;  // grown against step_inverse/step swapped
    int branch = 1;                  // +1 along the oriented eigenvector, -1 opposite
    int map_power = 1;               // generator applications per piece (2 if lambda < 0)
    double seed_distance = 0.0;      // |seed chord start - anchor|
    Point seed0, seed1;              // primitive chord endpoints, seed1 = G(seed0)
    int base_piece = -1;             // set by grow_manifold_iterates: piece reaching base arc length
    int iterates = -1;               // set by grow_manifold_iterates: pieces grown past base_piece

    std::vector<Point> pts;                  // wrapped representatives
    std::vector<std::array<long long, 2>> lift;
    std::vector<double> ell;                 // cumulative arc length, ell[0] = 0
    std::vector<ManifoldNode> history;
    std::vector<std::size_t> piece_first;    // index of the first node of each piece

    std::size_t size() const { return pts.size(); }
    double length() const { return ell.empty() ? 0.0 : ell.back(); }
    int pieces() const { return static_cast<int>(piece_first.size()); }
    double lifted_x(std::size_t i) const { return pts[i].x + static_cast<double>(lift[i][0]); }
    double lifted_p(std::size_t i) const { return pts[i].p + static_cast<double>(lift[i][1]); }
    // True when the curve expands under the forward map (an unstable curve of
    // the given dynamics, or a stable curve grown with inverted dynamics).
    bool forward_expanding() const {
        return (kind == ManifoldKind::unstable) != inverted_dynamics;
    }
};

// Grows one branch of the invariant curve by fundamental-segment iteration:
// the chord [z0, G(z0)] with z0 on the eigenvector at distance 1e-8 from the
// anchor is mapped repeatedly, inserting chord-parameter midpoints until every
// gap is at most ds_max and every turning angle at most theta_max. Growth
// stops at the first piece boundary with total arc length >= target_arclength.
// Throws std::invalid_argument for a non-hyperbolic or non-fixed anchor or
// non-positive tolerances, and std::runtime_error (reporting the achieved arc
// length) if refinement would exceed max_points.
ManifoldCurve grow_manifold(const MapParams& mp, const FixedPointInfo& anchor, ManifoldKind kind,
                            double target_arclength, double ds_max = 1e-3, double theta_max = 0.2,
                            int branch = 1, bool inverted_dynamics = false,
                            std::size_t max_points = 4000000);

// Figure-scale growth by iterate count: grows until the cumulative arc length
// first reaches base_arclength (that piece index is recorded as base_piece),
// then exactly t more pieces. The result spans roughly base * lambda^t of arc
// length, so base_arclength fixes the scale that "t iterates" refers to.
ManifoldCurve grow_manifold_iterates(const MapParams& mp, const FixedPointInfo& anchor,
                                     ManifoldKind kind, int t, double base_arclength = 1e-3,
                                     double ds_max = 1e-3, double theta_max = 0.2, int branch = 1,
                                     bool inverted_dynamics = false,
                                     std::size_t max_points = 4000000);

// Prefix of the curve with arc length <= arclength (at least the seed chord).
ManifoldCurve truncate(const ManifoldCurve& curve, double arclength);

// Forward-time orbit attached to node i, reconstructed from the node's chord
// parameter. For a forward-expanding curve the orbit starts on the seed chord
// and ends at the node; otherwise it starts at the node and contracts onto the
// seed chord. The length is map_power * piece forward steps either way.
Orbit node_orbit(const ManifoldCurve& curve, std::size_t i);

// Distance from a wrapped point to the curve polyline in the torus metric.
double distance_to_curve(const ManifoldCurve& curve, const Point& z);

// Symmetric Hausdorff distance: the larger, over both curves, of the maximal
// distance from a curve point to the other polyline, in the torus metric.
// Curves must expand in the same time direction and have at least 2 points.
double manifold_distance(const ManifoldCurve& a, const ManifoldCurve& b);

// One-sided variant: the maximal distance from a node of `from` to the
// polyline `to`. Useful when `to` is grown past the window covered by `from`
// so the comparison is free of end-truncation artifacts.
double manifold_distance_directed(const ManifoldCurve& from, const ManifoldCurve& to);

struct Caustic {
    double ell = 0.0;  // arc-length position of the fold
    double x = 0.0;    // wrapped configuration-space location
};

struct CausticReport {
    std::vector<Caustic> locations;
    // Set when two folds are separated by fewer than 2 samples; the count is
    // then not trustworthy at the current refinement.
    bool under_resolved = false;

    int count() const { return static_cast<int>(locations.size()); }
};

// Folds of the configuration-space projection: sign changes of dx/dl along
// the curve. Requires at least 3 points.
CausticReport caustic_count(const ManifoldCurve& curve);

struct HeteroclinicCrossing {
    Point z;                  // wrapped crossing point
    double ell_u = 0.0;       // arc-length position on the unstable curve
    double ell_s = 0.0;       // arc-length position on the stable curve
    std::size_t seg_u = 0;    // segment index [seg, seg+1] on the unstable curve
    std::size_t seg_s = 0;
    double frac_u = 0.0;      // fraction along each segment
    double frac_s = 0.0;
    double sin_angle = 0.0;   // |sin| of the crossing angle
};

struct IntersectionSet {
    // Transversal crossings ordered by ell_u.
    std::vector<HeteroclinicCrossing> crossings;
    // Signed area of the loop bounded by the unstable arc from crossing j to
    // j+1 and the stable arc back: circulation of p dx around the loop,
    // evaluated as the difference of the two lifted arc integrals. Equals the
    // shoelace area of the enclosed polygon when the loop is contractible and
    // stays defined when an arc winds the torus. Sums over a crossing chain
    // telescope to the area_action difference between its endpoints. Size is
    // crossings.size() - 1 (or 0).
    std::vector<double> loop_areas;
    // Near-tangent touches (crossing angle below the tolerance), kept apart
    // from the transversal list rather than dropped.
    std::vector<HeteroclinicCrossing> tangential;
};

// Polyline crossings of an unstable curve with a stable curve, with the loop
// areas between successive crossings. Segments are compared through their
// nearest torus images, so the curves may be grown in different lifts.
IntersectionSet heteroclinic_intersections(const ManifoldCurve& unstable_curve,
                                           const ManifoldCurve& stable_curve,
                                           double angle_tol = 1e-6);

// Integral of p dx along the curve between two points on it (trapezoid rule on
// the lifted polyline, signed by traversal from pt_a to pt_b). Points farther
// than 1e-6 from the polyline are rejected.
double area_action(const ManifoldCurve& curve, const Point& pt_a, const Point& pt_b);

// First-order action shift of an orbit under K -> K + deltaK at fixed
// endpoints: (deltaK/4pi^2) * sum of cos(2pi x_j) over the orbit's kicks.
double perturbative_action_difference(const Orbit& orbit, double deltaK);

// Exact and first-order action differences between paired points of the
// unstable manifolds at K and K + deltaK, sampled along the K manifold.
struct ActionDifferenceSeries {
    std::vector<double> ell;       // arc-length positions of the kept samples
    std::vector<double> dS_exact;
    std::vector<double> dS_pert;
    // Signed transverse offset (p of the matched partner minus p of the
    // sample); it changes sign where the two manifolds cross.
    std::vector<double> partner_dp;
    int t = 0;
    double deltaK = 0.0;
    int excluded = 0;  // samples dropped for ambiguous or missing partners
};

// Grows both manifolds as t-iterate curves from base_arclength, samples
// n_points nodes uniformly in arc length along the K curve, matches each to
// the K + deltaK curve point with the same final lifted x (nearest branch in
// p, branches closer than 1e-6 in p flagged ambiguous and excluded), and
// differences the generating-function actions of the paired t-step histories.
// dS_pert is the first-order shift evaluated on the unperturbed history.
ActionDifferenceSeries action_difference_series(const MapParams& mp, double deltaK,
                                                const FixedPointInfo& anchor, int t,
                                                int n_points, double ds_max = 1e-3,
                                                double theta_max = 0.2,
                                                double base_arclength = 1e-3);

// Distribution of first-order action differences over the manifold at time t,
// with a Gaussian fit and a variance-growth sweep.
struct ActionHistogram {
    int t = 0;
    double deltaK = 0.0;
    long long n_samples = 0;
    std::vector<double> bin_centers;
    std::vector<double> counts;
    std::vector<double> gaussian_fit;  // fitted-Gaussian expected counts per bin
    double mean = 0.0;
    double variance = 0.0;
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
    // Lilliefors normality test (Kolmogorov-Smirnov against the fitted
    // Gaussian): statistic, 1%-level critical value, and the verdict.
    double lilliefors_stat = 0.0;
    double lilliefors_crit_1pct = 0.0;
    bool normal_at_1pct = false;
    // Variance of dS over trailing windows of length t' for t' in sweep_t,
    // with the least-squares line var = intercept + slope * t'.
    std::vector<int> sweep_t;
    std::vector<double> sweep_var;
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    // slope / (deltaK^2 * (1 + 2 J_2(K)) / (4 (2pi)^4)), the measured
    // convention factor relating the variance growth to the analytic
    // action-diffusion constant.
    double diffusion_ratio = 0.0;
};

// Samples n_points orbit histories distributed uniformly in final arc length
// along the unstable manifold (stretch-factor quantiles of the seed chord, so
// no random numbers are involved), takes the trailing t-step action shift of
// each, and histograms them. The sweep covers t' = 4..12 (extended to t if
// needed) on the same endpoints. Requires t >= 4 and n_points >= 10000.
ActionHistogram action_difference_histogram(const MapParams& mp, double deltaK,
                                            const FixedPointInfo& anchor, int t,
                                            long long n_points);

}  // namespace kr
