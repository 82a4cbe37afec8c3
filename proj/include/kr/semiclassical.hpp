#pragma once

#include <complex>
#include <vector>

#include "kr/manifold.hpp"
#include "kr/map.hpp"
#include "kr/quantum.hpp"

namespace kr {

// One saddle-point term of <Phi_beta|U^t|Phi_alpha>: a t-step orbit segment
// that starts on the unstable manifold of alpha's hyperbolic anchor inside
// alpha's packet neighborhood and ends on the stable manifold of beta's
// anchor inside beta's.
struct HeteroclinicOrbit {
    Orbit segment;           // t+1 map points with lift counters
    double action = 0.0;     // path_action over the lifted positions
    TangentFrame stability;  // tangent map across the whole segment
    // Sign flips of the transported manifold tangent's position component in
    // the drift-leading frame: caustic passages of the evolving packet.
    int maslov = 0;
    double ell_u = 0.0;    // signed arc length of the start along the unstable curve
    double ell_s = 0.0;    // signed arc length of the end along the stable curve
    double r_alpha = 0.0;  // start offset from alpha's center, packet sigma units
    double r_beta = 0.0;   // end offset from beta's center, packet sigma units
};

struct HeteroclinicOrbitSet {
    std::vector<HeteroclinicOrbit> orbits;  // ordered by (ell_u, ell_s)
    // Set when the refinement budget stopped the search before the
    // neighborhoods were exhausted; the list is then a lower bound.
    bool truncated = false;
};

// arg(amplitude) split as action/hbar - maslov*pi/2 + prefactor, the last
// term wrapped to (-pi, pi].
struct PhaseParts {
    double action_over_hbar = 0.0;
    double maslov_half_pi = 0.0;
    double prefactor = 0.0;
};

struct HeteroclinicContribution {
    HeteroclinicOrbit orbit;
    cdouble amplitude{0.0, 0.0};
    PhaseParts phase;
};

struct CorrelationSeries {
    std::vector<long long> t;
    std::vector<cdouble> semiclassical;
    std::vector<cdouble> quantum;
    std::vector<int> n_orbits;         // terms summed at each t
    std::vector<double> abs_error;     // |semiclassical - quantum| per t
    std::vector<int> skipped_singular; // coalescing terms dropped per t
    std::vector<char> truncated;       // per-t enumeration budget flag
    // Weakest included |amplitude| per t; the neighborhood cut drops terms of
    // this order and below.
    std::vector<double> truncation_estimate;
};

// All t-step orbit segments from alpha's neighborhood to beta's, found as
// transversal crossings of the forward image of the local unstable curve with
// the backward image of the local stable curve, each dressed with its lifted
// segment, action, stability matrix, caustic count and manifold coordinates.
// Neighborhoods extend 4 sigma from each packet center; anchors are the
// hyperbolic period-1 points nearest the centers (within 0.25). t >= 1.
HeteroclinicOrbitSet enumerate_heteroclinic_terms(const WavePacket& alpha,
                                                  const WavePacket& beta, long long t,
                                                  const MapParams& mp);

// Complex Gaussian overlap of the propagator linearized about the orbit,
// taken between the two packets. Branch of the square-root prefactor follows
// the step-by-step width recursion, so no separate caustic phase is applied;
// the stored Maslov count only enters the reported phase decomposition.
// Throws std::domain_error when the quadratic form degenerates at machine
// precision (coalescing terms are skipped, not unfolded).
HeteroclinicContribution contribution(const HeteroclinicOrbit& orbit, const WavePacket& alpha,
                                      const WavePacket& beta, const MapParams& mp);

// Heteroclinic-sum reconstruction C_sc(t) next to the exact quantum
// C_qm(t) = <beta|U^t|alpha> for t = 0..T. Each per-t sum runs in (ell_u,
// ell_s) order with compensated accumulation, so reruns are bitwise
// identical; summing any fixed term set in another order agrees to the
// accumulator's rounding. The t = 0 row takes the exact overlap by
// convention. Coalescing skips and enumeration truncation are reported in
// the series metadata and warned to stderr, never raised.
CorrelationSeries semiclassical_correlation(const WavePacket& alpha, const WavePacket& beta,
                                            const MapParams& mp, long long T,
                                            PropagationMethod method = PropagationMethod::split_step);

}  // namespace kr
