#pragma once

#include <cstdint>
#include <vector>

#include "kr/map.hpp"

namespace kr {

// Gaussian phase-space density on the torus,
//   rho(x,p) = (pi sx sp)^(-1/2) exp[-(x-x0)^2/(2 sx^2) - (p-p0)^2/(2 sp^2)],
// periodized over +-1 image cells. The prefactor makes <rho,rho> = 1; the
// 2-sigma contour encloses area 4 pi sx sp.
struct GaussianDensity {
    double x0 = 0.5, p0 = 0.0;
    double sx = 0.0, sp = 0.0;

    double footprint() const { return 4.0 * 3.14159265358979323846 * sx * sp; }
};

// Circular density whose 2-sigma contour area is `cell_area` (1/1000 reproduces
// the reference experiments): sx = sp = sqrt(cell_area / (4 pi)).
GaussianDensity make_density(double x0, double p0, double cell_area);

// Uniform circular blob of the given phase-space area. The mixing snapshots use
// this sharp-edged ensemble; Gaussian tails inflate early grid coverage.
struct DiskDensity {
    double x0 = 0.5, p0 = 0.0;
    double radius = 0.0;
};

DiskDensity make_disk(double x0, double p0, double area);

// Bare periodized Gaussian factor (no prefactor), images m in {-1,0,1}^2.
double density_factor(const GaussianDensity& gd, double x, double p);

// M independent draws from the density, wrapped onto the torus.
std::vector<Point> sample(const GaussianDensity& gd, long long M, std::uint64_t seed);
std::vector<Point> sample(const DiskDensity& dd, long long M, std::uint64_t seed);

struct FidelityPoint {
    long long t = 0;
    double value = 0.0;
    double stderr_value = 0.0;
};

// Monte-Carlo Loschmidt overlap of the classical density: draw M samples from
// rho, push each forward t steps with K and back t steps with K + deltaK, and
// evaluate the periodized initial density at the end point. Normalized by the
// same-sample self overlap, so the t = 0 entry is exactly 1.
std::vector<FidelityPoint> classical_fidelity(const MapParams& mp, double deltaK,
                                              const GaussianDensity& gd, long long t_max,
                                              long long M, std::uint64_t seed);

// exp[-alpha^2 eps^2 (e^{mu t} - 1)^2]
double classical_fidelity_model(double eps, double mu, double alpha, double t);

// ln(1/(alpha*eps))/mu; the reversal/predictability horizon of the model.
double predictability_time(double eps, double alpha, double mu);

struct EchoFit {
    double alpha = 0.0;      // amplitude parameter, mu held at the analytic value
    double mu_free = 0.0;    // decay rate when fitted freely
    double alpha_free = 0.0; // amplitude from the free fit
    double tau_r = 0.0;      // predictability_time(eps, alpha, mu_analytic)
    int n_used = 0;
};

// Least-squares fit of the echo model on ln(-ln F). The amplitude alpha (and
// tau_r) come from the [t_lo, t_hi] window with F in (1e-4, 0.99); the free
// (alpha, mu) regression instead uses the collapse onset, i.e. every point
// with F in (0.09, 0.999), since the model only holds while the echo shift is
// at most comparable to the density width.
EchoFit fit_echo_model(const std::vector<FidelityPoint>& curve, double eps, double mu_analytic,
                       long long t_lo, long long t_hi);

struct CoveragePoint {
    long long t = 0;
    double fraction = 0.0;
};

struct CoverageResult {
    std::vector<CoveragePoint> series;
    int grid_n = 0;
    bool undersampled = false;  // M < 10 * grid_n^2
};

// Fraction of grid_n x grid_n cells occupied by the ensemble at each requested
// time (times must be non-negative, ascending).
CoverageResult mixing_coverage(const MapParams& mp, const GaussianDensity& gd, int grid_n,
                               const std::vector<long long>& times, long long M,
                               std::uint64_t seed);
CoverageResult mixing_coverage(const MapParams& mp, const DiskDensity& dd, int grid_n,
                               const std::vector<long long>& times, long long M,
                               std::uint64_t seed);

// ln(n_cells)/h_KS for the d=1 map.
double mixing_time(double n_cells, double h_ks);

}  // namespace kr
