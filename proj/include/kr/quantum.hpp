#pragma once

#include <complex>
#include <cstdint>
#include <memory>
#include <vector>

#include "kr/map.hpp"

namespace kr {

using cdouble = std::complex<double>;

// N-dimensional Hilbert space on the unit torus: h = 1/N, hbar = 1/(2 pi N),
// position grid x_n = (n + a)/N, momentum grid p_m = m/N.
struct QuantumParams {
    int N = 1000;
    double K = 10.0;
    double a = 0.5;  // grid offset

    double h() const { return 1.0 / N; }
    double hbar() const { return 1.0 / (TWO_PI * N); }
    double x_of(int n) const { return (n + a) / N; }
};

// One Floquet step as a dense matrix,
//   U[n,n'] = (iN)^{-1/2} exp[i pi (n-n')^2 / N] * exp[i (K N / 2pi) cos(2pi (n+a)/N)],
// free drift followed by the kick phase at the output site.
struct Propagator {
    QuantumParams qp;
    std::vector<cdouble> U;  // row-major N x N

    cdouble at(int n, int np) const { return U[static_cast<std::size_t>(n) * qp.N + np]; }
};

struct WavePacket {
    QuantumParams qp;
    std::vector<cdouble> amp;  // unit norm
    // construction parameters (not updated by propagation)
    double x0 = 0.5, p0 = 0.0, sigma_x = 0.0;
};

enum class PropagationMethod { matrix, split_step };

Propagator build_propagator(const QuantumParams& qp);

// max_{n,n'} |(U^dag U - 1)[n,n']|
double unitarity_defect(const Propagator& U);

// Applies U (t > 0) or U^{-1} = U^dag (t < 0) |t| times. The split-step path
// factors U into FFT-diagonal pieces and requires even N.
std::vector<cdouble> propagate(const QuantumParams& qp, const std::vector<cdouble>& state,
                               long long t, PropagationMethod method);

// Periodized minimum-uncertainty packet sampled on the position grid,
//   amp_n ~ sum_m exp[-(x_n - x0 + m)^2/(4 sx^2) + i 2 pi N p0 (x_n - x0 + m)],
// m in {-3..3}, then normalized. sigma_p = hbar/(2 sigma_x). Rejects
// sigma_x < 2/N (unresolvable on the grid).
WavePacket wave_packet(const QuantumParams& qp, double x0, double p0, double sigma_x);

// Default circular width sigma_x = sigma_p = (4 pi N)^{-1/2}; Planck cell
// footprint 4 pi sx sp = 1/N.
double default_sigma(int N);

std::vector<double> position_density(const std::vector<cdouble>& amp);

// <x> with displacements taken min-image around ref.
double mean_position(const QuantumParams& qp, const std::vector<cdouble>& amp, double ref);
// <p> on the signed momentum grid m/N, m in [-N/2, N/2).
double mean_momentum(const QuantumParams& qp, const std::vector<cdouble>& amp);

cdouble inner_product(const std::vector<cdouble>& a, const std::vector<cdouble>& b);

// |<Phi_{K+dK}(t)|Phi_K(t)>|^2 for t = 0..t_max.
std::vector<double> fidelity_curve(const QuantumParams& qp, double deltaK,
                                   const WavePacket& packet, long long t_max,
                                   PropagationMethod method);

// Count of interior local maxima of the position density exceeding
// rel_threshold * max; the onset of interference shows up as a jump in this.
int density_peak_count(const std::vector<double>& density, double rel_threshold);

// K(E) = (1 + 2 J_2(K)) / (4 (2 pi)^4), action-diffusion constant per kick
// per unit (absolute) kick-strength perturbation.
double action_diffusion_constant(double K);

// gamma^2 = hbar^2 / (2 g eps^2 tau_H K(E)) with tau_H = N. eps is the
// absolute kick-strength perturbation deltaK, matching the K(E) normalization
// above (Var(dS)/t = 2 K(E) deltaK^2).
double gamma_parameter(int N, double K, double eps, double g = 4.0);

enum class PerturbationRegime { quantum_perturbative, fermi_golden_rule, lyapunov };

struct RegimeReport {
    double gamma2 = 0.0;
    PerturbationRegime regime = PerturbationRegime::quantum_perturbative;
    double tau_r = 0.0;     // predicted reversal horizon
    double tau_E = 0.0;     // Ehrenfest time ln(N)/mu
    double tau_H = 0.0;     // Heisenberg time N
    double h_ks = 0.0;      // analytic Lyapunov rate used
};

// Regime thresholds: gamma^2 > 1 quantum perturbative (tau_r = gamma tau_H);
// 1 > gamma^2 > d/(h_KS tau_H) golden rule (tau_r = g gamma^2 tau_H);
// below that Lyapunov (tau_r = 1/h_KS).
RegimeReport classify_regime(int N, double K, double eps, double g = 4.0);

double ehrenfest_time(int N, double K);
double heisenberg_time(int N);

}  // namespace kr
