#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <complex>
#include <random>
#include <stdexcept>
#include <vector>

#include "kr/map.hpp"
#include "kr/quantum.hpp"

using namespace kr;

namespace {

std::vector<cdouble> random_state(int N, unsigned seed) {
    std::mt19937_64 eng(seed);
    std::normal_distribution<double> g;
    std::vector<cdouble> v(N);
    double nrm = 0.0;
    for (auto& c : v) {
        c = {g(eng), g(eng)};
        nrm += std::norm(c);
    }
    for (auto& c : v) c /= std::sqrt(nrm);
    return v;
}

std::vector<cdouble> apply_matrix(const Propagator& U, const std::vector<cdouble>& v) {
    const int N = U.qp.N;
    std::vector<cdouble> out(N);
    for (int n = 0; n < N; ++n) {
        cdouble acc = 0.0;
        for (int m = 0; m < N; ++m) acc += U.at(n, m) * v[m];
        out[n] = acc;
    }
    return out;
}

double max_diff(const std::vector<cdouble>& a, const std::vector<cdouble>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

}  // namespace

TEST_CASE("one-step operator is unitary") {
    for (int N : {8, 9, 64, 250, 1000}) {
        Propagator U = build_propagator(QuantumParams{N, 10.0});
        CHECK(unitarity_defect(U) < 1e-10 * N);
    }
    CHECK_THROWS_AS(build_propagator(QuantumParams{1, 10.0}), std::invalid_argument);
}

TEST_CASE("free operator at N=2 has uniform modulus") {
    Propagator U = build_propagator(QuantumParams{2, 0.0});
    for (int n = 0; n < 2; ++n)
        for (int m = 0; m < 2; ++m)
            CHECK(std::abs(U.at(n, m)) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("matrix and split-step paths coincide") {
    for (int N : {8, 64}) {
        QuantumParams qp{N, 10.0};
        Propagator U = build_propagator(qp);
        auto v = random_state(N, 100 + N);
        auto a = v;
        for (int rep = 0; rep < 5; ++rep) a = apply_matrix(U, a);
        auto b = propagate(qp, v, 5, PropagationMethod::split_step);
        CHECK(max_diff(a, b) < 1e-12);
    }
    QuantumParams qp{1000, 10.0};
    Propagator U = build_propagator(qp);
    auto v = random_state(1000, 5);
    CHECK(max_diff(apply_matrix(U, v), propagate(qp, v, 1, PropagationMethod::split_step)) < 1e-10);
    // split-step factorization needs the half-integer symmetry of even N
    CHECK_THROWS_AS(propagate(QuantumParams{9, 10.0}, random_state(9, 1), 1,
                              PropagationMethod::split_step),
                    std::invalid_argument);
}

TEST_CASE("propagation basics: identity, reversal, norm") {
    QuantumParams qp{256, 10.0};
    auto v = random_state(256, 9);
    CHECK(max_diff(v, propagate(qp, v, 0, PropagationMethod::split_step)) == 0.0);

    auto w = propagate(qp, v, 7, PropagationMethod::split_step);
    double nrm = 0.0;
    for (auto& c : w) nrm += std::norm(c);
    CHECK(nrm == doctest::Approx(1.0).epsilon(1e-12));

    auto back = propagate(qp, w, -7, PropagationMethod::split_step);
    CHECK(max_diff(v, back) < 1e-10);

    // matrix-path inverse agrees with the adjoint
    QuantumParams qs{8, 10.0};
    Propagator U = build_propagator(qs);
    auto s = random_state(8, 2);
    auto fwd = apply_matrix(U, s);
    auto rt = propagate(qs, fwd, -1, PropagationMethod::matrix);
    CHECK(max_diff(s, rt) < 1e-12);
    CHECK_THROWS_AS(propagate(qs, v, 1, PropagationMethod::matrix), std::invalid_argument);
}

TEST_CASE("wave packet construction and moments") {
    QuantumParams qp{1000, 10.0};
    double sx = default_sigma(1000);
    CHECK(sx == doctest::Approx(0.0089206).epsilon(1e-4));
    double sp = qp.hbar() / (2.0 * sx);
    CHECK(4.0 * 3.14159265358979323846 * sx * sp == doctest::Approx(qp.h()).epsilon(1e-12));
    CHECK(sx == doctest::Approx(sp).epsilon(1e-12));  // circular at the default width

    auto pk = wave_packet(qp, 0.5, 0.0, sx);
    double nrm = 0.0;
    for (auto& c : pk.amp) nrm += std::norm(c);
    CHECK(nrm == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mean_position(qp, pk.amp, 0.5) == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(std::abs(mean_momentum(qp, pk.amp)) < sp / 10.0);

    auto off = wave_packet(qp, 0.2, 0.25, sx);
    CHECK(std::abs(mean_position(qp, off.amp, 0.2) - 0.2) < sx / 10.0);
    CHECK(std::abs(mean_momentum(qp, off.amp) - 0.25) < sp / 10.0);

    // negative momentum lands on the signed half of the grid
    auto neg = wave_packet(qp, 0.7, -0.2, sx);
    CHECK(std::abs(mean_momentum(qp, neg.amp) + 0.2) < sp / 10.0);

    CHECK_THROWS_AS(wave_packet(qp, 0.5, 0.0, 1.0 / 1000.0), std::invalid_argument);
    CHECK_THROWS_AS(wave_packet(qp, 0.5, 0.0, 0.3), std::invalid_argument);
}

TEST_CASE("echo stays near one for the reference perturbation") {
    QuantumParams qp{1000, 10.0};
    auto pk = wave_packet(qp, 0.5, 0.0, default_sigma(1000));
    auto F = fidelity_curve(qp, 1e-4, pk, 500, PropagationMethod::split_step);
    CHECK(F[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(F[100] == doctest::Approx(0.9734).epsilon(0.006));
    CHECK(F[500] == doctest::Approx(0.7719).epsilon(0.03));
    for (int t = 0; t <= 500; ++t) CHECK(F[t] > 0.5);
}

TEST_CASE("zero perturbation and echo identity") {
    QuantumParams qp{64, 10.0};
    auto pk = wave_packet(qp, 0.5, 0.0, default_sigma(64));
    auto F = fidelity_curve(qp, 0.0, pk, 10, PropagationMethod::split_step);
    for (double f : F) CHECK(f == doctest::Approx(1.0).epsilon(1e-10));

    // two forward runs vs forward-reverse: identical overlap
    QuantumParams qb{64, 10.0 + 1e-3};
    auto a = propagate(qp, pk.amp, 5, PropagationMethod::split_step);
    auto b = propagate(qb, pk.amp, 5, PropagationMethod::split_step);
    double two_forward = std::norm(inner_product(b, a));
    auto echoed = propagate(qb, a, -5, PropagationMethod::split_step);
    double fwd_rev = std::norm(inner_product(pk.amp, echoed));
    CHECK(two_forward == doctest::Approx(fwd_rev).epsilon(1e-12));
}

TEST_CASE("interference onset at the second kick") {
    QuantumParams qp{1000, 10.0};
    auto st = wave_packet(qp, 0.5, 0.0, default_sigma(1000)).amp;
    std::vector<int> peaks;
    for (int t = 0; t <= 3; ++t) {
        if (t) st = propagate(qp, st, 1, PropagationMethod::split_step);
        peaks.push_back(density_peak_count(position_density(st), 0.05));
    }
    CHECK(peaks[0] <= 2);
    CHECK(peaks[1] <= 2);
    CHECK(peaks[2] >= 3);   // fringes appear here
    CHECK(peaks[2] <= 40);
    CHECK(peaks[3] > 100);  // fully delocalized
}

TEST_CASE("classical correspondence before the onset") {
    QuantumParams qp{1000, 10.0};
    double sx = default_sigma(1000);
    auto st = wave_packet(qp, 0.5, 0.0, sx).amp;
    // (0.5, 0) is a fixed point of the classical step, and the packet keeps
    // its reflection symmetry, so <x> must hold at 0.5 until fringes wrap.
    for (int t = 1; t <= 2; ++t) {
        st = propagate(qp, st, 1, PropagationMethod::split_step);
        CHECK(std::abs(mean_position(qp, st, 0.5) - 0.5) < 3.0 * sx);
    }

    // off-center packet: one quantum step recenters at the drifted-then-kicked
    // classical image; the drift moves x first, x1 = x0 + p0.
    auto off = wave_packet(qp, 0.3, 0.1, sx).amp;
    off = propagate(qp, off, 1, PropagationMethod::split_step);
    CHECK(std::abs(mean_position(qp, off, 0.4) - 0.4) < 3.0 * sx);
}

TEST_CASE("diffusion constant from the Bessel form") {
    const double two_pi_4 = std::pow(TWO_PI, 4);
    const double j2_10 = 0.25463031368512062;
    CHECK(action_diffusion_constant(10.0) ==
          doctest::Approx((1.0 + 2.0 * j2_10) / (4.0 * two_pi_4)).epsilon(1e-12));
    CHECK(action_diffusion_constant(10.0) == doctest::Approx(2.42e-4).epsilon(0.01));
    // J_2 root: only the constant term survives
    CHECK(action_diffusion_constant(5.1356223018406826) ==
          doctest::Approx(1.0 / (4.0 * two_pi_4)).epsilon(1e-9));
    // neighboring K values move within the oscillation envelope
    CHECK(std::abs(action_diffusion_constant(10.0) - action_diffusion_constant(11.0)) <
          2.0 * 0.4 / (2.0 * two_pi_4));
    CHECK_THROWS_AS(action_diffusion_constant(0.0), std::domain_error);
}

TEST_CASE("perturbation regimes and horizons") {
    double g2 = gamma_parameter(1000, 10.0, 1e-4, 4.0);
    CHECK(g2 == doctest::Approx(1.3079).epsilon(1e-3));
    CHECK(gamma_parameter(1000, 10.0, 1e-3, 4.0) * 100.0 == doctest::Approx(g2).epsilon(1e-12));

    auto rep = classify_regime(1000, 10.0, 1e-4, 4.0);
    CHECK(rep.regime == PerturbationRegime::quantum_perturbative);
    CHECK(rep.tau_r == doctest::Approx(std::sqrt(g2) * 1000.0).epsilon(1e-12));
    CHECK(rep.tau_r > 500.0);
    CHECK(rep.tau_E == doctest::Approx(4.3201).epsilon(1e-3));
    CHECK(rep.tau_H == 1000.0);

    std::vector<PerturbationRegime> want{
        PerturbationRegime::quantum_perturbative, PerturbationRegime::quantum_perturbative,
        PerturbationRegime::fermi_golden_rule, PerturbationRegime::lyapunov};
    double prev_tau = 1e300;
    int i = 0;
    for (double eps : {1e-5, 1e-4, 1e-3, 1e-2}) {
        auto r = classify_regime(1000, 10.0, eps, 4.0);
        CHECK(r.regime == want[i++]);
        CHECK(r.tau_r <= prev_tau);
        prev_tau = r.tau_r;
    }
    auto lyap = classify_regime(1000, 10.0, 1e-2, 4.0);
    CHECK(lyap.tau_r == doctest::Approx(1.0 / lyapunov_analytic(10.0)).epsilon(1e-12));
    auto fgr = classify_regime(1000, 10.0, 1e-3, 4.0);
    CHECK(fgr.tau_r == doctest::Approx(4.0 * fgr.gamma2 * 1000.0).epsilon(1e-12));
}

TEST_CASE("quantum time scales") {
    CHECK(ehrenfest_time(1000, 10.0) == doctest::Approx(4.3201).epsilon(1e-3));
    CHECK(ehrenfest_time(1000000, 10.0) ==
          doctest::Approx(2.0 * ehrenfest_time(1000, 10.0)).epsilon(1e-12));
    CHECK(heisenberg_time(1000) == 1000.0);
    CHECK(heisenberg_time(1000000) == 1.0e6);
    CHECK_THROWS_AS(ehrenfest_time(1, 10.0), std::invalid_argument);
}
