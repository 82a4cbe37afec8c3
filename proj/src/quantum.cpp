#include "kr/quantum.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <stdexcept>

namespace kr {

namespace {

constexpr double PI = 3.14159265358979323846;

void check_params(const QuantumParams& qp) {
    if (qp.N < 2) throw std::invalid_argument("QuantumParams: N must be >= 2");
}

// FFTW plan handles for one N, created on demand. Plan creation is not
// thread-safe; execution on distinct buffers is.
class Fft {
public:
    explicit Fft(int N) : N_(N) {
        buf_ = fftw_alloc_complex(N);
        std::lock_guard<std::mutex> lk(plan_mutex());
        fwd_ = fftw_plan_dft_1d(N, buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
        bwd_ = fftw_plan_dft_1d(N, buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    ~Fft() {
        std::lock_guard<std::mutex> lk(plan_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
        fftw_free(buf_);
    }
    Fft(const Fft&) = delete;
    Fft& operator=(const Fft&) = delete;

    void forward(cdouble* data) { run(fwd_, data); }
    void backward(cdouble* data) { run(bwd_, data); }

private:
    static std::mutex& plan_mutex() {
        static std::mutex m;
        return m;
    }
    void run(fftw_plan plan, cdouble* data) {
        fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(data),
                         reinterpret_cast<fftw_complex*>(data));
    }
    int N_;
    fftw_complex* buf_;
    fftw_plan fwd_, bwd_;
};

struct SplitStepTables {
    std::vector<cdouble> kick;      // exp[+i (K N / 2pi) cos(2pi x_n)]
    std::vector<cdouble> free_ph;   // exp[-i pi m^2 / N]
    std::vector<cdouble> kick_inv;
    std::vector<cdouble> free_inv;
};

SplitStepTables make_tables(const QuantumParams& qp) {
    SplitStepTables t;
    int N = qp.N;
    t.kick.resize(N);
    t.free_ph.resize(N);
    t.kick_inv.resize(N);
    t.free_inv.resize(N);
    for (int n = 0; n < N; ++n) {
        double th = (qp.K * N / TWO_PI) * std::cos(TWO_PI * qp.x_of(n));
        t.kick[n] = std::polar(1.0, th);
        t.kick_inv[n] = std::polar(1.0, -th);
        // for even N the multiplier is independent of the residue representative
        double ph = -PI * static_cast<double>(n) * n / N;
        t.free_ph[n] = std::polar(1.0, ph);
        t.free_inv[n] = std::polar(1.0, -ph);
    }
    return t;
}

}  // namespace

Propagator build_propagator(const QuantumParams& qp) {
    check_params(qp);
    int N = qp.N;
    Propagator P;
    P.qp = qp;
    P.U.resize(static_cast<std::size_t>(N) * N);
    cdouble pref = std::polar(1.0 / std::sqrt(static_cast<double>(N)), -PI / 4.0);
    for (int n = 0; n < N; ++n) {
        double kick = (qp.K * N / TWO_PI) * std::cos(TWO_PI * qp.x_of(n));
        cdouble row = pref * std::polar(1.0, kick);
        for (int np = 0; np < N; ++np) {
            double d = static_cast<double>(n - np);
            P.U[static_cast<std::size_t>(n) * N + np] = row * std::polar(1.0, PI * d * d / N);
        }
    }
    return P;
}

double unitarity_defect(const Propagator& P) {
    int N = P.qp.N;
    double worst = 0.0;
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) {
            cdouble acc = 0.0;
            const cdouble* ci = P.U.data() + i;
            const cdouble* cj = P.U.data() + j;
            for (int n = 0; n < N; ++n)
                acc += std::conj(ci[static_cast<std::size_t>(n) * N]) * cj[static_cast<std::size_t>(n) * N];
            if (i == j) acc -= 1.0;
            worst = std::max(worst, std::abs(acc));
        }
    }
    return worst;
}

namespace {

std::vector<cdouble> apply_matrix(const Propagator& P, const std::vector<cdouble>& v, bool inverse) {
    int N = P.qp.N;
    std::vector<cdouble> out(N, cdouble{0.0, 0.0});
    if (!inverse) {
        for (int n = 0; n < N; ++n) {
            const cdouble* row = P.U.data() + static_cast<std::size_t>(n) * N;
            cdouble acc = 0.0;
            for (int np = 0; np < N; ++np) acc += row[np] * v[np];
            out[n] = acc;
        }
    } else {
        // U^{-1} = U^dag
        for (int np = 0; np < N; ++np) {
            const cdouble* row = P.U.data() + static_cast<std::size_t>(np) * N;
            cdouble vn = v[np];
            for (int n = 0; n < N; ++n) out[n] += std::conj(row[n]) * vn;
        }
    }
    return out;
}

}  // namespace

std::vector<cdouble> propagate(const QuantumParams& qp, const std::vector<cdouble>& state,
                               long long t, PropagationMethod method) {
    check_params(qp);
    if (static_cast<int>(state.size()) != qp.N)
        throw std::invalid_argument("propagate: state size does not match N");
    long long steps = t >= 0 ? t : -t;
    bool inverse = t < 0;

    if (method == PropagationMethod::matrix) {
        Propagator P = build_propagator(qp);
        std::vector<cdouble> v = state;
        for (long long i = 0; i < steps; ++i) v = apply_matrix(P, v, inverse);
        return v;
    }

    if (qp.N % 2 != 0)
        throw std::invalid_argument("propagate: split_step requires even N");
    SplitStepTables tb = make_tables(qp);
    Fft fft(qp.N);
    std::vector<cdouble> v = state;
    double scale = 1.0 / qp.N;
    for (long long i = 0; i < steps; ++i) {
        if (!inverse) {
            // U = kick o free: free phase in the momentum basis, then kick
            fft.forward(v.data());
            for (int m = 0; m < qp.N; ++m) v[m] *= tb.free_ph[m];
            fft.backward(v.data());
            for (int n = 0; n < qp.N; ++n) v[n] *= tb.kick[n] * scale;
        } else {
            for (int n = 0; n < qp.N; ++n) v[n] *= tb.kick_inv[n];
            fft.forward(v.data());
            for (int m = 0; m < qp.N; ++m) v[m] *= tb.free_inv[m] * scale;
            fft.backward(v.data());
        }
    }
    return v;
}

double default_sigma(int N) { return 1.0 / std::sqrt(4.0 * PI * N); }

WavePacket wave_packet(const QuantumParams& qp, double x0, double p0, double sigma_x) {
    check_params(qp);
    if (sigma_x < 2.0 / qp.N)
        throw std::invalid_argument("wave_packet: sigma_x below grid resolution 2/N");
    if (sigma_x >= 0.25)
        throw std::invalid_argument("wave_packet: sigma_x must stay below 0.25");
    WavePacket wp;
    wp.qp = qp;
    wp.x0 = x0;
    wp.p0 = p0;
    wp.sigma_x = sigma_x;
    wp.amp.resize(qp.N);
    double phase_scale = TWO_PI * qp.N * p0;
    double norm2 = 0.0;
    for (int n = 0; n < qp.N; ++n) {
        double base = qp.x_of(n) - x0;
        cdouble acc = 0.0;
        for (int m = -3; m <= 3; ++m) {
            double d = base + m;
            double mag = std::exp(-d * d / (4.0 * sigma_x * sigma_x));
            acc += std::polar(mag, phase_scale * d);
        }
        wp.amp[n] = acc;
        norm2 += std::norm(acc);
    }
    double inv = 1.0 / std::sqrt(norm2);
    for (auto& a : wp.amp) a *= inv;
    return wp;
}

std::vector<double> position_density(const std::vector<cdouble>& amp) {
    std::vector<double> d(amp.size());
    for (std::size_t i = 0; i < amp.size(); ++i) d[i] = std::norm(amp[i]);
    return d;
}

double mean_position(const QuantumParams& qp, const std::vector<cdouble>& amp, double ref) {
    double acc = 0.0;
    for (int n = 0; n < qp.N; ++n) {
        double d = qp.x_of(n) - ref;
        d -= std::round(d);
        acc += std::norm(amp[n]) * d;
    }
    return ref + acc;
}

double mean_momentum(const QuantumParams& qp, const std::vector<cdouble>& amp) {
    Fft fft(qp.N);
    std::vector<cdouble> c = amp;
    fft.forward(c.data());
    double norm2 = 0.0, acc = 0.0;
    for (int m = 0; m < qp.N; ++m) {
        int ms = m <= qp.N / 2 - 1 ? m : m - qp.N;  // signed bin
        double w = std::norm(c[m]);
        norm2 += w;
        acc += w * (static_cast<double>(ms) / qp.N);
    }
    return acc / norm2;
}

cdouble inner_product(const std::vector<cdouble>& a, const std::vector<cdouble>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("inner_product: size mismatch");
    cdouble acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::conj(a[i]) * b[i];
    return acc;
}

std::vector<double> fidelity_curve(const QuantumParams& qp, double deltaK,
                                   const WavePacket& packet, long long t_max,
                                   PropagationMethod method) {
    if (t_max < 0) throw std::invalid_argument("fidelity_curve: t_max must be >= 0");
    QuantumParams qp2 = qp;
    qp2.K = qp.K + deltaK;
    std::vector<double> out;
    out.reserve(t_max + 1);
    std::vector<cdouble> a = packet.amp, b = packet.amp;
    out.push_back(std::norm(inner_product(b, a)));
    for (long long t = 1; t <= t_max; ++t) {
        a = propagate(qp, a, 1, method);
        b = propagate(qp2, b, 1, method);
        out.push_back(std::norm(inner_product(b, a)));
    }
    return out;
}

int density_peak_count(const std::vector<double>& density, double rel_threshold) {
    if (density.size() < 3) return 0;
    double mx = 0.0;
    for (double d : density) mx = std::max(mx, d);
    double thr = rel_threshold * mx;
    int n = static_cast<int>(density.size());
    int count = 0;
    for (int i = 0; i < n; ++i) {
        double c = density[i];
        if (c < thr) continue;
        double prev = density[(i + n - 1) % n], next = density[(i + 1) % n];
        if (c > prev && c >= next) ++count;  // grid is periodic
    }
    return count;
}

double action_diffusion_constant(double K) {
    if (K <= 0.0) throw std::domain_error("action_diffusion_constant: K must be positive");
    double c = TWO_PI * TWO_PI;  // (2 pi)^2
    return (1.0 + 2.0 * std::cyl_bessel_j(2, K)) / (4.0 * c * c);
}

double gamma_parameter(int N, double K, double eps, double g) {
    if (N < 2 || eps <= 0.0 || g <= 0.0)
        throw std::invalid_argument("gamma_parameter: need N >= 2, eps > 0, g > 0");
    double hbar = 1.0 / (TWO_PI * N);
    double tau_h = static_cast<double>(N);
    return hbar * hbar / (2.0 * g * eps * eps * tau_h * action_diffusion_constant(K));
}

RegimeReport classify_regime(int N, double K, double eps, double g) {
    RegimeReport r;
    r.h_ks = lyapunov_analytic(K);
    r.gamma2 = gamma_parameter(N, K, eps, g);
    r.tau_E = ehrenfest_time(N, K);
    r.tau_H = heisenberg_time(N);
    double floor_ = 1.0 / (r.h_ks * r.tau_H);  // d = 1
    if (r.gamma2 > 1.0) {
        r.regime = PerturbationRegime::quantum_perturbative;
        r.tau_r = std::sqrt(r.gamma2) * r.tau_H;
    } else if (r.gamma2 > floor_) {
        r.regime = PerturbationRegime::fermi_golden_rule;
        r.tau_r = g * r.gamma2 * r.tau_H;
    } else {
        r.regime = PerturbationRegime::lyapunov;
        r.tau_r = 1.0 / r.h_ks;
    }
    return r;
}

double ehrenfest_time(int N, double K) {
    if (N < 2) throw std::invalid_argument("ehrenfest_time: N must be >= 2");
    return std::log(static_cast<double>(N)) / lyapunov_analytic(K);
}

double heisenberg_time(int N) {
    if (N < 2) throw std::invalid_argument("heisenberg_time: N must be >= 2");
    return static_cast<double>(N);
}

}  // namespace kr
