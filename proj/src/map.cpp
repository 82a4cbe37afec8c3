#include "kr/map.hpp"

#include <cmath>
#include <stdexcept>

#include "kr/rng.hpp"

namespace kr {

Point step(const MapParams& mp, const Point& z) {
    double p1 = z.p - mp.kick_scale() * std::sin(TWO_PI * z.x);
    double x1 = z.x + p1;
    return {wrap01(x1), wrap01(p1)};
}

Point step_inverse(const MapParams& mp, const Point& z) {
    double x0 = z.x - z.p;
    double p0 = z.p + mp.kick_scale() * std::sin(TWO_PI * x0);
    return {wrap01(x0), wrap01(p0)};
}

void step_lifted(const MapParams& mp, double& x, double& p) {
    p -= mp.kick_scale() * std::sin(TWO_PI * x);
    x += p;
}

void step_lifted_inverse(const MapParams& mp, double& x, double& p) {
    x -= p;
    p += mp.kick_scale() * std::sin(TWO_PI * x);
}

Orbit iterate(const MapParams& mp, const Point& z0, long long t) {
    Orbit orb;
    long long n = t >= 0 ? t : -t;
    orb.pts.reserve(n + 1);
    orb.lift.reserve(n + 1);
    double x = z0.x, p = z0.p;
    auto split = [](double v, double& frac, long long& whole) {
        whole = static_cast<long long>(std::floor(v));
        frac = v - static_cast<double>(whole);
        if (frac >= 1.0) {  // rounding of v - floor(v) for v just below an integer
            frac -= 1.0;
            whole += 1;
        }
    };
    for (long long i = 0;; ++i) {
        double fx, fp;
        long long wx, wp;
        split(x, fx, wx);
        split(p, fp, wp);
        orb.pts.push_back({fx, fp});
        orb.lift.push_back({wx, wp});
        if (i == n) break;
        if (t >= 0)
            step_lifted(mp, x, p);
        else
            step_lifted_inverse(mp, x, p);
    }
    return orb;
}

TangentFrame jacobian(const MapParams& mp, double x) {
    double kc = mp.K * std::cos(TWO_PI * x);
    return {1.0 - kc, 1.0, -kc, 1.0};
}

LyapunovEstimate lyapunov_numeric(const MapParams& mp, long long n_samples, long long t,
                                  std::uint64_t seed) {
    if (t < 100) throw std::invalid_argument("lyapunov_numeric: t must be >= 100");
    if (n_samples < 1) throw std::invalid_argument("lyapunov_numeric: n_samples must be >= 1");

    double sum = 0.0, sumsq = 0.0;
    for (long long s = 0; s < n_samples; ++s) {
        auto eng = make_engine(seed, static_cast<std::uint64_t>(s));
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        double x = uni(eng), p = uni(eng);
        double vx = uni(eng) - 0.5, vp = uni(eng) - 0.5;
        double norm = std::sqrt(vx * vx + vp * vp);
        vx /= norm;
        vp /= norm;
        double acc = 0.0;
        for (long long i = 0; i < t; ++i) {
            TangentFrame M = jacobian(mp, x);
            double wx = M.a11 * vx + M.a12 * vp;
            double wp = M.a21 * vx + M.a22 * vp;
            double g = std::sqrt(wx * wx + wp * wp);
            acc += std::log(g);
            vx = wx / g;
            vp = wp / g;
            step_lifted(mp, x, p);
            x = wrap01(x);
            p = wrap01(p);
        }
        double lam = acc / static_cast<double>(t);
        sum += lam;
        sumsq += lam * lam;
    }
    LyapunovEstimate est;
    est.n_samples = n_samples;
    est.t = t;
    est.mean = sum / static_cast<double>(n_samples);
    if (n_samples > 1) {
        double var = (sumsq - sum * sum / static_cast<double>(n_samples)) /
                     static_cast<double>(n_samples - 1);
        est.stderr_mean = std::sqrt(var > 0 ? var / static_cast<double>(n_samples) : 0.0);
    }
    return est;
}

double lyapunov_analytic(double K) {
    if (K <= 2.0) throw std::domain_error("lyapunov_analytic: requires K > 2");
    return std::log(K / 2.0) - 1.0 / (K * K - 4.0);
}

namespace {

FixedPointInfo classify_fixed_point(const MapParams& mp, Point z) {
    FixedPointInfo fp;
    fp.z = z;
    TangentFrame M = jacobian(mp, z.x);
    fp.trace = M.trace();
    double tr = fp.trace;
    if (std::abs(tr) > 2.0) {
        fp.stability = Stability::hyperbolic;
        double disc = std::sqrt(tr * tr - 4.0);
        double l1 = (tr + disc) / 2.0, l2 = (tr - disc) / 2.0;
        fp.lambda_u = std::abs(l1) > std::abs(l2) ? l1 : l2;
        fp.lambda_s = std::abs(l1) > std::abs(l2) ? l2 : l1;
        // (M - lambda) v = 0 with row (a11 - lambda, a12): v = (a12, lambda - a11).
        auto evec = [&M](double lam) {
            double vx = M.a12, vp = lam - M.a11;
            double n = std::sqrt(vx * vx + vp * vp);
            // fix orientation: positive x component
            double s = vx < 0 ? -1.0 : 1.0;
            return std::array<double, 2>{s * vx / n, s * vp / n};
        };
        fp.ev_u = evec(fp.lambda_u);
        fp.ev_s = evec(fp.lambda_s);
    } else if (std::abs(tr) == 2.0) {
        fp.stability = Stability::parabolic;
    } else {
        fp.stability = Stability::elliptic;
    }
    return fp;
}

}  // namespace

std::array<FixedPointInfo, 2> fixed_points(const MapParams& mp) {
    return {classify_fixed_point(mp, {0.0, 0.0}), classify_fixed_point(mp, {0.5, 0.0})};
}

double step_action(const MapParams& mp, double x_j, double x_j1) {
    double dx = x_j1 - x_j;
    return 0.5 * dx * dx + mp.action_scale() * std::cos(TWO_PI * x_j);
}

double path_action(const MapParams& mp, const std::vector<double>& xs) {
    if (xs.size() < 2) throw std::invalid_argument("path_action: need at least two positions");
    double s = 0.0;
    for (std::size_t j = 0; j + 1 < xs.size(); ++j) s += step_action(mp, xs[j], xs[j + 1]);
    return s;
}

std::vector<Orbit> poincare_section(const MapParams& mp, const std::vector<Point>& seeds,
                                    long long t) {
    std::vector<Orbit> out;
    out.reserve(seeds.size());
    for (const Point& s : seeds) out.push_back(iterate(mp, s, t));
    return out;
}

}  // namespace kr
