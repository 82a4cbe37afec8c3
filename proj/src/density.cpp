#include "kr/density.hpp"

#include <cmath>
#include <stdexcept>

#include "kr/rng.hpp"

namespace kr {

namespace {
constexpr double PI = 3.14159265358979323846;
}

GaussianDensity make_density(double x0, double p0, double cell_area) {
    if (cell_area <= 0.0) throw std::invalid_argument("make_density: cell_area must be positive");
    GaussianDensity gd;
    gd.x0 = x0;
    gd.p0 = p0;
    gd.sx = gd.sp = std::sqrt(cell_area / (4.0 * PI));
    return gd;
}

double density_factor(const GaussianDensity& gd, double x, double p) {
    // min-image offsets plus one image either side; sigma << 1 makes further
    // images vanish below double precision.
    double dx = x - gd.x0 - std::round(x - gd.x0);
    double dp = p - gd.p0 - std::round(p - gd.p0);
    double sum = 0.0;
    for (int mx = -1; mx <= 1; ++mx) {
        double ex = (dx + mx) / gd.sx;
        for (int mp_ = -1; mp_ <= 1; ++mp_) {
            double ep = (dp + mp_) / gd.sp;
            sum += std::exp(-0.5 * (ex * ex + ep * ep));
        }
    }
    return sum;
}

std::vector<Point> sample(const GaussianDensity& gd, long long M, std::uint64_t seed) {
    if (M < 1) throw std::invalid_argument("sample: M must be >= 1");
    std::vector<Point> out;
    out.reserve(M);
    auto eng = make_engine(seed, 0);
    std::normal_distribution<double> nx(gd.x0, gd.sx), np(gd.p0, gd.sp);
    for (long long i = 0; i < M; ++i) {
        out.push_back({wrap01(nx(eng)), wrap01(np(eng))});
    }
    return out;
}

DiskDensity make_disk(double x0, double p0, double area) {
    if (area <= 0.0) throw std::invalid_argument("make_disk: area must be positive");
    return {x0, p0, std::sqrt(area / PI)};
}

std::vector<Point> sample(const DiskDensity& dd, long long M, std::uint64_t seed) {
    if (M < 1) throw std::invalid_argument("sample: M must be >= 1");
    std::vector<Point> out;
    out.reserve(M);
    auto eng = make_engine(seed, 0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (long long i = 0; i < M; ++i) {
        double r = dd.radius * std::sqrt(u(eng));
        double th = 2.0 * PI * u(eng);
        out.push_back({wrap01(dd.x0 + r * std::cos(th)), wrap01(dd.p0 + r * std::sin(th))});
    }
    return out;
}

std::vector<FidelityPoint> classical_fidelity(const MapParams& mp, double deltaK,
                                              const GaussianDensity& gd, long long t_max,
                                              long long M, std::uint64_t seed) {
    if (t_max < 0) throw std::invalid_argument("classical_fidelity: t_max must be >= 0");
    if (M < 1000) throw std::invalid_argument("classical_fidelity: need M >= 1000 for a usable estimate");
    std::vector<Point> pts = sample(gd, M, seed);
    MapParams back{mp.K + deltaK};

    // forward trajectories under K, one row per time
    std::vector<std::vector<Point>> fwd(t_max + 1);
    fwd[0] = pts;
    for (long long t = 1; t <= t_max; ++t) {
        fwd[t].resize(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) fwd[t][i] = step(mp, fwd[t - 1][i]);
    }

    double denom = 0.0;
    for (const Point& z : pts) denom += density_factor(gd, z.x, z.p);

    std::vector<FidelityPoint> out(t_max + 1);
    for (long long t = 0; t <= t_max; ++t) {
        double s = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            Point z = fwd[t][i];
            for (long long k = 0; k < t; ++k) z = step_inverse(back, z);
            double g = density_factor(gd, z.x, z.p);
            s += g;
            s2 += g * g;
        }
        double n = static_cast<double>(M);
        out[t].t = t;
        out[t].value = s / denom;
        double var = (s2 - s * s / n) / (n > 1 ? n - 1 : 1);
        out[t].stderr_value = std::sqrt(var > 0 ? var / n : 0.0) * n / denom;
    }
    return out;
}

double classical_fidelity_model(double eps, double mu, double alpha, double t) {
    double g = alpha * eps * (std::exp(mu * t) - 1.0);
    return std::exp(-g * g);
}

double predictability_time(double eps, double alpha, double mu) {
    if (eps <= 0 || alpha <= 0 || mu <= 0)
        throw std::invalid_argument("predictability_time: eps, alpha, mu must be positive");
    if (alpha * eps >= 1.0)
        throw std::invalid_argument("predictability_time: alpha*eps >= 1 leaves no margin");
    return std::log(1.0 / (alpha * eps)) / mu;
}

EchoFit fit_echo_model(const std::vector<FidelityPoint>& curve, double eps, double mu_analytic,
                       long long t_lo, long long t_hi) {
    // model: -ln F = alpha^2 eps^2 (e^{mu t} - 1)^2, i.e.
    // y := ln(-ln F) = 2 ln(alpha*eps) + 2 ln(e^{mu t} - 1).
    std::vector<double> ts, ys;
    for (const FidelityPoint& fp : curve) {
        if (fp.t < t_lo || fp.t > t_hi) continue;
        if (!(fp.value > 1e-4 && fp.value < 0.99)) continue;
        ts.push_back(static_cast<double>(fp.t));
        ys.push_back(std::log(-std::log(fp.value)));
    }
    EchoFit fit;
    fit.n_used = static_cast<int>(ts.size());
    if (ts.empty()) throw std::runtime_error("fit_echo_model: no usable points in window");

    // alpha with mu fixed: average of y - 2 ln(e^{mu t} - 1)
    double acc = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i)
        acc += ys[i] - 2.0 * std::log(std::exp(mu_analytic * ts[i]) - 1.0);
    fit.alpha = std::exp(acc / (2.0 * ts.size())) / eps;
    fit.tau_r = predictability_time(eps, fit.alpha, mu_analytic);

    // free (alpha, mu): regression y = a + b t over the collapse onset, where
    // e^{mu t} >> 1 already but the shift has not yet outrun the density width
    // (past that point the overlap is residual tail mass, not the model).
    std::vector<double> fts, fys;
    for (const FidelityPoint& fp : curve) {
        if (fp.t < 1 || !(fp.value > 0.09 && fp.value < 0.999)) continue;
        fts.push_back(static_cast<double>(fp.t));
        fys.push_back(std::log(-std::log(fp.value)));
    }
    if (fts.size() >= 2) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < fts.size(); ++i) {
            sx += fts[i];
            sy += fys[i];
            sxx += fts[i] * fts[i];
            sxy += fts[i] * fys[i];
        }
        double n = static_cast<double>(fts.size());
        double b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        double a = (sy - b * sx) / n;
        fit.mu_free = b / 2.0;
        fit.alpha_free = std::exp(a / 2.0) / eps;
    } else {
        fit.mu_free = mu_analytic;
        fit.alpha_free = fit.alpha;
    }
    return fit;
}

namespace {

CoverageResult coverage_of_cloud(const MapParams& mp, std::vector<Point> pts, int grid_n,
                                 const std::vector<long long>& times, long long M) {
    if (grid_n < 2) throw std::invalid_argument("mixing_coverage: grid_n must be >= 2");
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (times[i] < 0 || (i > 0 && times[i] <= times[i - 1]))
            throw std::invalid_argument("mixing_coverage: times must be non-negative, ascending");
    }
    CoverageResult res;
    res.grid_n = grid_n;
    res.undersampled = M < 10LL * grid_n * grid_n;

    std::vector<char> hit(static_cast<std::size_t>(grid_n) * grid_n);
    long long t_now = 0;
    for (long long target : times) {
        for (; t_now < target; ++t_now)
            for (Point& z : pts) z = step(mp, z);
        std::fill(hit.begin(), hit.end(), 0);
        for (const Point& z : pts) {
            int ix = static_cast<int>(z.x * grid_n);
            int ip = static_cast<int>(z.p * grid_n);
            if (ix >= grid_n) ix = grid_n - 1;
            if (ip >= grid_n) ip = grid_n - 1;
            hit[static_cast<std::size_t>(ix) * grid_n + ip] = 1;
        }
        long long occ = 0;
        for (char c : hit) occ += c;
        res.series.push_back({target, static_cast<double>(occ) / (static_cast<double>(grid_n) * grid_n)});
    }
    return res;
}

}  // namespace

CoverageResult mixing_coverage(const MapParams& mp, const GaussianDensity& gd, int grid_n,
                               const std::vector<long long>& times, long long M,
                               std::uint64_t seed) {
    return coverage_of_cloud(mp, sample(gd, M, seed), grid_n, times, M);
}

CoverageResult mixing_coverage(const MapParams& mp, const DiskDensity& dd, int grid_n,
                               const std::vector<long long>& times, long long M,
                               std::uint64_t seed) {
    return coverage_of_cloud(mp, sample(dd, M, seed), grid_n, times, M);
}

double mixing_time(double n_cells, double h_ks) {
    if (n_cells < 1.0 || h_ks <= 0.0)
        throw std::invalid_argument("mixing_time: need n_cells >= 1 and h_ks > 0");
    return std::log(n_cells) / h_ks;
}

}  // namespace kr
