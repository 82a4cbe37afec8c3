#include "experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <utility>

#include "json.hpp"
#include "kr/density.hpp"
#include "kr/manifold.hpp"
#include "kr/map.hpp"
#include "kr/quantum.hpp"
#include "kr/rng.hpp"
#include "kr/semiclassical.hpp"

namespace kr {

namespace {

using json = nlohmann::json;

struct Check {
    std::string name;
    bool pass = false;
    double measured = 0.0;
    std::string gate;
};

// Per-run staging area. Data files are built in memory and flushed only after
// the whole computation succeeds, so a failed run never leaves partial output.
struct Ctx {
    Config& cfg;
    std::uint64_t seed = 0;
    bool sealed = false;
    json derived = json::object();
    std::vector<Check> checks;
    std::vector<std::pair<std::string, std::string>> files;

    void seal() {
        cfg.finish();
        sealed = true;
    }
    void file(const std::string& name, std::string content) {
        if (!sealed) throw std::logic_error("file staged before config validation");
        files.emplace_back(name, std::move(content));
    }
    void check(const std::string& name, bool pass, double measured, const std::string& gate) {
        checks.push_back({name, pass, measured, gate});
    }
    bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

std::string gnum(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%g", v);
    return b;
}

double tdist(const Point& a, const Point& b) {
    double dx = std::remainder(a.x - b.x, 1.0);
    double dp = std::remainder(a.p - b.p, 1.0);
    return std::hypot(dx, dp);
}

FixedPointInfo pick_anchor(const MapParams& mp, double ax, double ap) {
    auto fps = fixed_points(mp);
    int bi = 0;
    double best = 1e300;
    for (int i = 0; i < 2; ++i) {
        double d = tdist(fps[static_cast<std::size_t>(i)].z, Point{ax, ap});
        if (d < best) {
            best = d;
            bi = i;
        }
    }
    if (best > 0.25)
        throw ConfigError("no period-1 point within 0.25 of anchor (" + gnum(ax) + "," + gnum(ap) + ")");
    const FixedPointInfo& fp = fps[static_cast<std::size_t>(bi)];
    if (fp.stability != Stability::hyperbolic)
        throw ConfigError("anchor point (" + gnum(fp.z.x) + "," + gnum(fp.z.p) + ") is not hyperbolic");
    return fp;
}

PropagationMethod parse_method(const std::string& s) {
    if (s == "split-step" || s == "split_step") return PropagationMethod::split_step;
    if (s == "matrix") return PropagationMethod::matrix;
    throw ConfigError("method must be 'split-step' or 'matrix', got '" + s + "'");
}

const char* regime_name(PerturbationRegime r) {
    switch (r) {
        case PerturbationRegime::quantum_perturbative: return "quantum_perturbative";
        case PerturbationRegime::fermi_golden_rule: return "fermi_golden_rule";
        case PerturbationRegime::lyapunov: return "lyapunov";
    }
    return "unknown";
}

int regime_stage(PerturbationRegime r) {
    switch (r) {
        case PerturbationRegime::quantum_perturbative: return 0;
        case PerturbationRegime::fermi_golden_rule: return 1;
        case PerturbationRegime::lyapunov: return 2;
    }
    return -1;
}

void require_ascending(const std::vector<long long>& v, const std::string& key) {
    if (v.empty()) throw ConfigError("config key '" + key + "': empty list");
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] < 0) throw ConfigError("config key '" + key + "': entries must be >= 0");
        if (i && v[i] <= v[i - 1])
            throw ConfigError("config key '" + key + "': entries must be strictly ascending");
    }
}

bool contains(const std::vector<long long>& v, long long x) {
    return std::find(v.begin(), v.end(), x) != v.end();
}

std::string state_dump(const QuantumParams& qp, const std::vector<cdouble>& amp,
                       const std::string& label) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "# %s, N=%d K=%.12g\n# n x density Re Im\n", label.c_str(),
                  qp.N, qp.K);
    out += buf;
    auto dens = position_density(amp);
    for (int n = 0; n < qp.N; ++n) {
        std::snprintf(buf, sizeof buf, "%d %.12g %.12g %.12g %.12g\n", n, qp.x_of(n),
                      dens[static_cast<std::size_t>(n)], amp[static_cast<std::size_t>(n)].real(),
                      amp[static_cast<std::size_t>(n)].imag());
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------- poincare

void exp_poincare(Ctx& c) {
    auto Ks = c.cfg.get_doubles("section.K", {0.5, 3.5, 8.0});
    auto orbits = c.cfg.get_lls("section.orbits", {16, 16, 1});
    long long iters = c.cfg.get_ll("section.iterations", 2000);
    if (orbits.size() == 1) orbits.assign(Ks.size(), orbits[0]);
    if (orbits.size() != Ks.size())
        throw ConfigError("section.orbits needs one entry or one per section.K value");
    for (long long n : orbits)
        if (n < 1) throw ConfigError("section.orbits entries must be >= 1");
    if (iters < 1) throw ConfigError("section.iterations must be >= 1");
    for (std::size_t i = 0; i < Ks.size(); ++i)
        for (std::size_t j = i + 1; j < Ks.size(); ++j)
            if (gnum(Ks[i]) == gnum(Ks[j]))
                throw ConfigError("section.K values must be distinct");
    c.seal();

    long long total = 0;
    bool inside = true;
    json panels = json::array();
    std::vector<std::string> fnames;
    char buf[160];
    for (std::size_t i = 0; i < Ks.size(); ++i) {
        MapParams mp{Ks[i]};
        auto eng = make_engine(c.seed, i);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::vector<Point> seeds;
        for (long long k = 0; k < orbits[i]; ++k) {
            double x = u01(eng);
            double p = u01(eng);
            seeds.push_back({x, p});
        }
        auto secs = poincare_section(mp, seeds, iters);
        std::string out;
        std::snprintf(buf, sizeof buf, "# surface of section, K=%.12g, %lld orbit(s) of %lld kicks\n# t x p\n",
                      Ks[i], orbits[i], iters);
        out += buf;
        for (const auto& ob : secs) {
            for (std::size_t j = 0; j < ob.size(); ++j) {
                const Point& z = ob.pts[j];
                if (!(z.x >= 0.0 && z.x < 1.0 && z.p >= 0.0 && z.p < 1.0)) inside = false;
                std::snprintf(buf, sizeof buf, "%zu %.12g %.12g\n", j, z.x, z.p);
                out += buf;
                ++total;
            }
            out += "\n";
        }
        std::string fname = "section_K" + gnum(Ks[i]) + ".dat";
        c.file(fname, out);
        fnames.push_back(fname);
        json pj = json::object();
        pj["K"] = Ks[i];
        pj["orbits"] = orbits[i];
        pj["points"] = orbits[i] * (iters + 1);
        panels.push_back(pj);
    }
    c.derived["panels"] = panels;
    c.derived["total_points"] = total;
    c.check("points_wrapped_into_unit_square", inside, static_cast<double>(total), "all_in_[0,1)^2");

    std::string gp = "set terminal pngcairo size 1560,540\nset output 'poincare.png'\n";
    gp += "set multiplot layout 1," + std::to_string(Ks.size()) + "\n";
    gp += "set xrange [0:1]\nset yrange [0:1]\nset xlabel 'x'\nset ylabel 'p'\n";
    for (std::size_t i = 0; i < Ks.size(); ++i) {
        gp += "set title 'K=" + gnum(Ks[i]) + "'\n";
        gp += "plot '" + fnames[i] + "' using 2:3 with dots lc rgb '#1f4e9c' notitle\n";
    }
    gp += "unset multiplot\n";
    c.file("poincare.gnu", gp);
}

// ------------------------------------------------------------------ mixing

void exp_mixing(Ctx& c) {
    double K = c.cfg.get_double("map.K", 10.0);
    double x0 = c.cfg.get_double("density.x0", 0.5);
    double p0 = c.cfg.get_double("density.p0", 0.0);
    double area = c.cfg.get_double("density.area", 1e-3);
    std::string shape = c.cfg.get_string("density.shape", "disk");
    int grid = c.cfg.get_int("mixing.grid", 32);
    long long M = c.cfg.get_ll("mixing.samples", 1000000);
    auto times = c.cfg.get_lls("mixing.times", {0, 1, 2, 3, 4, 5, 6});
    long long plo = c.cfg.get_ll("mixing.probe_lo", 3);
    long long phi = c.cfg.get_ll("mixing.probe_hi", 5);
    auto snaps = c.cfg.get_lls("mixing.snapshot_times", {3, 5});
    long long snapM = c.cfg.get_ll("mixing.snapshot_points", 20000);
    if (shape != "disk" && shape != "gaussian")
        throw ConfigError("density.shape must be 'disk' or 'gaussian'");
    if (area <= 0.0) throw ConfigError("density.area must be > 0");
    if (grid < 2) throw ConfigError("mixing.grid must be >= 2");
    if (M < 1) throw ConfigError("mixing.samples must be >= 1");
    if (snapM < 1) throw ConfigError("mixing.snapshot_points must be >= 1");
    require_ascending(times, "mixing.times");
    if (!contains(times, plo) || !contains(times, phi) || plo >= phi)
        throw ConfigError("mixing.probe_lo/probe_hi must be distinct entries of mixing.times");
    for (long long t : snaps)
        if (t < 0) throw ConfigError("mixing.snapshot_times entries must be >= 0");
    c.seal();

    MapParams mp{K};
    DiskDensity dd = make_disk(x0, p0, area);
    GaussianDensity gd = make_density(x0, p0, area);
    CoverageResult cov = (shape == "disk") ? mixing_coverage(mp, dd, grid, times, M, c.seed)
                                           : mixing_coverage(mp, gd, grid, times, M, c.seed);
    double hks = lyapunov_analytic(K);
    double tau_m = mixing_time(1.0 / area, hks);

    char buf[200];
    std::string dat;
    std::snprintf(buf, sizeof buf,
                  "# %s density x0=%.12g p0=%.12g area=%.12g, K=%.12g, grid=%dx%d, samples=%lld\n# t value stderr\n",
                  shape.c_str(), x0, p0, area, K, grid, grid, M);
    dat += buf;
    double cov_lo = -1.0, cov_hi = -1.0;
    json series = json::array();
    for (const auto& pt : cov.series) {
        std::snprintf(buf, sizeof buf, "%lld %.12g 0\n", pt.t, pt.fraction);
        dat += buf;
        if (pt.t == plo) cov_lo = pt.fraction;
        if (pt.t == phi) cov_hi = pt.fraction;
        series.push_back(json::array({pt.t, pt.fraction}));
    }
    c.file("coverage.dat", dat);

    auto pts0 = (shape == "disk") ? sample(dd, snapM, c.seed) : sample(gd, snapM, c.seed);
    std::vector<std::string> snapfiles;
    for (long long T : snaps) {
        auto pts = pts0;
        for (auto& z : pts)
            for (long long s = 0; s < T; ++s) z = step(mp, z);
        std::string out;
        std::snprintf(buf, sizeof buf, "# %s density after t=%lld kicks, K=%.12g\n# t x p\n",
                      shape.c_str(), T, K);
        out += buf;
        for (const auto& z : pts) {
            std::snprintf(buf, sizeof buf, "%lld %.12g %.12g\n", T, z.x, z.p);
            out += buf;
        }
        std::string fname = "snapshot_t" + std::to_string(T) + ".dat";
        c.file(fname, out);
        snapfiles.push_back(fname);
    }

    c.derived["coverage"] = series;
    c.derived["tau_m"] = tau_m;
    c.derived["h_ks"] = hks;
    c.derived["undersampled"] = cov.undersampled;
    std::string bracket = "in(" + std::to_string(plo) + "," + std::to_string(phi) + ")";
    c.check("coverage_before_mixing_time", cov_lo <= 0.7, cov_lo, "<=0.7");
    c.check("coverage_after_mixing_time", cov_hi >= 0.9, cov_hi, ">=0.9");
    c.check("tau_m_between_probes", static_cast<double>(plo) < tau_m && tau_m < static_cast<double>(phi),
            tau_m, bracket);
    c.check("ensemble_resolves_grid", !cov.undersampled, static_cast<double>(M), ">=10*cells");

    std::string gp = "set terminal pngcairo size 1560,540\nset output 'mixing.png'\n";
    gp += "set multiplot layout 1," + std::to_string(snapfiles.size() + 1) + "\n";
    for (std::size_t i = 0; i < snapfiles.size(); ++i) {
        gp += "set xrange [0:1]\nset yrange [0:1]\nset xlabel 'x'\nset ylabel 'p'\n";
        gp += "set title 't=" + std::to_string(snaps[i]) + "'\n";
        gp += "plot '" + snapfiles[i] + "' using 2:3 with dots lc rgb '#9c1f1f' notitle\n";
    }
    gp += "set title 'grid coverage'\nset xrange [*:*]\nset yrange [0:1.05]\n";
    gp += "set xlabel 't'\nset ylabel 'occupied fraction'\n";
    gp += "set arrow from " + gnum(tau_m) + ", graph 0 to " + gnum(tau_m) + ", graph 1 nohead dashtype 2\n";
    gp += "plot 'coverage.dat' using 1:2 with linespoints pt 7 notitle\n";
    gp += "unset multiplot\n";
    c.file("mixing.gnu", gp);
}

// ---------------------------------------------------------- classical-echo

void exp_classical_echo(Ctx& c) {
    double K = c.cfg.get_double("map.K", 10.0);
    double dK = c.cfg.get_double("echo.deltaK", 1e-4);
    double x0 = c.cfg.get_double("density.x0", 0.5);
    double p0 = c.cfg.get_double("density.p0", 0.0);
    double area = c.cfg.get_double("density.area", 1e-3);
    long long t_max = c.cfg.get_ll("echo.t_max", 12);
    long long M = c.cfg.get_ll("echo.samples", 1000000);
    long long fit_lo = c.cfg.get_ll("echo.fit_lo", 4);
    long long fit_hi = c.cfg.get_ll("echo.fit_hi", 8);
    double alpha_model = c.cfg.get_double("echo.alpha_model", 1.0);
    auto probes = c.cfg.get_lls("echo.probe_times", {3, 6, 12});
    long long snapM = c.cfg.get_ll("echo.snapshot_points", 20000);
    if (area <= 0.0) throw ConfigError("density.area must be > 0");
    if (t_max < 1) throw ConfigError("echo.t_max must be >= 1");
    if (M < 100) throw ConfigError("echo.samples must be >= 100");
    if (snapM < 1) throw ConfigError("echo.snapshot_points must be >= 1");
    require_ascending(probes, "echo.probe_times");
    if (probes.size() != 3) throw ConfigError("echo.probe_times needs exactly 3 entries");
    if (probes.back() > t_max) throw ConfigError("echo.probe_times entries must be <= echo.t_max");
    if (fit_lo < 0 || fit_lo >= fit_hi || fit_hi > t_max)
        throw ConfigError("echo fit window needs 0 <= fit_lo < fit_hi <= t_max");
    c.seal();

    MapParams mp{K}, mq{K + dK};
    GaussianDensity gd = make_density(x0, p0, area);
    auto curve = classical_fidelity(mp, dK, gd, t_max, M, c.seed);
    double eps = dK / K;
    double hks = lyapunov_analytic(K);
    EchoFit fit = fit_echo_model(curve, eps, hks, fit_lo, fit_hi);
    double tau_model = predictability_time(eps, alpha_model, hks);

    char buf[240];
    std::string dat;
    std::snprintf(buf, sizeof buf,
                  "# gaussian density x0=%.12g p0=%.12g sx=%.12g sp=%.12g area=%.12g\n"
                  "# forward K=%.12g, reversed K=%.12g, samples=%lld\n# t value stderr\n",
                  gd.x0, gd.p0, gd.sx, gd.sp, area, K, K + dK, M);
    dat += buf;
    double over[3] = {-1.0, -1.0, -1.0};
    for (const auto& pt : curve) {
        std::snprintf(buf, sizeof buf, "%lld %.12g %.12g\n", pt.t, pt.value, pt.stderr_value);
        dat += buf;
        for (int k = 0; k < 3; ++k)
            if (pt.t == probes[static_cast<std::size_t>(k)]) over[k] = pt.value;
    }
    c.file("echo.dat", dat);

    std::vector<std::string> snapfiles;
    for (long long T : probes) {
        auto pts = sample(gd, snapM, substream_seed(c.seed, 1000 + static_cast<std::uint64_t>(T)));
        for (auto& z : pts) {
            for (long long s = 0; s < T; ++s) z = step(mp, z);
            for (long long s = 0; s < T; ++s) z = step_inverse(mq, z);
        }
        std::string out;
        std::snprintf(buf, sizeof buf,
                      "# density after t=%lld forward kicks (K=%.12g) and t=%lld reversed (K=%.12g)\n# t x p\n",
                      T, K, T, K + dK);
        out += buf;
        for (const auto& z : pts) {
            std::snprintf(buf, sizeof buf, "%lld %.12g %.12g\n", T, z.x, z.p);
            out += buf;
        }
        std::string fname = "reversed_t" + std::to_string(T) + ".dat";
        c.file(fname, out);
        snapfiles.push_back(fname);
    }

    json overlaps = json::array();
    for (int k = 0; k < 3; ++k)
        overlaps.push_back(json::array({probes[static_cast<std::size_t>(k)], over[k]}));
    c.derived["overlaps"] = overlaps;
    c.derived["eps"] = eps;
    c.derived["h_ks"] = hks;
    c.derived["alpha"] = fit.alpha;
    c.derived["alpha_free"] = fit.alpha_free;
    c.derived["mu_free"] = fit.mu_free;
    c.derived["tau_r"] = fit.tau_r;
    c.derived["fit_points"] = fit.n_used;
    c.derived["tau_r_model"] = tau_model;
    c.check("echo_recovered_early", over[0] > 0.8, over[0], ">0.8");
    c.check("echo_partial_memory", over[1] > 0.05 && over[1] < 0.8, over[1], "in(0.05,0.8)");
    c.check("echo_lost_late", over[2] >= 0.0 && over[2] < 0.05, over[2], "<0.05");
    c.check("tau_r_near_model", std::fabs(fit.tau_r - tau_model) <= 1.5, fit.tau_r,
            "|x-" + gnum(tau_model) + "|<=1.5");

    std::string gp = "set terminal pngcairo size 1200,900\nset output 'classical_echo.png'\n";
    gp += "set multiplot layout 2,2\n";
    gp += "set title 'overlap with the initial density'\nset xlabel 't'\nset ylabel 'O(t)'\n";
    gp += "set logscale y\nset format y '10^{%T}'\n";
    gp += "a=" + gnum(fit.alpha) + "\nm=" + gnum(hks) + "\ne=" + gnum(eps) + "\n";
    gp += "plot 'echo.dat' using 1:2:3 with yerrorlines pt 7 title 'measured', "
          "exp(-a**2*e**2*(exp(m*x)-1)**2) title 'model'\n";
    gp += "unset logscale y\nset format y '%g'\n";
    for (std::size_t i = 0; i < snapfiles.size(); ++i) {
        gp += "set xrange [0:1]\nset yrange [0:1]\nset xlabel 'x'\nset ylabel 'p'\n";
        gp += "set title 'forward and reversed, t=" + std::to_string(probes[i]) + "'\n";
        gp += "plot '" + snapfiles[i] + "' using 2:3 with dots lc rgb '#9c1f1f' notitle\n";
    }
    gp += "unset multiplot\n";
    c.file("classical_echo.gnu", gp);
}

// -------------------------------------------------------------- qpropagate

void exp_qpropagate(Ctx& c) {
    int N = c.cfg.get_int("quantum.N", 1000);
    double K = c.cfg.get_double("map.K", 10.0);
    double x0 = c.cfg.get_double("packet.x0", 0.5);
    double p0 = c.cfg.get_double("packet.p0", 0.0);
    double sx = c.cfg.get_double("packet.sigma_x", 0.0);
    auto times = c.cfg.get_lls("qpropagate.times", {0, 1, 2, 3, 4});
    PropagationMethod method = parse_method(c.cfg.get_string("qpropagate.method", "split-step"));
    double thr = c.cfg.get_double("qpropagate.peak_threshold", 0.05);
    long long onset_ref = c.cfg.get_ll("qpropagate.onset_t", 2);
    if (N < 4) throw ConfigError("quantum.N must be >= 4");
    if (method == PropagationMethod::split_step && N % 2 != 0)
        throw ConfigError("split-step propagation needs even quantum.N");
    require_ascending(times, "qpropagate.times");
    if (thr <= 0.0 || thr >= 1.0) throw ConfigError("qpropagate.peak_threshold must be in (0,1)");
    if (onset_ref < 1) throw ConfigError("qpropagate.onset_t must be >= 1");
    c.seal();

    QuantumParams qp{N, K};
    MapParams cm{K};
    double sxx = sx > 0.0 ? sx : default_sigma(N);
    double sp = qp.hbar() / (2.0 * sxx);
    WavePacket pk = wave_packet(qp, x0, p0, sxx);
    long long tmax = times.back();

    // classical reference in the quantum step convention: drift, then kick
    double xc = wrap01(x0);
    double pc = p0 - std::nearbyint(p0);
    auto st = pk.amp;
    json table = json::array();
    long long onset = -1;
    double dev_x = 0.0, dev_p = 0.0;
    std::size_t di = 0;
    for (long long t = 0; t <= tmax; ++t) {
        if (t > 0) {
            st = propagate(qp, st, 1, method);
            xc = wrap01(xc + pc);
            pc -= cm.kick_scale() * std::sin(TWO_PI * xc);
            pc -= std::nearbyint(pc);
        }
        auto dens = position_density(st);
        int peaks = density_peak_count(dens, thr);
        double mx = mean_position(qp, st, xc);
        double mpm = mean_momentum(qp, st);
        if (onset < 0 && peaks >= 3) onset = t;
        if (t <= onset_ref) {
            dev_x = std::max(dev_x, std::fabs(std::remainder(mx - xc, 1.0)));
            dev_p = std::max(dev_p, std::fabs(std::remainder(mpm - pc, 1.0)));
        }
        json row = json::object();
        row["t"] = t;
        row["peaks"] = peaks;
        row["mean_x"] = mx;
        row["mean_p"] = mpm;
        row["x_classical"] = xc;
        row["p_classical"] = pc;
        table.push_back(row);
        if (di < times.size() && times[di] == t) {
            c.file("state_t" + std::to_string(t) + ".dat",
                   state_dump(qp, st, "wave packet after t=" + std::to_string(t) + " kicks"));
            ++di;
        }
    }

    c.derived["table"] = table;
    c.derived["onset_t"] = onset;
    c.derived["tau_E"] = ehrenfest_time(N, K);
    c.derived["sigma_x"] = sxx;
    c.derived["sigma_p"] = sp;
    c.check("interference_onset_detected", onset == onset_ref, static_cast<double>(onset),
            "==" + std::to_string(onset_ref));
    c.check("classical_position_before_onset", dev_x < 3.0 * sxx, dev_x, "<3*sigma_x");
    c.check("classical_momentum_before_onset", dev_p < 3.0 * sp, dev_p, "<3*sigma_p");

    std::string gp = "set terminal pngcairo size " + std::to_string(400 * times.size()) + ",420\n";
    gp += "set output 'qpropagate.png'\n";
    gp += "set multiplot layout 1," + std::to_string(times.size()) + "\n";
    gp += "set xrange [0:1]\nset xlabel 'x'\nset ylabel '|amp|^2'\n";
    for (long long t : times) {
        gp += "set title 't=" + std::to_string(t) + "'\n";
        gp += "plot 'state_t" + std::to_string(t) + ".dat' using 2:3 with lines lc rgb '#1f4e9c' notitle\n";
    }
    gp += "unset multiplot\n";
    c.file("qpropagate.gnu", gp);
}

// ------------------------------------------------------------ quantum-echo

void exp_quantum_echo(Ctx& c) {
    int N = c.cfg.get_int("quantum.N", 1000);
    double K = c.cfg.get_double("map.K", 10.0);
    double dK = c.cfg.get_double("echo.deltaK", 1e-4);
    double x0 = c.cfg.get_double("packet.x0", 0.5);
    double p0 = c.cfg.get_double("packet.p0", 0.0);
    double sx = c.cfg.get_double("packet.sigma_x", 0.0);
    long long t_max = c.cfg.get_ll("echo.t_max", 500);
    PropagationMethod method = parse_method(c.cfg.get_string("echo.method", "split-step"));
    double F_ref = c.cfg.get_double("echo.F_ref", 0.77);
    double F_tol = c.cfg.get_double("echo.F_tol", 0.05);
    double F_floor = c.cfg.get_double("echo.F_floor", 0.5);
    if (N < 4) throw ConfigError("quantum.N must be >= 4");
    if (method == PropagationMethod::split_step && N % 2 != 0)
        throw ConfigError("split-step propagation needs even quantum.N");
    if (t_max < 1) throw ConfigError("echo.t_max must be >= 1");
    if (F_tol <= 0.0) throw ConfigError("echo.F_tol must be > 0");
    c.seal();

    QuantumParams qp{N, K}, qb{N, K + dK};
    double sxx = sx > 0.0 ? sx : default_sigma(N);
    WavePacket pk = wave_packet(qp, x0, p0, sxx);
    auto fid = fidelity_curve(qp, dK, pk, t_max, method);

    char buf[200];
    std::string dat;
    std::snprintf(buf, sizeof buf,
                  "# overlap of propagation with K=%.12g against K=%.12g, N=%d, packet (%.12g,%.12g)\n# t F\n",
                  K, K + dK, N, x0, p0);
    dat += buf;
    double minF = 2.0;
    for (std::size_t t = 0; t < fid.size(); ++t) {
        std::snprintf(buf, sizeof buf, "%zu %.12g\n", t, fid[t]);
        dat += buf;
        minF = std::min(minF, fid[t]);
    }
    c.file("fidelity.dat", dat);

    auto fwd = propagate(qp, pk.amp, t_max, method);
    auto back = propagate(qb, fwd, -t_max, method);
    c.file("state_initial.dat", state_dump(qp, pk.amp, "initial wave packet"));
    c.file("state_echo.dat",
           state_dump(qp, back,
                      "wave packet after " + std::to_string(t_max) + " forward and " +
                          std::to_string(t_max) + " reversed kicks"));

    double F_end = fid.back();
    double echo_overlap = std::norm(inner_product(pk.amp, back));
    RegimeReport reg = classify_regime(N, K, dK);

    c.derived["F_at_" + std::to_string(t_max)] = F_end;
    c.derived["echo_overlap_check"] = echo_overlap;
    c.derived["min_F"] = minF;
    c.derived["gamma2"] = reg.gamma2;
    c.derived["regime"] = regime_name(reg.regime);
    c.derived["tau_r_predicted"] = reg.tau_r;
    c.derived["tau_E"] = reg.tau_E;
    c.derived["tau_H"] = reg.tau_H;
    c.check("final_fidelity_near_reference", std::fabs(F_end - F_ref) <= F_tol, F_end,
            "|x-" + gnum(F_ref) + "|<=" + gnum(F_tol));
    c.check("fidelity_stays_high", minF > F_floor, minF, ">" + gnum(F_floor));
    c.check("predicted_horizon_beyond_run", reg.tau_r > static_cast<double>(t_max), reg.tau_r,
            ">" + std::to_string(t_max));

    std::string gp = "set terminal pngcairo size 1200,480\nset output 'quantum_echo.png'\n";
    gp += "set multiplot layout 1,2\n";
    gp += "set title 'echo fidelity'\nset xlabel 't'\nset ylabel 'F(t)'\nset yrange [0:1.05]\n";
    gp += "plot 'fidelity.dat' using 1:2 with lines lc rgb '#1f4e9c' notitle\n";
    gp += "set title 'position densities'\nset xrange [0:1]\nset yrange [*:*]\n";
    gp += "set xlabel 'x'\nset ylabel '|amp|^2'\n";
    gp += "plot 'state_initial.dat' using 2:3 with lines dashtype 2 title 'initial', "
          "'state_echo.dat' using 2:3 with lines title 'forward-reversed'\n";
    gp += "unset multiplot\n";
    c.file("quantum_echo.gnu", gp);
}

// ------------------------------------------------------ manifold-stability

void exp_manifold_stability(Ctx& c) {
    double K = c.cfg.get_double("map.K", 6.0);
    double dK = c.cfg.get_double("stability.deltaK", 0.02);
    int t = c.cfg.get_int("stability.t", 5);
    double base = c.cfg.get_double("stability.base_arclength", 1e-4);
    double ds = c.cfg.get_double("stability.ds_max", 1e-3);
    double theta = c.cfg.get_double("stability.theta_max", 0.2);
    double ax = c.cfg.get_double("stability.anchor_x", 0.5);
    double ap = c.cfg.get_double("stability.anchor_p", 0.0);
    double seedx = c.cfg.get_double("stability.seed_x", 0.3);
    double seedp = c.cfg.get_double("stability.seed_p", 0.2);
    long long sep_t = c.cfg.get_ll("stability.separation_t", 3);
    double hmax = c.cfg.get_double("stability.hausdorff_max", 1e-2);
    double smin = c.cfg.get_double("stability.separation_min", 0.1);
    double shiftmax = c.cfg.get_double("stability.shift_max", 1e-2);
    if (t < 1) throw ConfigError("stability.t must be >= 1");
    if (base <= 0.0 || ds <= 0.0 || theta <= 0.0)
        throw ConfigError("stability refinement parameters must be > 0");
    if (sep_t < 1) throw ConfigError("stability.separation_t must be >= 1");
    MapParams ma{K}, mb{K + dK};
    FixedPointInfo fa = pick_anchor(ma, ax, ap);
    FixedPointInfo fb = pick_anchor(mb, ax, ap);
    c.seal();

    // compare each t-iterate window against the other manifold grown one
    // iterate longer, so the window's far end has matching material
    ManifoldCurve a5 = grow_manifold_iterates(ma, fa, ManifoldKind::unstable, t, base, ds, theta);
    ManifoldCurve b5 = grow_manifold_iterates(mb, fb, ManifoldKind::unstable, t, base, ds, theta);
    ManifoldCurve a6 = grow_manifold_iterates(ma, fa, ManifoldKind::unstable, t + 1, base, ds, theta);
    ManifoldCurve b6 = grow_manifold_iterates(mb, fb, ManifoldKind::unstable, t + 1, base, ds, theta);
    double dab = manifold_distance_directed(a5, b6);
    double dba = manifold_distance_directed(b5, a6);
    CausticReport ra = caustic_count(a5), rb = caustic_count(b5);
    Orbit oa = iterate(ma, {seedx, seedp}, sep_t);
    Orbit ob = iterate(mb, {seedx, seedp}, sep_t);
    double sep = tdist(oa.pts.back(), ob.pts.back());

    char buf[160];
    std::vector<std::string> curvefiles, trajfiles;
    const ManifoldCurve* curves[2] = {&a5, &b5};
    const Orbit* orbs[2] = {&oa, &ob};
    double Kv[2] = {K, K + dK};
    for (int i = 0; i < 2; ++i) {
        std::string out;
        std::snprintf(buf, sizeof buf, "# unstable manifold of (%.12g,%.12g), K=%.12g, t=%d iterates\n# ell x p\n",
                      fa.z.x, fa.z.p, Kv[i], t);
        out += buf;
        const ManifoldCurve& cv = *curves[i];
        for (std::size_t j = 0; j < cv.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.12g %.12g %.12g\n", cv.ell[j], cv.pts[j].x, cv.pts[j].p);
            out += buf;
        }
        std::string fname = "manifold_K" + gnum(Kv[i]) + ".dat";
        c.file(fname, out);
        curvefiles.push_back(fname);

        std::string traj;
        std::snprintf(buf, sizeof buf, "# orbit of (%.12g,%.12g), K=%.12g\n# t x p\n", seedx, seedp, Kv[i]);
        traj += buf;
        for (std::size_t j = 0; j < orbs[i]->size(); ++j) {
            std::snprintf(buf, sizeof buf, "%zu %.12g %.12g\n", j, orbs[i]->pts[j].x, orbs[i]->pts[j].p);
            traj += buf;
        }
        std::string tname = "trajectory_K" + gnum(Kv[i]) + ".dat";
        c.file(tname, traj);
        trajfiles.push_back(tname);
    }

    double maxshift = -1.0;
    if (ra.count() == rb.count()) {
        maxshift = 0.0;
        for (int i = 0; i < ra.count(); ++i) {
            double dx = ra.locations[static_cast<std::size_t>(i)].x -
                        rb.locations[static_cast<std::size_t>(i)].x;
            dx -= std::nearbyint(dx);
            maxshift = std::max(maxshift, std::fabs(dx));
        }
    }
    json caus = json::array();
    for (const CausticReport* r : {&ra, &rb}) {
        json lst = json::array();
        for (const auto& cc : r->locations) {
            json e = json::object();
            e["ell"] = cc.ell;
            e["x"] = cc.x;
            lst.push_back(e);
        }
        caus.push_back(lst);
    }
    c.derived["hausdorff_ab"] = dab;
    c.derived["hausdorff_ba"] = dba;
    c.derived["caustics"] = caus;
    c.derived["caustic_counts"] = json::array({ra.count(), rb.count()});
    c.derived["max_fold_shift"] = maxshift;
    c.derived["trajectory_separation"] = sep;
    c.derived["arclengths"] = json::array({a5.length(), b5.length()});
    bool counts_ok = ra.count() == rb.count() && ra.count() > 0 && !ra.under_resolved && !rb.under_resolved;
    c.check("manifolds_stay_close", dab < hmax && dba < hmax, std::max(dab, dba), "<" + gnum(hmax));
    c.check("common_seed_orbits_separate", sep > smin, sep, ">" + gnum(smin));
    c.check("fold_counts_match", counts_ok, static_cast<double>(ra.count()),
            "==" + std::to_string(rb.count()));
    c.check("fold_locations_stable", counts_ok && maxshift >= 0.0 && maxshift < shiftmax, maxshift,
            "<" + gnum(shiftmax));

    std::string gp = "set terminal pngcairo size 1560,540\nset output 'manifold_stability.png'\n";
    gp += "set multiplot layout 1,3\n";
    gp += "set xrange [0:1]\nset yrange [0:1]\nset xlabel 'x'\nset ylabel 'p'\n";
    gp += "set title 'same seed, two kick strengths'\n";
    gp += "plot '" + trajfiles[0] + "' using 2:3 with points pt 7 ps 1.5 title 'K=" + gnum(K) + "', '" +
          trajfiles[1] + "' using 2:3 with points pt 6 ps 1.5 title 'K=" + gnum(K + dK) + "'\n";
    gp += "set title 'unstable manifolds'\n";
    gp += "plot '" + curvefiles[0] + "' using 2:3 with lines title 'K=" + gnum(K) + "', '" +
          curvefiles[1] + "' using 2:3 with lines dashtype 2 title 'K=" + gnum(K + dK) + "'\n";
    gp += "set title 'configuration-space projection'\nset xrange [*:*]\nset yrange [0:1]\n";
    gp += "set xlabel 'l'\nset ylabel 'x'\n";
    gp += "plot '" + curvefiles[0] + "' using 1:2 with lines title 'K=" + gnum(K) + "', '" +
          curvefiles[1] + "' using 1:2 with lines dashtype 2 title 'K=" + gnum(K + dK) + "'\n";
    gp += "unset multiplot\n";
    c.file("manifold_stability.gnu", gp);
}

// ------------------------------------------------------------- action-diff

void exp_action_diff(Ctx& c) {
    double K = c.cfg.get_double("map.K", 6.0);
    double dK = c.cfg.get_double("action.deltaK", 0.02);
    double ax = c.cfg.get_double("action.anchor_x", 0.5);
    double ap = c.cfg.get_double("action.anchor_p", 0.0);
    int t_series = c.cfg.get_int("action.t_series", 4);
    int n_series = c.cfg.get_int("action.n_series", 1000);
    double ds = c.cfg.get_double("action.ds_max", 1e-3);
    double theta = c.cfg.get_double("action.theta_max", 0.2);
    double base = c.cfg.get_double("action.base_arclength", 1e-4);
    int t_hist = c.cfg.get_int("action.t_hist", 8);
    long long n_hist = c.cfg.get_ll("action.n_hist", 10000);
    double rel_max = c.cfg.get_double("action.rel_dev_max", 0.01);
    double r2_min = c.cfg.get_double("action.r2_min", 0.98);
    double ratio_lo = c.cfg.get_double("action.ratio_lo", 0.5);
    double ratio_hi = c.cfg.get_double("action.ratio_hi", 4.0);
    if (t_series < 2) throw ConfigError("action.t_series must be >= 2");
    if (n_series < 10) throw ConfigError("action.n_series must be >= 10");
    if (t_hist < 4) throw ConfigError("action.t_hist must be >= 4");
    if (n_hist < 10000) throw ConfigError("action.n_hist must be >= 10000");
    if (ds <= 0.0 || theta <= 0.0 || base <= 0.0)
        throw ConfigError("action refinement parameters must be > 0");
    MapParams mp{K};
    FixedPointInfo fa = pick_anchor(mp, ax, ap);
    c.seal();

    ActionDifferenceSeries s = action_difference_series(mp, dK, fa, t_series, n_series, ds, theta, base);
    ActionHistogram h = action_difference_histogram(mp, dK, fa, t_hist, n_hist);

    char buf[200];
    std::string dat;
    std::snprintf(buf, sizeof buf,
                  "# action difference along the unstable manifold, K=%.12g vs %.12g, t=%d\n"
                  "# ell dS_exact dS_pert\n",
                  K, K + dK, t_series);
    dat += buf;
    double lo = 1e300, hi = -1e300, dev = 0.0;
    for (std::size_t k = 0; k < s.ell.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.12g %.12g %.12g\n", s.ell[k], s.dS_exact[k], s.dS_pert[k]);
        dat += buf;
        lo = std::min(lo, s.dS_exact[k]);
        hi = std::max(hi, s.dS_exact[k]);
        dev = std::max(dev, std::fabs(s.dS_exact[k] - s.dS_pert[k]));
    }
    c.file("action_series.dat", dat);
    double rel = dev / (hi - lo);

    std::string hd;
    std::snprintf(buf, sizeof buf,
                  "# first-order action changes over the manifold, K=%.12g deltaK=%.12g, t=%d, n=%lld\n"
                  "# bin_center count gaussian_fit\n",
                  K, dK, t_hist, h.n_samples);
    hd += buf;
    for (std::size_t k = 0; k < h.bin_centers.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.12g %.12g %.12g\n", h.bin_centers[k], h.counts[k],
                      h.gaussian_fit[k]);
        hd += buf;
    }
    c.file("histogram.dat", hd);

    json sweep = json::array();
    for (std::size_t k = 0; k < h.sweep_t.size(); ++k)
        sweep.push_back(json::array({h.sweep_t[k], h.sweep_var[k]}));
    c.derived["series_points"] = static_cast<long long>(s.ell.size());
    c.derived["series_excluded"] = s.excluded;
    c.derived["max_abs_dev"] = dev;
    c.derived["range"] = hi - lo;
    c.derived["rel_dev"] = rel;
    c.derived["hist_mean"] = h.mean;
    c.derived["hist_variance"] = h.variance;
    c.derived["hist_skewness"] = h.skewness;
    c.derived["hist_excess_kurtosis"] = h.excess_kurtosis;
    c.derived["lilliefors_stat"] = h.lilliefors_stat;
    c.derived["lilliefors_crit_1pct"] = h.lilliefors_crit_1pct;
    c.derived["normal_at_1pct"] = h.normal_at_1pct;
    c.derived["variance_sweep"] = sweep;
    c.derived["slope"] = h.slope;
    c.derived["intercept"] = h.intercept;
    c.derived["r_squared"] = h.r_squared;
    c.derived["diffusion_ratio"] = h.diffusion_ratio;
    c.derived["analytic_unit"] = dK * dK * action_diffusion_constant(K);
    c.check("first_order_theory_accurate", rel < rel_max, rel, "<" + gnum(rel_max));
    c.check("action_changes_gaussian", h.normal_at_1pct, h.lilliefors_stat,
            "<" + gnum(h.lilliefors_crit_1pct));
    c.check("variance_grows_linearly", h.r_squared > r2_min, h.r_squared, ">" + gnum(r2_min));
    c.check("diffusion_scale_consistent",
            h.diffusion_ratio >= ratio_lo && h.diffusion_ratio <= ratio_hi, h.diffusion_ratio,
            "in[" + gnum(ratio_lo) + "," + gnum(ratio_hi) + "]");

    std::string gp = "set terminal pngcairo size 1200,480\nset output 'action_diff.png'\n";
    gp += "set multiplot layout 1,2\n";
    gp += "set title 'action difference along the manifold, t=" + std::to_string(t_series) + "'\n";
    gp += "set xlabel 'l'\nset ylabel 'dS'\n";
    gp += "plot 'action_series.dat' using 1:2 with lines title 'exact', "
          "'' using 1:3 with lines dashtype 2 title 'first order'\n";
    gp += "set title 'action changes, t=" + std::to_string(t_hist) + "'\n";
    gp += "set xlabel 'dS'\nset ylabel 'count'\n";
    gp += "set style fill solid 0.4\n";
    gp += "plot 'histogram.dat' using 1:2 with boxes title 'measured', "
          "'' using 1:3 with lines lw 2 title 'gaussian fit'\n";
    gp += "unset multiplot\n";
    c.file("action_diff.gnu", gp);
}

// -------------------------------------------------------------- timescales

void exp_timescales(Ctx& c) {
    double K = c.cfg.get_double("map.K", 10.0);
    int N = c.cfg.get_int("quantum.N", 1000);
    double eps = c.cfg.get_double("echo.eps", 1e-5);
    double alpha = c.cfg.get_double("echo.alpha", 1.0);
    double dK = c.cfg.get_double("quantum.deltaK", 1e-4);
    auto sweep_f = c.cfg.get_doubles("quantum.eps_sweep", {0.1, 1.0, 10.0, 100.0});
    double cells = c.cfg.get_double("mixing.cells", 1000.0);
    long long ly_samples = c.cfg.get_ll("lyapunov.samples", 1000);
    long long ly_t = c.cfg.get_ll("lyapunov.t", 1000);
    double tau_r_ref = c.cfg.get_double("timescales.tau_r_ref", 7.2);
    double tau_m_ref = c.cfg.get_double("timescales.tau_m_ref", 4.3);
    double tau_E_ref = c.cfg.get_double("timescales.tau_E_ref", 4.3);
    double tau_H_ref = c.cfg.get_double("timescales.tau_H_ref", 1000.0);
    double ref_tol = c.cfg.get_double("timescales.ref_tol", 0.05);
    double rate_tol = c.cfg.get_double("timescales.rate_tol", 0.02);
    if (K <= 2.0) throw ConfigError("map.K must be > 2 for the analytic rate");
    if (eps <= 0.0 || alpha <= 0.0) throw ConfigError("echo.eps and echo.alpha must be > 0");
    if (cells <= 1.0) throw ConfigError("mixing.cells must be > 1");
    if (ly_samples < 1 || ly_t < 100)
        throw ConfigError("lyapunov.samples must be >= 1 and lyapunov.t >= 100");
    for (double f : sweep_f)
        if (f <= 0.0) throw ConfigError("quantum.eps_sweep entries must be > 0");
    if (!std::is_sorted(sweep_f.begin(), sweep_f.end()))
        throw ConfigError("quantum.eps_sweep must be ascending");
    c.seal();

    MapParams mp{K};
    LyapunovEstimate est = lyapunov_numeric(mp, ly_samples, ly_t, c.seed);
    double mu = lyapunov_analytic(K);
    double tau_r = predictability_time(eps, alpha, mu);
    double tau_m = mixing_time(cells, mu);
    double tau_Ev = ehrenfest_time(N, K);
    double tau_Hv = heisenberg_time(N);
    RegimeReport reg = classify_regime(N, K, dK);

    json sweep = json::array();
    bool monotone = true;
    double prev_g = 1e300, prev_tr = 1e300;
    int prev_stage = -1;
    for (double f : sweep_f) {
        RegimeReport r = classify_regime(N, K, dK * f);
        json e = json::object();
        e["deltaK"] = dK * f;
        e["gamma2"] = r.gamma2;
        e["regime"] = regime_name(r.regime);
        e["tau_r"] = r.tau_r;
        sweep.push_back(e);
        if (r.gamma2 >= prev_g || r.tau_r > prev_tr || regime_stage(r.regime) < prev_stage)
            monotone = false;
        prev_g = r.gamma2;
        prev_tr = r.tau_r;
        prev_stage = regime_stage(r.regime);
    }

    c.derived["mu_numeric"] = est.mean;
    c.derived["mu_stderr"] = est.stderr_mean;
    c.derived["mu_analytic"] = mu;
    c.derived["tau_r"] = tau_r;
    c.derived["tau_m"] = tau_m;
    c.derived["tau_E"] = tau_Ev;
    c.derived["tau_H"] = tau_Hv;
    c.derived["gamma2"] = reg.gamma2;
    c.derived["regime"] = regime_name(reg.regime);
    c.derived["tau_r_quantum"] = reg.tau_r;
    c.derived["regime_sweep"] = sweep;
    double rate_dev = std::fabs(est.mean - mu) / mu;
    c.check("numeric_rate_matches_analytic", rate_dev < rate_tol, rate_dev, "<" + gnum(rate_tol));
    c.check("tau_r_matches_reference", std::fabs(tau_r - tau_r_ref) <= ref_tol, tau_r,
            "|x-" + gnum(tau_r_ref) + "|<=" + gnum(ref_tol));
    c.check("tau_m_matches_reference", std::fabs(tau_m - tau_m_ref) <= ref_tol, tau_m,
            "|x-" + gnum(tau_m_ref) + "|<=" + gnum(ref_tol));
    c.check("tau_E_matches_reference", std::fabs(tau_Ev - tau_E_ref) <= ref_tol, tau_Ev,
            "|x-" + gnum(tau_E_ref) + "|<=" + gnum(ref_tol));
    c.check("tau_H_matches_reference", std::fabs(tau_Hv - tau_H_ref) <= 0.5, tau_Hv,
            "|x-" + gnum(tau_H_ref) + "|<=0.5");
    c.check("regime_progression_monotone", monotone, static_cast<double>(sweep_f.size()),
            "gamma2_down_stage_up");
}

// ----------------------------------------------------------- semiclassical

void exp_semiclassical(Ctx& c) {
    int N = c.cfg.get_int("quantum.N", 1000);
    double K = c.cfg.get_double("map.K", 10.0);
    double x0 = c.cfg.get_double("packet.x0", 0.5);
    double p0 = c.cfg.get_double("packet.p0", 0.0);
    double sx = c.cfg.get_double("packet.sigma_x", 0.0);
    double bx0 = c.cfg.get_double("packet.beta_x0", x0);
    double bp0 = c.cfg.get_double("packet.beta_p0", p0);
    double bsx = c.cfg.get_double("packet.beta_sigma_x", sx);
    long long T = c.cfg.get_ll("sc.T", 8);
    PropagationMethod method = parse_method(c.cfg.get_string("sc.method", "split-step"));
    double err_max = c.cfg.get_double("sc.err_max", 0.05);
    if (N < 4) throw ConfigError("quantum.N must be >= 4");
    if (method == PropagationMethod::split_step && N % 2 != 0)
        throw ConfigError("split-step propagation needs even quantum.N");
    if (T < 1) throw ConfigError("sc.T must be >= 1");
    if (err_max <= 0.0) throw ConfigError("sc.err_max must be > 0");
    c.seal();

    QuantumParams qp{N, K};
    MapParams mp{K};
    double sa = sx > 0.0 ? sx : default_sigma(N);
    double sb = bsx > 0.0 ? bsx : default_sigma(N);
    WavePacket wa = wave_packet(qp, x0, p0, sa);
    WavePacket wb = wave_packet(qp, bx0, bp0, sb);
    CorrelationSeries series = semiclassical_correlation(wa, wb, mp, T, method);

    char buf[320];
    std::string dat;
    std::snprintf(buf, sizeof buf,
                  "# saddle-point sum vs exact propagation, N=%d K=%.12g\n"
                  "# alpha=(%.12g,%.12g) sigma=%.12g, beta=(%.12g,%.12g) sigma=%.12g\n"
                  "# t Re(C_sc) Im(C_sc) Re(C_qm) Im(C_qm) n_orbits abs_err\n",
                  N, K, x0, p0, sa, bx0, bp0, sb);
    dat += buf;
    double max_err = 0.0;
    int skipped = 0;
    bool truncated = false;
    json norbits = json::array();
    for (std::size_t i = 0; i < series.t.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%lld %.12g %.12g %.12g %.12g %d %.12g\n", series.t[i],
                      series.semiclassical[i].real(), series.semiclassical[i].imag(),
                      series.quantum[i].real(), series.quantum[i].imag(), series.n_orbits[i],
                      series.abs_error[i]);
        dat += buf;
        max_err = std::max(max_err, series.abs_error[i]);
        skipped += series.skipped_singular[i];
        truncated = truncated || series.truncated[i];
        norbits.push_back(series.n_orbits[i]);
    }
    c.file("series.dat", dat);

    c.derived["max_abs_error"] = max_err;
    c.derived["n_orbits"] = norbits;
    c.derived["skipped_singular"] = skipped;
    c.derived["truncated_any"] = truncated;
    c.derived["tau_E"] = ehrenfest_time(N, K);
    c.check("reconstruction_within_gate", max_err <= err_max, max_err, "<=" + gnum(err_max));
    c.check("term_enumeration_complete", !truncated, truncated ? 1.0 : 0.0, "==0");

    std::string gp = "set terminal pngcairo size 1200,480\nset output 'semiclassical.png'\n";
    gp += "set multiplot layout 1,2\n";
    gp += "set title 'return amplitude magnitude'\nset xlabel 't'\nset ylabel '|C(t)|'\n";
    gp += "plot 'series.dat' using 1:(sqrt($2**2+$3**2)) with linespoints pt 7 title 'saddle-point sum', "
          "'' using 1:(sqrt($4**2+$5**2)) with linespoints pt 6 title 'exact'\n";
    gp += "set title 'absolute error'\nset xlabel 't'\nset ylabel '|C_{sc}-C_{qm}|'\n";
    gp += "plot 'series.dat' using 1:7 with linespoints pt 7 notitle\n";
    gp += "unset multiplot\n";
    c.file("semiclassical.gnu", gp);
}

struct ExpEntry {
    const char* name;
    const char* blurb;
    void (*fn)(Ctx&);
};

const ExpEntry kExperiments[] = {
    {"poincare", "surface-of-section panels across kick strengths", exp_poincare},
    {"mixing", "spreading of a small density and grid coverage", exp_mixing},
    {"classical-echo", "forward/reversed classical densities and overlap decay", exp_classical_echo},
    {"qpropagate", "forward wave packet propagation and interference onset", exp_qpropagate},
    {"quantum-echo", "forward/reversed quantum propagation fidelity", exp_quantum_echo},
    {"manifold-stability", "unstable manifolds under a small kick change", exp_manifold_stability},
    {"action-diff", "manifold action differences: exact, first order, histogram", exp_action_diff},
    {"timescales", "characteristic times and perturbation regimes", exp_timescales},
    {"semiclassical", "saddle-point reconstruction of the correlation function", exp_semiclassical},
};

}  // namespace

const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& e : kExperiments) v.push_back(e.name);
        return v;
    }();
    return names;
}

bool is_experiment(const std::string& name) {
    for (const auto& e : kExperiments)
        if (name == e.name) return true;
    return false;
}

std::string experiment_blurb(const std::string& name) {
    for (const auto& e : kExperiments)
        if (name == e.name) return e.blurb;
    return "";
}

int run_experiment(const std::string& name, Config& cfg, const RunOptions& opt) {
    const ExpEntry* entry = nullptr;
    for (const auto& e : kExperiments)
        if (name == e.name) entry = &e;
    if (!entry) throw ConfigError("unknown experiment '" + name + "'");

    std::string declared = cfg.get_string("run.experiment", name);
    if (declared != name)
        throw ConfigError("config declares experiment '" + declared + "' but the subcommand is '" +
                          name + "'");
    Ctx ctx{cfg};
    ctx.seed = opt.seed_given ? opt.seed : static_cast<std::uint64_t>(cfg.get_ll("run.seed", 42));
    std::string out = !opt.out_dir.empty() ? opt.out_dir : cfg.get_string("run.out", "out/" + name);

    auto t0 = std::chrono::steady_clock::now();
    entry->fn(ctx);
    auto t1 = std::chrono::steady_clock::now();

    std::filesystem::create_directories(out);
    json summary;
    summary["experiment"] = name;
    summary["seed"] = ctx.seed;
    json echo = json::object();
    for (const auto& kv : cfg.items()) echo[kv.first] = kv.second;
    summary["config"] = echo;
    summary["derived"] = ctx.derived;
    json checks = json::array();
    for (const auto& ck : ctx.checks) {
        json e = json::object();
        e["name"] = ck.name;
        e["pass"] = ck.pass;
        e["measured"] = ck.measured;
        e["gate"] = ck.gate;
        checks.push_back(e);
    }
    summary["checks"] = checks;
    json flist = json::array();
    for (const auto& f : ctx.files) flist.push_back(f.first);
    summary["files"] = flist;
    summary["all_checks_pass"] = ctx.all_pass();

    // summary.json is written last, so its presence marks a complete run
    for (const auto& f : ctx.files) {
        std::filesystem::path p = std::filesystem::path(out) / f.first;
        std::ofstream os(p, std::ios::binary);
        os << f.second;
        if (!os) throw std::runtime_error("failed writing " + p.string());
    }
    {
        std::filesystem::path p = std::filesystem::path(out) / "summary.json";
        std::ofstream os(p, std::ios::binary);
        os << summary.dump(2) << "\n";
        if (!os) throw std::runtime_error("failed writing " + p.string());
    }
    auto t2 = std::chrono::steady_clock::now();

    for (const auto& ck : ctx.checks)
        std::printf("check %s %s measured=%.6g gate=%s\n", ck.pass ? "PASS" : "FAIL",
                    ck.name.c_str(), ck.measured, ck.gate.c_str());
    double dt_compute = std::chrono::duration<double>(t1 - t0).count();
    double dt_write = std::chrono::duration<double>(t2 - t1).count();
    std::printf("timing compute=%.3fs write=%.3fs\n", dt_compute, dt_write);
    std::printf("wrote %zu data file(s) and summary.json under %s\n", ctx.files.size(), out.c_str());
    return ctx.all_pass() ? 0 : 1;
}

}  // namespace kr
