#include "kr/semiclassical.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

namespace kr {

namespace {

double mi(double v) { return v - std::round(v); }

double tdist(const Point& a, const Point& b) { return std::hypot(mi(a.x - b.x), mi(a.p - b.p)); }

int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

// Packet geometry in the drift-leading frame the quantum step factors in;
// positions there are sampled between the drift and the kick, so a map-frame
// point (x, p) sits at (x - p, p).
struct PacketFrame {
    double x0 = 0.0, p0 = 0.0, sx = 0.0, sp = 0.0, hbar = 0.0;
};

PacketFrame frame_of(const WavePacket& w) {
    if (!(w.sigma_x > 0.0))
        throw std::invalid_argument("semiclassical: packet width must be positive");
    double hbar = w.qp.hbar();
    return {w.x0, w.p0, w.sigma_x, hbar / (2.0 * w.sigma_x), hbar};
}

// Offset of a map-frame point from the packet center, in packet widths.
double sigma_radius(const Point& z, const PacketFrame& f) {
    return std::hypot(mi(z.x - z.p - f.x0) / f.sx, mi(z.p - f.p0) / f.sp);
}

FixedPointInfo anchor_near(const MapParams& mp, double x, double p) {
    auto fps = fixed_points(mp);
    const FixedPointInfo* best = nullptr;
    double best_d = 0.0;
    for (const auto& f : fps) {
        if (f.stability != Stability::hyperbolic) continue;
        double d = tdist(f.z, {x, p});
        if (!best || d < best_d) {
            best = &f;
            best_d = d;
        }
    }
    if (!best || best_d > 0.1)
        throw std::invalid_argument(
            "semiclassical: packet center is not near a hyperbolic period-1 point");
    return *best;
}

// One branch of an invariant curve clipped where the packet offset passes the
// cut, with the chord-parameter -> signed-arc-length table of its nodes.
struct LocalBranch {
    ManifoldCurve curve;
    double g_hi = 0.0;
    std::vector<double> g_nodes, ell_nodes;
};

LocalBranch local_branch(const MapParams& mp, const FixedPointInfo& anchor, ManifoldKind kind,
                         int branch, const PacketFrame& f, double cut_sigma) {
    double target = 8.0 * std::max(f.sx, f.sp);
    for (int round = 0; round < 8; ++round, target *= 1.7) {
        ManifoldCurve c = grow_manifold(mp, anchor, kind, target, 1e-3, 0.2, branch);
        std::size_t stop = c.size();
        for (std::size_t i = 0; i < c.size(); ++i) {
            if (sigma_radius(c.pts[i], f) > cut_sigma) {
                stop = i;
                break;
            }
        }
        if (stop == c.size()) continue;  // whole segment still inside: grow further
        LocalBranch out;
        double sign = branch >= 0 ? 1.0 : -1.0;
        out.g_nodes.reserve(stop + 1);
        out.ell_nodes.reserve(stop + 1);
        for (std::size_t i = 0; i <= stop; ++i) {
            out.g_nodes.push_back(c.history[i].piece + c.history[i].u);
            out.ell_nodes.push_back(sign * (c.seed_distance + c.ell[i]));
        }
        out.g_hi = out.g_nodes.back();
        out.curve = std::move(c);
        return out;
    }
    throw std::runtime_error("semiclassical: local manifold segment never left the packet cut");
}

double ell_at(const LocalBranch& lb, double g) {
    const auto& gs = lb.g_nodes;
    if (g <= gs.front()) return lb.ell_nodes.front();
    if (g >= gs.back()) return lb.ell_nodes.back();
    auto it = std::upper_bound(gs.begin(), gs.end(), g);
    std::size_t i = static_cast<std::size_t>(it - gs.begin());
    double f = (g - gs[i - 1]) / (gs[i] - gs[i - 1]);
    return lb.ell_nodes[i - 1] + f * (lb.ell_nodes[i] - lb.ell_nodes[i - 1]);
}

// Exact curve point from the chord parameter g = piece + u. Negative pieces
// walk the contracting direction and fill the seam next to the anchor.
struct BranchEval {
    const MapParams* mp = nullptr;
    Point s0, s1;
    double dx = 0.0, dp = 0.0;
    int map_power = 1;
    bool fwd = true;

    explicit BranchEval(const ManifoldCurve& c)
        : mp(&c.params),
          s0(c.seed0),
          s1(c.seed1),
          dx(mi(c.seed1.x - c.seed0.x)),
          dp(mi(c.seed1.p - c.seed0.p)),
          map_power(c.map_power),
          fwd(c.forward_expanding()) {}

    Point at(double g) const {
        double pf = std::floor(g);
        double u = g - pf;
        Point z = u == 0.0 ? s0 : Point{wrap01(s0.x + u * dx), wrap01(s0.p + u * dp)};
        long long n = static_cast<long long>(std::abs(pf)) * map_power;
        bool dir = pf >= 0.0 ? fwd : !fwd;
        for (long long k = 0; k < n; ++k) z = dir ? step(*mp, z) : step_inverse(*mp, z);
        return z;
    }
};

struct ImageSeg {
    double ga = 0.0, gb = 0.0;
    Point za, zb;
};

// Distance from b to the chord a-c in the torus metric.
double sag(const Point& a, const Point& b, const Point& c) {
    double vx = mi(c.x - a.x), vp = mi(c.p - a.p);
    double wx = mi(b.x - a.x), wp = mi(b.p - a.p);
    double vv = vx * vx + vp * vp;
    if (vv == 0.0) return std::hypot(wx, wp);
    double s = std::clamp((wx * vx + wp * vp) / vv, 0.0, 1.0);
    return std::hypot(wx - s * vx, wp - s * vp);
}

constexpr double kMaxChord = 6e-3;
constexpr double kMaxSag = 1.5e-3;
constexpr long long kEvalBudget = 12'000'000;

// Emits chords of the stepped image of a curve branch, in g order, refined
// until both the chord and the midpoint sag pass the tolerances.
class ImageWalker {
  public:
    ImageWalker(const BranchEval& eval, int steps, bool forward)
        : eval_(eval), steps_(steps), forward_(forward) {}

    Point image(double g) {
        ++used_;
        Point z = eval_.at(g);
        for (int k = 0; k < steps_; ++k)
            z = forward_ ? step(*eval_.mp, z) : step_inverse(*eval_.mp, z);
        return z;
    }

    void walk(double ga, const Point& za, double gb, const Point& zb, int depth,
              const std::function<void(const ImageSeg&)>& emit) {
        if (used_ > kEvalBudget || depth >= 48) {
            truncated_ = true;
            emit({ga, gb, za, zb});
            return;
        }
        double gm = 0.5 * (ga + gb);
        Point zm = image(gm);
        if (tdist(za, zb) <= kMaxChord && sag(za, zm, zb) <= kMaxSag) {
            emit({ga, gm, za, zm});
            emit({gm, gb, zm, zb});
        } else {
            walk(ga, za, gm, zm, depth + 1, emit);
            walk(gm, zm, gb, zb, depth + 1, emit);
        }
    }

    // Seeds the walk at the branch's own nodes plus a short run of negative
    // pieces, so the seam next to the anchor is covered.
    void run(const LocalBranch& lb, const std::function<void(const ImageSeg&)>& emit) {
        std::vector<double> gs = {-2.0, -1.5, -1.0, -0.5};
        for (double g : lb.g_nodes)
            if (g > gs.back()) gs.push_back(g);
        std::vector<Point> zs(gs.size());
        for (std::size_t i = 0; i < gs.size(); ++i) zs[i] = image(gs[i]);
        for (std::size_t i = 0; i + 1 < gs.size(); ++i)
            walk(gs[i], zs[i], gs[i + 1], zs[i + 1], 0, emit);
    }

    bool truncated() const { return truncated_; }

  private:
    BranchEval eval_;
    int steps_ = 0;
    bool forward_ = true;
    long long used_ = 0;
    bool truncated_ = false;
};

// Torus-periodic spatial hash over the backward-image segments.
struct SegGrid {
    static constexpr int kN = 50;
    std::vector<ImageSeg> segs;
    std::vector<double> ell_a, ell_b;
    std::unordered_map<int, std::vector<int>> bins;

    static int cell_of(const Point& z) {
        int kx = std::min(kN - 1, static_cast<int>(wrap01(z.x) * kN));
        int kp = std::min(kN - 1, static_cast<int>(wrap01(z.p) * kN));
        return kx * kN + kp;
    }

    static Point midpoint(const ImageSeg& s) {
        return {wrap01(s.za.x + 0.5 * mi(s.zb.x - s.za.x)), wrap01(s.za.p + 0.5 * mi(s.zb.p - s.za.p))};
    }

    void insert(const ImageSeg& s, double ea, double eb) {
        int id = static_cast<int>(segs.size());
        segs.push_back(s);
        ell_a.push_back(ea);
        ell_b.push_back(eb);
        bins[cell_of(midpoint(s))].push_back(id);
    }

    void nearby(const Point& z, const std::function<void(int)>& fn) const {
        int kx = std::min(kN - 1, static_cast<int>(wrap01(z.x) * kN));
        int kp = std::min(kN - 1, static_cast<int>(wrap01(z.p) * kN));
        for (int ix = -1; ix <= 1; ++ix) {
            for (int ip = -1; ip <= 1; ++ip) {
                int cx = (kx + ix + kN) % kN, cp = (kp + ip + kN) % kN;
                auto it = bins.find(cx * kN + cp);
                if (it == bins.end()) continue;
                for (int id : it->second) fn(id);
            }
        }
    }
};

struct RawCrossing {
    double g_u = 0.0, ell_u = 0.0, ell_s = 0.0;
    int ubranch = 0;
};

// Sharpens the crossing parameter by bisecting the exact forward image
// against the backward chord's line. A chord-level hit with no sign change on
// the exact curve is either spurious (dropped) or a near-tangent pair whose
// two roots both sit inside one chord (split at the midpoint); the number of
// refined roots written to out_g is returned.
int refine_crossing(ImageWalker& w, const ImageSeg& fs, const ImageSeg& bs, double* out_g) {
    double bx = mi(bs.zb.x - bs.za.x), bp = mi(bs.zb.p - bs.za.p);
    auto side = [&](const Point& z) { return bx * mi(z.p - bs.za.p) - bp * mi(z.x - bs.za.x); };
    auto bisect = [&](double ga, double sa, double gb) {
        for (int it = 0; it < 46; ++it) {
            double gm = 0.5 * (ga + gb);
            double sm = side(w.image(gm));
            if (sm == 0.0) return gm;
            if (sa * sm < 0.0) {
                gb = gm;
            } else {
                ga = gm;
                sa = sm;
            }
        }
        return 0.5 * (ga + gb);
    };
    double sa = side(fs.za), sb = side(fs.zb);
    if (sa == 0.0) {
        out_g[0] = fs.ga;
        return 1;
    }
    if (sb == 0.0) {
        out_g[0] = fs.gb;
        return 1;
    }
    if (sa * sb < 0.0) {
        out_g[0] = bisect(fs.ga, sa, fs.gb);
        return 1;
    }
    double gm = 0.5 * (fs.ga + fs.gb);
    double sm = side(w.image(gm));
    if (sa * sm >= 0.0) return 0;
    out_g[0] = bisect(fs.ga, sa, gm);
    out_g[1] = bisect(gm, sm, fs.gb);
    return 2;
}

HeteroclinicOrbit dress_orbit(const MapParams& mp, const Point& z0, double tx, double tp,
                              long long t, double ell_u, double ell_s, const PacketFrame& fa,
                              const PacketFrame& fb) {
    HeteroclinicOrbit o;
    o.ell_u = ell_u;
    o.ell_s = ell_s;
    o.segment.pts.reserve(static_cast<std::size_t>(t) + 1);
    o.segment.lift.reserve(static_cast<std::size_t>(t) + 1);
    std::vector<double> xs;
    xs.reserve(static_cast<std::size_t>(t) + 1);
    double xl = z0.x, pl = z0.p;
    auto push = [&](double X, double P) {
        Point wz{wrap01(X), wrap01(P)};
        o.segment.pts.push_back(wz);
        o.segment.lift.push_back({std::llround(X - wz.x), std::llround(P - wz.p)});
        xs.push_back(X);
    };
    push(xl, pl);
    TangentFrame m;
    double vx = tx, vp = tp;
    int last_sign = sign_of(vx - vp);
    for (long long j = 0; j < t; ++j) {
        TangentFrame J = jacobian(mp, o.segment.pts[static_cast<std::size_t>(j)].x);
        m = J * m;
        double nvx = J.a11 * vx + J.a12 * vp;
        double nvp = J.a21 * vx + J.a22 * vp;
        double sc = std::max(std::abs(nvx), std::abs(nvp));
        if (sc > 0.0) {
            nvx /= sc;
            nvp /= sc;
        }
        vx = nvx;
        vp = nvp;
        int sg = sign_of(vx - vp);
        if (sg != 0 && last_sign != 0 && sg != last_sign) ++o.maslov;
        if (sg != 0) last_sign = sg;
        step_lifted(mp, xl, pl);
        push(xl, pl);
    }
    o.stability = m;
    o.action = path_action(mp, xs);
    o.r_alpha = sigma_radius(o.segment.pts.front(), fa);
    o.r_beta = sigma_radius(o.segment.pts.back(), fb);
    return o;
}

constexpr double kNeighborhoodSigma = 4.0;
constexpr double kClipSigma = 4.6;

HeteroclinicOrbitSet enumerate_impl(const WavePacket& alpha, const WavePacket& beta, long long t,
                                    const MapParams& mp) {
    if (t < 1) throw std::invalid_argument("enumerate_heteroclinic_terms: t must be >= 1");
    if (alpha.qp.N != beta.qp.N)
        throw std::invalid_argument(
            "enumerate_heteroclinic_terms: packets live in different Hilbert spaces");
    PacketFrame fa = frame_of(alpha), fb = frame_of(beta);
    FixedPointInfo aa = anchor_near(mp, fa.x0 + fa.p0, fa.p0);
    FixedPointInfo ab = anchor_near(mp, fb.x0 + fb.p0, fb.p0);

    int t_fwd = static_cast<int>((t + 1) / 2);
    int t_bwd = static_cast<int>(t / 2);

    std::array<LocalBranch, 2> ub = {
        local_branch(mp, aa, ManifoldKind::unstable, +1, fa, kClipSigma),
        local_branch(mp, aa, ManifoldKind::unstable, -1, fa, kClipSigma)};
    std::array<LocalBranch, 2> sb = {
        local_branch(mp, ab, ManifoldKind::stable, +1, fb, kClipSigma),
        local_branch(mp, ab, ManifoldKind::stable, -1, fb, kClipSigma)};

    HeteroclinicOrbitSet out;

    SegGrid grid;
    for (const auto& lb : sb) {
        ImageWalker w(BranchEval(lb.curve), t_bwd, false);
        w.run(lb, [&](const ImageSeg& s) { grid.insert(s, ell_at(lb, s.ga), ell_at(lb, s.gb)); });
        out.truncated = out.truncated || w.truncated();
    }

    std::vector<RawCrossing> raw;
    std::array<BranchEval, 2> uev = {BranchEval(ub[0].curve), BranchEval(ub[1].curve)};
    for (int k = 0; k < 2; ++k) {
        ImageWalker w(uev[static_cast<std::size_t>(k)], t_fwd, true);
        std::vector<int> ids;
        auto on_seg = [&](const ImageSeg& fs) {
            double fx = mi(fs.zb.x - fs.za.x), fp = mi(fs.zb.p - fs.za.p);
            ids.clear();
            grid.nearby(SegGrid::midpoint(fs), [&](int id) { ids.push_back(id); });
            std::sort(ids.begin(), ids.end());
            ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
            for (int id : ids) {
                const ImageSeg& bs = grid.segs[static_cast<std::size_t>(id)];
                double bx = mi(bs.zb.x - bs.za.x), bp = mi(bs.zb.p - bs.za.p);
                double rx = mi(bs.za.x - fs.za.x), rp = mi(bs.za.p - fs.za.p);
                double den = fx * bp - fp * bx;
                double norm = std::hypot(fx, fp) * std::hypot(bx, bp);
                if (norm == 0.0 || std::abs(den) < 1e-12 * norm) continue;
                double s = (rx * bp - rp * bx) / den;
                double wf = (rx * fp - rp * fx) / den;
                if (!(s >= 0.0 && s < 1.0 && wf >= 0.0 && wf < 1.0)) continue;
                double gs[2];
                int nr = refine_crossing(w, fs, bs, gs);
                for (int r = 0; r < nr; ++r) {
                    Point zc = w.image(gs[r]);
                    double bb = bx * bx + bp * bp;
                    double wc =
                        bb == 0.0
                            ? 0.0
                            : std::clamp((mi(zc.x - bs.za.x) * bx + mi(zc.p - bs.za.p) * bp) / bb,
                                         0.0, 1.0);
                    std::size_t sid = static_cast<std::size_t>(id);
                    raw.push_back({gs[r], ell_at(ub[static_cast<std::size_t>(k)], gs[r]),
                                   grid.ell_a[sid] + wc * (grid.ell_b[sid] - grid.ell_a[sid]), k});
                }
            }
        };
        w.run(ub[static_cast<std::size_t>(k)], on_seg);
        out.truncated = out.truncated || w.truncated();
    }

    // The anchor orbit itself sits in the seam the seeded walks straddle; add
    // it directly and drop rediscoveries of it.
    std::vector<HeteroclinicOrbit> orbs;
    orbs.reserve(raw.size() + 1);
    {
        HeteroclinicOrbit k0 =
            dress_orbit(mp, aa.z, aa.ev_u[0], aa.ev_u[1], t, 0.0, 0.0, fa, fb);
        if (k0.r_alpha <= kNeighborhoodSigma && k0.r_beta <= kNeighborhoodSigma)
            orbs.push_back(std::move(k0));
    }
    const double h = 1e-6;
    for (const auto& rc : raw) {
        const BranchEval& ev = uev[static_cast<std::size_t>(rc.ubranch)];
        Point z0 = ev.at(rc.g_u);
        if (tdist(z0, aa.z) < 1e-9) continue;
        Point ta = ev.at(rc.g_u - h), tb = ev.at(rc.g_u + h);
        double tx = mi(tb.x - ta.x), tp = mi(tb.p - ta.p);
        double tn = std::hypot(tx, tp);
        if (tn > 0.0) {
            tx /= tn;
            tp /= tn;
        } else {
            tx = aa.ev_u[0];
            tp = aa.ev_u[1];
        }
        HeteroclinicOrbit o = dress_orbit(mp, z0, tx, tp, t, rc.ell_u, rc.ell_s, fa, fb);
        if (o.r_alpha > kNeighborhoodSigma || o.r_beta > kNeighborhoodSigma) continue;
        orbs.push_back(std::move(o));
    }
    std::stable_sort(orbs.begin(), orbs.end(),
                     [](const HeteroclinicOrbit& a, const HeteroclinicOrbit& b) {
                         if (a.ell_u != b.ell_u) return a.ell_u < b.ell_u;
                         return a.ell_s < b.ell_s;
                     });
    // Adjacent chords can refine onto the same root from either side; distinct
    // transversal crossings never sit this close in both coordinates.
    auto dup = [](const HeteroclinicOrbit& a, const HeteroclinicOrbit& b) {
        return std::abs(a.ell_u - b.ell_u) < 1e-9 && std::abs(a.ell_s - b.ell_s) < 1e-9;
    };
    orbs.erase(std::unique(orbs.begin(), orbs.end(), dup), orbs.end());
    out.orbits = std::move(orbs);
    return out;
}

struct KahanAcc {
    double s = 0.0, c = 0.0;
    void add(double v) {
        double y = v - c;
        double u = s + y;
        c = (u - s) - y;
        s = u;
    }
};

}  // namespace

HeteroclinicOrbitSet enumerate_heteroclinic_terms(const WavePacket& alpha, const WavePacket& beta,
                                                  long long t, const MapParams& mp) {
    return enumerate_impl(alpha, beta, t, mp);
}

HeteroclinicContribution contribution(const HeteroclinicOrbit& orbit, const WavePacket& alpha,
                                      const WavePacket& beta, const MapParams& mp) {
    if (alpha.qp.N != beta.qp.N)
        throw std::invalid_argument("contribution: packets live in different Hilbert spaces");
    std::size_t n = orbit.segment.size();
    if (n < 2 || orbit.segment.lift.size() != n)
        throw std::invalid_argument("contribution: orbit segment needs at least one step");
    std::size_t t = n - 1;
    PacketFrame fa = frame_of(alpha), fb = frame_of(beta);
    double hbar = fa.hbar;
    cdouble iu{0.0, 1.0};

    // Skeleton in the drift-leading frame, kept on the unit cell. The grid
    // kernel sees only wrapped coordinates, so the action must be built from
    // raw differences of wrapped positions; every wrap event then contributes
    // an explicit winding phase below.
    std::vector<double> y(n);
    for (std::size_t j = 0; j < n; ++j)
        y[j] = wrap01(orbit.segment.pts[j].x - orbit.segment.pts[j].p);
    double S = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
        double dy = y[j + 1] - y[j];
        S += 0.5 * dy * dy + (mp.K / (TWO_PI * TWO_PI)) * std::cos(TWO_PI * y[j + 1]);
    }

    // Evolve the packet's complex width slope through the linearized steps;
    // every step factor keeps a positive imaginary part, so the per-step
    // principal square roots compose into the continuous branch.
    cdouble z{0.0, hbar / (2.0 * fa.sx * fa.sx)};
    cdouble amp_prod{1.0, 0.0};
    double m11 = 1.0, m12 = 0.0, m21 = 0.0, m22 = 1.0;
    for (std::size_t j = 0; j < t; ++j) {
        double Kc = mp.K * std::cos(TWO_PI * y[j + 1]);
        cdouble w = 1.0 + z;
        amp_prod /= std::sqrt(w);
        z = (cdouble(-Kc) + cdouble(1.0 - Kc) * z) / w;
        double n11 = m11 + m21, n12 = m12 + m22;
        double n21 = -Kc * m11 + (1.0 - Kc) * m21;
        double n22 = -Kc * m12 + (1.0 - Kc) * m22;
        m11 = n11;
        m12 = n12;
        m21 = n21;
        m22 = n22;
    }
    double mscale = std::abs(m11) + std::abs(m12) + std::abs(m21) + std::abs(m22);
    if (!(std::abs(m12) > 1e-13 * mscale))
        throw std::domain_error("contribution: singular quadratic form (coalescing term)");

    double A = 1.0 / (4.0 * fb.sx * fb.sx);
    double B = 1.0 / (4.0 * fa.sx * fa.sx);
    cdouble a = A - iu * (m22 / (2.0 * hbar * m12));
    cdouble b = B - iu * (m11 / (2.0 * hbar * m12));
    cdouble c2 = iu / (hbar * m12);
    cdouble den = 4.0 * a * b - c2 * c2;
    if (!(std::abs(den) > 1e-10 * (4.0 * std::abs(a) * std::abs(b) + std::norm(c2))))
        throw std::domain_error("contribution: singular quadratic form (coalescing term)");

    // A momentum winding at either boundary, or a wrap of an interior point,
    // shifts the stationary sum by an integer lattice frequency; each such
    // integer w leaves behind the constant phase 2*pi*w*(N*y - a).
    double gridN = static_cast<double>(alpha.qp.N);
    double chi = 0.0;
    for (std::size_t j = 1; j < t; ++j) {
        double turn = (y[j + 1] - y[j]) - (y[j] - y[j - 1]) +
                      (mp.K / TWO_PI) * std::sin(TWO_PI * y[j]);
        double wj = std::round(turn);
        if (std::abs(turn - wj) > 0.01)
            throw std::domain_error("contribution: orbit segment is not a map orbit");
        if (wj != 0.0) chi += TWO_PI * wj * (gridN * y[j] - alpha.qp.a);
    }
    double q_out = (y[t] - y[t - 1]) - (mp.K / TWO_PI) * std::sin(TWO_PI * y[t]);
    double q_in = y[1] - y[0];
    double wt = -std::round(q_out - fb.p0);
    double r0 = std::round(q_in - fa.p0);
    double pt_ = (q_out - fb.p0) + wt;
    double p0_ = (q_in - fa.p0) - r0;
    chi += TWO_PI * (wt * (gridN * y[t] - beta.qp.a) + r0 * (gridN * y[0] - alpha.qp.a));

    double dt_ = mi(y[t] - fb.x0);
    double d0 = mi(y[0] - fa.x0);
    cdouble Ju = -2.0 * A * dt_ + iu * (pt_ / hbar);
    cdouble Jv = -2.0 * B * d0 - iu * (p0_ / hbar);
    cdouble G = (b * Ju * Ju + a * Jv * Jv - c2 * Ju * Jv) / den - A * dt_ * dt_ - B * d0 * d0 +
                iu * ((S - fb.p0 * dt_ + fa.p0 * d0) / hbar + chi);
    if (G.real() > 60.0)
        throw std::domain_error("contribution: quadratic form is not contracting");
    cdouble W = 1.0 / (2.0 * fb.sx * fb.sx) - iu * z / hbar;
    cdouble amp = amp_prod * std::exp(G) / std::sqrt(W * (fa.sx * fb.sx));

    HeteroclinicContribution out;
    out.orbit = orbit;
    out.amplitude = amp;
    out.phase.action_over_hbar = S / hbar;
    out.phase.maslov_half_pi = orbit.maslov * (TWO_PI / 4.0);
    out.phase.prefactor = std::remainder(
        std::arg(amp) - out.phase.action_over_hbar + out.phase.maslov_half_pi, TWO_PI);
    return out;
}

CorrelationSeries semiclassical_correlation(const WavePacket& alpha, const WavePacket& beta,
                                            const MapParams& mp, long long T,
                                            PropagationMethod method) {
    if (T < 1) throw std::invalid_argument("semiclassical_correlation: T must be >= 1");
    if (alpha.qp.N != beta.qp.N)
        throw std::invalid_argument("semiclassical_correlation: packets live in different Hilbert spaces");
    if (std::abs(alpha.qp.K - mp.K) > 1e-9 * std::max(1.0, std::abs(mp.K)) ||
        std::abs(beta.qp.K - mp.K) > 1e-9 * std::max(1.0, std::abs(mp.K)))
        throw std::invalid_argument("semiclassical_correlation: quantum and map kick strengths disagree");
    if (alpha.amp.empty() || beta.amp.empty())
        throw std::invalid_argument("semiclassical_correlation: packets carry no amplitudes");

    CorrelationSeries series;
    auto push_row = [&series](long long tt, cdouble sc, cdouble qm, int n_orbits, int skipped,
                              bool trunc, double estimate) {
        series.t.push_back(tt);
        series.semiclassical.push_back(sc);
        series.quantum.push_back(qm);
        series.n_orbits.push_back(n_orbits);
        series.abs_error.push_back(std::abs(sc - qm));
        series.skipped_singular.push_back(skipped);
        series.truncated.push_back(trunc ? 1 : 0);
        series.truncation_estimate.push_back(estimate);
    };

    cdouble qm0 = inner_product(beta.amp, alpha.amp);
    push_row(0, qm0, qm0, 0, 0, false, 0.0);

    std::vector<cdouble> state = alpha.amp;
    for (long long tt = 1; tt <= T; ++tt) {
        state = propagate(alpha.qp, state, 1, method);
        cdouble qm = inner_product(beta.amp, state);

        HeteroclinicOrbitSet set = enumerate_impl(alpha, beta, tt, mp);
        KahanAcc re, im;
        int kept = 0, skipped = 0;
        double weakest = 0.0;
        for (const auto& orb : set.orbits) {
            HeteroclinicContribution hc;
            try {
                hc = contribution(orb, alpha, beta, mp);
            } catch (const std::domain_error&) {
                ++skipped;
                continue;
            }
            re.add(hc.amplitude.real());
            im.add(hc.amplitude.imag());
            double mag = std::abs(hc.amplitude);
            if (kept == 0 || mag < weakest) weakest = mag;
            ++kept;
        }
        if (skipped > 0)
            std::cerr << "semiclassical_correlation: skipped " << skipped
                      << " coalescing terms at t=" << tt << "\n";
        push_row(tt, {re.s, im.s}, qm, kept, skipped, set.truncated, weakest);
    }
    return series;
}

}  // namespace kr
