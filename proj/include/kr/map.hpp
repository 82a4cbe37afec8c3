#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace kr {

inline constexpr double TWO_PI = 6.283185307179586476925286766559;

// Position/momentum on the unit torus [0,1) x [0,1).
struct Point {
    double x = 0.0;
    double p = 0.0;
};

struct MapParams {
    double K = 10.0;  // kick strength

    double kick_scale() const { return K / TWO_PI; }          // amplitude of the momentum kick
    double action_scale() const { return K / (TWO_PI * TWO_PI); }  // K/(4 pi^2), potential term of the step action
};

// v - floor(v), guarded so the result is always inside [0,1).
inline double wrap01(double v) {
    double w = v - static_cast<double>(static_cast<long long>(v < 0 ? v - 1 : v));
    if (w >= 1.0) w -= 1.0;
    if (w < 0.0) w += 1.0;
    return w;
}

// Finite trajectory. Points are wrapped; lift counters recover coordinates on
// the universal cover: x_lifted[i] = pts[i].x + lift[i][0], same for p.
struct Orbit {
    std::vector<Point> pts;
    std::vector<std::array<long long, 2>> lift;

    std::size_t size() const { return pts.size(); }
    double lifted_x(std::size_t i) const { return pts[i].x + static_cast<double>(lift[i][0]); }
    double lifted_p(std::size_t i) const { return pts[i].p + static_cast<double>(lift[i][1]); }
};

// One-step tangent map [[dx'/dx, dx'/dp], [dp'/dx, dp'/dp]]; unit determinant.
struct TangentFrame {
    double a11 = 1.0, a12 = 0.0, a21 = 0.0, a22 = 1.0;

    double det() const { return a11 * a22 - a12 * a21; }
    double trace() const { return a11 + a22; }
    TangentFrame operator*(const TangentFrame& o) const {
        return {a11 * o.a11 + a12 * o.a21, a11 * o.a12 + a12 * o.a22,
                a21 * o.a11 + a22 * o.a21, a21 * o.a12 + a22 * o.a22};
    }
};

enum class Stability { elliptic, parabolic, hyperbolic };

struct FixedPointInfo {
    Point z;
    double trace = 0.0;
    Stability stability = Stability::elliptic;
    // Valid only when hyperbolic. lambda_u is the expanding eigenvalue
    // (|lambda_u| > 1, negative for reflection hyperbolic points).
    double lambda_u = 0.0, lambda_s = 0.0;
    std::array<double, 2> ev_u{1.0, 0.0}, ev_s{1.0, 0.0};
};

struct LyapunovEstimate {
    double mean = 0.0;
    double stderr_mean = 0.0;
    long long n_samples = 0;
    long long t = 0;
};

// Kicked-rotor step, kick first then drift:
//   p' = p - (K/2pi) sin(2pi x),  x' = x + p',  both wrapped.
Point step(const MapParams& mp, const Point& z);
Point step_inverse(const MapParams& mp, const Point& z);

// Same step on the universal cover (no wrapping); sin/cos are 1-periodic so the
// projection of a lifted orbit is the torus orbit.
void step_lifted(const MapParams& mp, double& x, double& p);
void step_lifted_inverse(const MapParams& mp, double& x, double& p);

// t >= 0 iterates forward, t < 0 backward; records the |t|+1 visited points.
Orbit iterate(const MapParams& mp, const Point& z0, long long t);

TangentFrame jacobian(const MapParams& mp, double x);

// Benettin tangent-vector average of ln|M v| over n_samples uniform seeds,
// renormalizing every step. Requires t >= 100.
LyapunovEstimate lyapunov_numeric(const MapParams& mp, long long n_samples, long long t,
                                  std::uint64_t seed);

// ln(K/2) - 1/(K^2 - 4); domain K > 2.
double lyapunov_analytic(double K);

// The two period-1 points (0,0) and (1/2,0) with linearization data.
std::array<FixedPointInfo, 2> fixed_points(const MapParams& mp);

// Generating function of one step on lifted coordinates:
//   F(x_j, x_{j+1}) = (x_{j+1}-x_j)^2/2 + (K/4pi^2) cos(2pi x_j)
// with dF/dx_{j+1} = p_{j+1} and -dF/dx_j = p_j.
double step_action(const MapParams& mp, double x_j, double x_j1);

// Sum of step_action over consecutive lifted positions xs[0..t].
double path_action(const MapParams& mp, const std::vector<double>& xs);

// Wrapped orbits of each seed, for section plots.
std::vector<Orbit> poincare_section(const MapParams& mp, const std::vector<Point>& seeds,
                                    long long t);

}  // namespace kr
