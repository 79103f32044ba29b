#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "worldline/errors.hpp"
#include "worldline/quadrature.hpp"

namespace worldline {

/// Physicists' Hermite polynomial, upward recurrence.
inline double hermite(int n, double x) {
    if (n < 0 || n > 12) throw ParameterError("hermite: order must be in [0, 12]");
    if (n == 0) return 1.0;
    double h0 = 1.0, h1 = 2.0 * x;
    for (int k = 1; k < n; ++k) {
        const double h2 = 2.0 * x * h1 - 2.0 * k * h0;
        h0 = h1;
        h1 = h2;
    }
    return h1;
}

/// exp(x^2) erfc(x) for x >= 0 without overflow.
inline double erfcx(double x) {
    if (x < 0.0) return 2.0 * std::exp(x * x) - erfcx(-x);
    if (x < 25.0) return std::exp(x * x) * std::erfc(x);
    const double y = 1.0 / (2.0 * x * x);
    // asymptotic series; next term is below 1e-16 relative for x >= 25
    double term = 1.0, sum = 1.0;
    for (int k = 1; k <= 6; ++k) {
        term *= -(2.0 * k - 1.0) * y;
        sum += term;
    }
    return sum / (x * std::sqrt(std::numbers::pi));
}

/// Probability that a Wiener path covers distance d within time tau.
inline double crossing_probability(double d, double tau) {
    require(d > 0.0 && tau > 0.0, "crossing_probability: d and tau must be positive");
    return std::erfc(d / std::sqrt(2.0 * tau));
}

/// Largest path fraction that can be averaged with crossing error below epsilon.
inline double averaging_fraction(double scale, double total_time, double epsilon) {
    require(scale > 0.0 && total_time > 0.0, "averaging_fraction: arguments must be positive");
    require(epsilon > 0.0 && epsilon < 1.0, "averaging_fraction: epsilon must lie in (0, 1)");
    return scale * scale / (2.0 * total_time * std::log(1.0 / epsilon));
}

/// Casimir-Polder efficiency of a dielectric half-space (TE, perfect-conductor normalized).
/// Pass +infinity for the perfect-conductor limit.
inline double eta_te(double chi) {
    require(chi >= 0.0, "eta_te: chi must be nonnegative");
    if (std::isinf(chi)) return 1.0 / 6.0;
    if (chi < 0.5) {
        // power series; the closed form cancels catastrophically for small chi.
        // coefficient of chi^(n-1) is -(b_n + a_n)/2 with b_n = binom(1/2, n) and
        // a_n = (-1)^n (2n)! / (4^n n!^2 (2n+1)) from asinh(sqrt x)/sqrt x
        double b = 1.0, c = 1.0, sum = 0.0, pw = 1.0;
        for (int n = 1; n <= 64; ++n) {
            b *= (1.5 - n) / n;
            c *= (2.0 * n - 1.0) / (2.0 * n);
            const double a = (n % 2 ? -c : c) / (2.0 * n + 1.0);
            if (n >= 2) sum += -0.5 * (b + a) * pw;
            pw *= chi;
        }
        return sum;
    }
    const double sc = std::sqrt(chi);
    return 1.0 / 6.0 + 1.0 / chi - std::sqrt(1.0 + chi) / (2.0 * chi) -
           std::asinh(sc) / (2.0 * chi * sc);
}

/// gamma_TE(u) and its first two derivatives in u = chi_hat/d.
struct GammaValues {
    double value = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
    int nodes = 0;
};

namespace detail {

// Tensor Gauss-Legendre on the unit square with xi = a/(1-a) and the inner
// variable t = 2 xi (p - 1) = b/(1-b), which keeps the exponential decay at unit scale.
inline GammaValues gamma_quadrature(double u, int n) {
    const auto& g = gauss_legendre(n);
    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double a = g.x[i];
        const double xi = a / (1.0 - a);
        const double ja = 1.0 / ((1.0 - a) * (1.0 - a));
        const double xi2 = xi * xi;
        const double e2xi = std::exp(-2.0 * xi);
        double r0 = 0.0, r1 = 0.0, r2 = 0.0;
        for (int k = 0; k < n; ++k) {
            const double b = g.x[k];
            const double t = b / (1.0 - b);
            const double jb = 1.0 / ((1.0 - b) * (1.0 - b));
            const double e = e2xi * std::exp(-t);
            if (e == 0.0) continue;
            const double base = 2.0 * xi + t;
            const double den = base + xi2 * u;
            const double r = -xi2 * u / den;
            const double ru = -xi2 * base / (den * den);
            const double ruu = 2.0 * xi2 * xi2 * base / (den * den * den);
            const double q = 1.0 - r * r * e;
            const double pref = (0.5 * xi + 0.25 * t) * g.w[k] * jb;
            r0 += pref * std::log1p(-r * r * e);
            r1 += pref * (-2.0 * r * ru * e / q);
            r2 += pref * (-2.0 * e * ((ru * ru + r * ruu) * q + 2.0 * r * r * ru * ru * e) / (q * q));
        }
        s0 += g.w[i] * ja * r0;
        s1 += g.w[i] * ja * r1;
        s2 += g.w[i] * ja * r2;
    }
    const double c = -180.0 / (std::numbers::pi * std::numbers::pi * std::numbers::pi * std::numbers::pi);
    return {c * s0, c * s1, c * s2, n};
}

} // namespace detail

/// gamma_TE with node doubling until all three quantities change by < 1e-8 relative.
inline GammaValues gamma_te_all(double u, int nodes = 64) {
    require(u >= 0.0, "gamma_te: chi_hat/d must be nonnegative");
    require(nodes >= 32, "gamma_te: at least 32 nodes required");
    if (u == 0.0) return {0.0, 0.0, 0.0, nodes};
    auto close = [](double x, double y) { return std::fabs(x - y) <= 1e-8 * std::fabs(y); };
    GammaValues prev = detail::gamma_quadrature(u, nodes);
    for (int n = 2 * nodes; n <= 2048; n *= 2) {
        GammaValues cur = detail::gamma_quadrature(u, n);
        if (close(prev.value, cur.value) && close(prev.d1, cur.d1) && close(prev.d2, cur.d2)) return cur;
        prev = cur;
    }
    throw NumericalError("gamma_te: quadrature did not converge for chi_hat/d = " + std::to_string(u));
}

/// Two-plate TE efficiency gamma_TE(chi_hat/d).
inline double gamma_te(double chi_hat, double d, int nodes = 64) {
    require(d > 0.0, "gamma_te: d must be positive");
    return gamma_te_all(chi_hat / d, nodes).value;
}

/// Normalized d-derivatives of the two-plate energy: E^(n)(d) / E_EM^(n)(d).
/// order 1: gamma + u gamma'/3; order 2: gamma + 2u gamma'/3 + u^2 gamma''/12.
inline double gamma_te_derivatives(double chi_hat, double d, int order, int nodes = 64) {
    require(d > 0.0, "gamma_te_derivatives: d must be positive");
    require(order == 1 || order == 2, "gamma_te_derivatives: order must be 1 or 2");
    const double u = chi_hat / d;
    const GammaValues g = gamma_te_all(u, nodes);
    if (order == 1) return g.value + u * g.d1 / 3.0;
    return g.value + 2.0 * u * g.d1 / 3.0 + u * u * g.d2 / 12.0;
}

/// Endpoints, boundary level and duration of one path segment, plus the conjugate variable.
struct LocalTimeParams {
    double a = 0.0;
    double b = 0.0;
    double d = 0.0;
    double t = 1.0;
    double s = 0.0;
};

struct LocalTimeDensity {
    double density = 0.0;  ///< continuous part at x
    double atom = 0.0;     ///< weight of the atom at zero
};

/// Law of the local time at level d of a Brownian bridge from a to b over time t.
inline LocalTimeDensity local_time_density(const LocalTimeParams& p, double x) {
    require(p.t > 0.0, "local_time_density: t must be positive");
    require(x >= 0.0, "local_time_density: x must be nonnegative");
    const double A = std::fabs(p.a - p.d) + std::fabs(p.b - p.d);
    const double ba2 = (p.b - p.a) * (p.b - p.a);
    LocalTimeDensity r;
    r.atom = -std::expm1((ba2 - A * A) / (2.0 * p.t));
    r.density = (x + A) / p.t * std::exp((ba2 - (x + A) * (x + A)) / (2.0 * p.t));
    return r;
}

/// MGF value and its first two derivatives with respect to A = |a-d| + |b-d|.
struct MgfParts {
    double value = 1.0;
    double dA = 0.0;
    double dAA = 0.0;
};

inline MgfParts local_time_mgf_parts(double A, double ba2, double t, double s) {
    if (s == 0.0) return {};
    const double E = std::exp((ba2 - A * A) / (2.0 * t));
    if (std::isinf(s)) {
        // perfectly absorbing level: probability of not touching
        return {A == 0.0 ? 0.0 : 1.0 - E, A / t * E, (1.0 / t - A * A / (t * t)) * E};
    }
    const double k = std::sqrt(std::numbers::pi * t / 2.0);
    const double G = E * erfcx((A + s * t) / std::sqrt(2.0 * t));
    MgfParts r;
    r.value = 1.0 - k * s * G;
    r.dA = -k * s * s * G + s * E;
    r.dAA = -k * s * s * s * G + s * s * E - s * A / t * E;
    return r;
}

/// E[exp(-s * local time)] for the bridge segment.
inline double local_time_mgf(const LocalTimeParams& p) {
    require(p.t > 0.0, "local_time_mgf: t must be positive");
    require(p.s >= 0.0, "local_time_mgf: s must be nonnegative");
    const double A = std::fabs(p.a - p.d) + std::fabs(p.b - p.d);
    return local_time_mgf_parts(A, (p.b - p.a) * (p.b - p.a), p.t, p.s).value;
}

/// d/dd of A = |a-d| + |b-d|; zero for segments that cross the level.
inline double level_sensitivity(double a, double b, double d) {
    auto sgn = [](double v) { return v > 0.0 ? 1.0 : -1.0; };
    return -sgn(a - d) - sgn(b - d);
}

/// First or second derivative of local_time_mgf with respect to the level d.
inline double local_time_mgf_dd(const LocalTimeParams& p, int order) {
    require(order == 1 || order == 2, "local_time_mgf_dd: order must be 1 or 2");
    require(p.t > 0.0 && p.s >= 0.0, "local_time_mgf_dd: need t > 0 and s >= 0");
    if (p.a == p.d || p.b == p.d) throw SingularInputError("local_time_mgf_dd: endpoint on the level");
    const double sig = level_sensitivity(p.a, p.b, p.d);
    const double A = std::fabs(p.a - p.d) + std::fabs(p.b - p.d);
    const MgfParts m = local_time_mgf_parts(A, (p.b - p.a) * (p.b - p.a), p.t, p.s);
    return order == 1 ? sig * m.dA : sig * sig * m.dAA;
}

} // namespace worldline
