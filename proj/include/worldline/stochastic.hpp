#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "worldline/analytic.hpp"
#include "worldline/errors.hpp"
#include "worldline/quadrature.hpp"
#include "worldline/rng.hpp"

namespace worldline {

/// Discrete Brownian bridge B_0..B_N from a to b over total time `duration`.
struct UnitBridge {
    std::vector<double> samples;
    int n_steps = 0;
    double a = 0.0;
    double b = 0.0;
    double duration = 1.0;

    double dt() const { return duration / n_steps; }
};

/// Fine open bridge between samples j and j+1 of a parent bridge.
struct RefinedSegment {
    int parent_index = 0;
    std::vector<double> sub_samples;
    double sub_duration = 0.0;
};

struct HermiteEndpointDraw {
    double xbar = 0.0;
    int order = 1;
    int sign = 1;
    double half_spread = 0.0;
};

/// Recursion coefficients c_j = (N-j)/(N-j+1) and sqrt(c_j) for an N-step bridge.
class BridgeCoefficients {
public:
    BridgeCoefficients() = default;
    explicit BridgeCoefficients(int n_steps) : n_(n_steps), c_(n_steps + 1), sd_(n_steps + 1) {
        for (int j = 1; j <= n_steps; ++j) {
            c_[j] = static_cast<double>(n_steps - j) / (n_steps - j + 1);
            sd_[j] = std::sqrt(c_[j]);
        }
    }
    int n_steps() const { return n_; }
    double c(int j) const { return c_[j]; }
    double sd(int j) const { return sd_[j]; }

private:
    int n_ = 0;
    std::vector<double> c_;
    std::vector<double> sd_;
};

/// Writes an open bridge a -> b with coefficients `k` and step dt into out[0..N].
inline void fill_open_bridge(double* out, double a, double b, const BridgeCoefficients& k, double dt,
                             PathRng& rng) {
    const int n = k.n_steps();
    const double sdt = std::sqrt(dt);
    out[0] = a;
    double prev = a - b;
    for (int j = 1; j < n; ++j) {
        prev = k.sd(j) * sdt * rng.normal() + k.c(j) * prev;
        out[j] = prev + b;
    }
    out[n] = b;
}

inline UnitBridge generate_open_bridge(double a, double b, int n_steps, double duration, PathRng& rng) {
    require(n_steps >= 1, "generate_open_bridge: n_steps must be >= 1");
    require(duration > 0.0, "generate_open_bridge: duration must be positive");
    UnitBridge br{std::vector<double>(n_steps + 1), n_steps, a, b, duration};
    const double dt = duration / n_steps;
    br.samples[0] = a;
    for (int j = 1; j < n_steps; ++j) {
        const double c = static_cast<double>(n_steps - j) / (n_steps - j + 1);
        br.samples[j] = std::sqrt(c * dt) * rng.normal() + c * (br.samples[j - 1] - b) + b;
    }
    br.samples[n_steps] = b;
    return br;
}

inline UnitBridge generate_closed_bridge(int n_steps, double duration, PathRng& rng) {
    require(n_steps >= 2, "generate_closed_bridge: n_steps must be >= 2");
    require(duration > 0.0, "generate_closed_bridge: duration must be positive");
    return generate_open_bridge(0.0, 0.0, n_steps, duration, rng);
}

/// Last `steps_remaining` steps of a total_steps-step bridge ending at b, given the prefix end.
inline UnitBridge complete_path_after_prefix(double prefix_end, double b, int steps_remaining, int total_steps,
                                             double duration, PathRng& rng) {
    require(total_steps >= 1 && steps_remaining >= 1 && steps_remaining <= total_steps,
            "complete_path_after_prefix: need 1 <= steps_remaining <= total_steps");
    require(duration > 0.0, "complete_path_after_prefix: duration must be positive");
    const double dt = duration / total_steps;
    return generate_open_bridge(prefix_end, b, steps_remaining, steps_remaining * dt, rng);
}

inline RefinedSegment refine_segment(const UnitBridge& bridge, int j, int sub_steps, PathRng& rng) {
    if (j < 0 || j >= bridge.n_steps) throw std::out_of_range("refine_segment: index out of range");
    require(sub_steps >= 1, "refine_segment: sub_steps must be >= 1");
    const double dt = bridge.dt();
    UnitBridge fine = generate_open_bridge(bridge.samples[j], bridge.samples[j + 1], sub_steps, dt, rng);
    return {j, std::move(fine.samples), dt};
}

/// Radical inverse of `index` in `base`.
inline double van_der_corput(std::uint64_t index, unsigned base = 2) {
    require(base >= 2, "van_der_corput: base must be >= 2");
    double result = 0.0;
    double f = 1.0 / base;
    while (index > 0) {
        result += f * static_cast<double>(index % base);
        index /= base;
        f /= base;
    }
    return result;
}

/// Tabulated CDF of |H_n(z)| exp(-z^2) on a grid containing every root of H_n.
class HermiteTable {
public:
    static constexpr double z_max = 9.0;

    explicit HermiteTable(int n) : n_(n) {
        require(n >= 1 && n <= 12, "HermiteTable: order must be in [1, 12]");
        std::vector<double> grid;
        const int base_cells = 3072;
        for (int i = 0; i <= base_cells; ++i) grid.push_back(-z_max + 2.0 * z_max * i / base_cells);
        for (double r : roots()) grid.push_back(r);
        std::sort(grid.begin(), grid.end());
        grid.erase(std::unique(grid.begin(), grid.end(),
                               [](double x, double y) { return std::fabs(x - y) < 1e-13; }),
                   grid.end());
        edges_ = grid;
        cdf_.assign(edges_.size(), 0.0);
        for (std::size_t i = 1; i < edges_.size(); ++i) cdf_[i] = cdf_[i - 1] + mass(edges_[i - 1], edges_[i]);
        total_ = cdf_.back();
    }

    int order() const { return n_; }
    double density(double z) const { return std::fabs(hermite(n_, z)) * std::exp(-z * z); }
    /// Integral of |H_n| e^{-z^2} over the real line.
    double total_mass() const { return total_; }
    /// eta_n = sqrt(pi) / total mass, so that eta_n^{-1} = (2/sqrt(pi)) int_0^inf |H_n| e^{-z^2}.
    double eta() const { return std::sqrt(std::numbers::pi) / total_; }

    /// Inverse CDF at u in (0, 1).
    double quantile(double u) const {
        const double target = u * total_;
        auto it = std::upper_bound(cdf_.begin(), cdf_.end(), target);
        std::size_t i = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(it - cdf_.begin(), 1,
                                                                             static_cast<std::ptrdiff_t>(cdf_.size()) - 1));
        double lo = edges_[i - 1], hi = edges_[i];
        const double r = target - cdf_[i - 1];
        double z = 0.5 * (lo + hi);
        for (int it2 = 0; it2 < 60; ++it2) {
            const double g = mass(edges_[i - 1], z) - r;
            if (g > 0.0) hi = z; else lo = z;
            const double f = density(z);
            double next = f > 0.0 ? z - g / f : 0.5 * (lo + hi);
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
            if (std::fabs(next - z) < 1e-15 * (1.0 + std::fabs(z))) return next;
            z = next;
        }
        return z;
    }

private:
    double mass(double a, double b) const {
        const auto& g = gauss_legendre(10);
        double s = 0.0;
        for (int k = 0; k < 10; ++k) s += g.w[k] * density(a + (b - a) * g.x[k]);
        return s * (b - a);
    }

    std::vector<double> roots() const {
        std::vector<double> out;
        const int probes = 20000;
        double x0 = -6.0, f0 = hermite(n_, x0);
        for (int i = 1; i <= probes; ++i) {
            const double x1 = -6.0 + 12.0 * i / probes;
            const double f1 = hermite(n_, x1);
            if (f1 == 0.0) {
                out.push_back(x1);
            } else if (f0 != 0.0 && (f0 < 0.0) != (f1 < 0.0)) {
                double lo = x0, hi = x1, flo = f0;
                for (int k = 0; k < 200 && hi - lo > 1e-16; ++k) {
                    const double mid = 0.5 * (lo + hi);
                    const double fm = hermite(n_, mid);
                    if ((fm < 0.0) == (flo < 0.0)) { lo = mid; flo = fm; } else { hi = mid; }
                }
                out.push_back(0.5 * (lo + hi));
            }
            x0 = x1;
            f0 = f1;
        }
        return out;
    }

    int n_;
    std::vector<double> edges_;
    std::vector<double> cdf_;
    double total_ = 0.0;
};

inline const HermiteTable& hermite_table(int n) {
    static std::mutex mu;
    static std::array<std::unique_ptr<HermiteTable>, 13> tables;
    require(n >= 1 && n <= 12, "hermite_table: order must be in [1, 12]");
    std::lock_guard<std::mutex> lock(mu);
    if (!tables[n]) tables[n] = std::make_unique<HermiteTable>(n);
    return *tables[n];
}

/// Exact draw from |H_n(z)| e^{-z^2} for n <= 2 (direct for n = 1, rejection for n = 2).
inline double sample_hermite_z_direct(int n, PathRng& rng) {
    if (n == 1) {
        const double r = std::sqrt(-std::log(rng.uniform()));
        return rng.uniform() < 0.5 ? -r : r;
    }
    if (n == 2) {
        // envelope (4z^2 + 2) e^{-z^2}: equal-mass mixture of N(0, 1/2) and a z^2 e^{-z^2} law
        for (;;) {
            double z;
            if (rng.uniform() < 0.5) {
                z = rng.normal() * std::sqrt(0.5);
            } else {
                const double x = rng.normal(), y = rng.normal(), w = rng.normal();
                z = std::sqrt(0.5 * (x * x + y * y + w * w));
                if (rng.uniform() < 0.5) z = -z;
            }
            const double h = 4.0 * z * z;
            if (rng.uniform() * (h + 2.0) < std::fabs(h - 2.0)) return z;
        }
    }
    throw ParameterError("sample_hermite_z_direct: only orders 1 and 2 are supported");
}

/// Source-adjacent endpoint draw: xbar with density |H_n(z)| e^{-z^2}, z = (xbar - x0)/sqrt(m dT).
/// If total_steps > 0 the half spread is drawn with variance m (1 - 2m/N) dT / 2.
inline HermiteEndpointDraw sample_hermite_endpoint(double x0, int order, int m, double dT, PathRng& rng,
                                                   int total_steps = 0) {
    require(order >= 1 && order <= 12, "sample_hermite_endpoint: order must be in [1, 12]");
    require(m >= 1 && dT > 0.0, "sample_hermite_endpoint: need m >= 1 and dT > 0");
    const double z = hermite_table(order).quantile(rng.uniform());
    HermiteEndpointDraw draw;
    draw.order = order;
    draw.xbar = x0 + std::sqrt(m * dT) * z;
    draw.sign = hermite(order, z) < 0.0 ? -1 : 1;
    if (total_steps > 0) {
        require(2 * m < total_steps, "sample_hermite_endpoint: need 2m < N");
        const double var = m * (1.0 - 2.0 * m / total_steps) * dT / 2.0;
        draw.half_spread = std::sqrt(var) * rng.normal();
    }
    return draw;
}

} // namespace worldline
