#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "worldline/analytic.hpp"
#include "worldline/errors.hpp"
#include "worldline/stats.hpp"
#include "worldline/stochastic.hpp"

namespace worldline {

enum class PlatesObservable { energy, force, curvature, torque };
enum class Plate { lower, upper, none };

/// Two delta-function plates at z = 0 and z = d, D = 4, TE.
struct PlatesConfig {
    double chi_hat = 1.0;  ///< +infinity selects the strong-coupling limit
    double d = 1.0;
    int n_steps = 1000;
    std::uint64_t n_paths = 1000;
    double pa_epsilon = -1.0;  ///< skip-condition tolerance; negative selects 1e4 / (N sqrt(T))
    int pa_m = 1;
    PlatesObservable derivative = PlatesObservable::energy;
    double t_min = 0.15;  ///< lower cutoff of the T proposal, units of d^2
    std::array<double, 3> pivot{0.0, 0.0, 0.0};
    std::uint64_t seed = 1;
    int workers = 1;
};

struct SegmentFactor {
    double value = 1.0;
    double d_value = 0.0;  ///< derivative with respect to the assigned plate position
    Plate plate = Plate::none;
    int span = 1;
};

struct SampledKernel {
    double T = 1.0;
    double s = 0.0;       ///< local-time conjugate variable
    double weight = 1.0;  ///< importance weight of (T, s)
};

/// Draws (T, s): T from the power law 1.5 T_min^{1.5} T^{-2.5} on [T_min, inf), sigma = s sqrt(T) half-normal.
/// The weight sqrt(pi/2) T^{-3} / q(T) makes E[weight f] = int ds int dT T^{-5/2} e^{-s^2 T/2} f.
inline SampledKernel sample_kernel(PathRng& rng, double t_min) {
    const double sigma = std::fabs(rng.normal());
    const double T = t_min * std::pow(rng.uniform(), -2.0 / 3.0);
    const double q = 1.5 * std::pow(t_min, 1.5) * std::pow(T, -2.5);
    return {T, sigma / std::sqrt(T), std::sqrt(std::numbers::pi / 2.0) / (T * T * T * q)};
}

/// Local-time MGF argument for one delta plate of strength chi_hat.
inline double plate_coupling(const SampledKernel& k, double chi_hat) {
    if (std::isinf(chi_hat)) return std::numeric_limits<double>::infinity();
    return k.s * k.s * chi_hat / 2.0;
}

/// N (x_+ - x_-) / 2 over the interior samples; x_+ (x_-) is the nearest value above (below) x0.
inline double midplane_reweight(std::span<const double> samples, double x0) {
    const std::size_t n = samples.size() - 1;
    double up = std::numeric_limits<double>::infinity(), lo = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 1; j < n; ++j) {
        const double x = samples[j];
        if (x > x0 && x < up) up = x;
        if (x < x0 && x > lo) lo = x;
    }
    if (std::isinf(up)) up = x0;
    if (std::isinf(lo)) lo = x0;
    return static_cast<double>(n) * (up - lo) / 2.0;
}

inline double midplane_reweight(const UnitBridge& bridge, double x0) { return midplane_reweight(bridge.samples, x0); }

namespace detail {

// 2q/t beyond this makes 1 - MGF < e^{-40}, below double resolution of the factor
inline constexpr double screen_ratio = 20.0;

/// Factor of one segment [a, b] of duration t for the nearer plate.
inline SegmentFactor plate_segment(double a, double b, double t, double s, double d, int span,
                                   bool* ambiguous = nullptr) {
    const double mid = 0.5 * (a + b);
    const bool lower_near = std::fabs(mid) <= std::fabs(mid - d);
    const double p = lower_near ? 0.0 : d;
    if (ambiguous) {
        const double band = 10.0 * std::sqrt(t);
        *ambiguous = std::fabs(mid) < band && std::fabs(mid - d) < band;
    }
    SegmentFactor f;
    f.span = span;
    const double q = (a - p) * (b - p);
    if (s == 0.0 || q >= screen_ratio * t) return f;
    f.plate = lower_near ? Plate::lower : Plate::upper;
    const double A = std::fabs(a - p) + std::fabs(b - p);
    const MgfParts m = local_time_mgf_parts(A, (b - a) * (b - a), t, s);
    f.value = m.value;
    // a factor that rounds to one carries no interaction, so keep one-plate paths exactly zero
    f.d_value = m.value == 1.0 ? 0.0 : level_sensitivity(a, b, p) * m.dA;
    return f;
}

inline double default_epsilon(int n_steps, double T) { return 1e4 / (n_steps * std::sqrt(T)); }

/// Skip condition at index j: some plate p has (x_j - p)(x_{j-1} - p) <= eps, with x_j
/// closer to that plate than to the start level c (so the midplane neighbours stay resolved).
inline bool skip_condition(double xj, double xprev, double eps, double d, double c) {
    for (double p : {0.0, d}) {
        if ((xj - p) * (xprev - p) <= eps && std::fabs(xj - p) < std::fabs(xj - c)) return true;
    }
    return false;
}

} // namespace detail

/// Walks a fully sampled path (positions, duration T) and returns its segment factors,
/// coarsening by pa_m steps where the skip condition holds.
inline std::vector<SegmentFactor> segment_factors(std::span<const double> x, double T, double s,
                                                  const PlatesConfig& cfg) {
    const int N = static_cast<int>(x.size()) - 1;
    require(N >= 1 && T > 0.0, "segment_factors: need at least one step and T > 0");
    const double dT = T / N;
    const double eps = cfg.pa_epsilon < 0.0 ? detail::default_epsilon(N, T) : cfg.pa_epsilon;
    const double c = x[0];
    std::vector<SegmentFactor> out;
    int j = 0;
    while (j < N) {
        int span = 1;
        const double prev = j == 0 ? x[0] : x[j - 1];
        if (cfg.pa_m > 1 && detail::skip_condition(x[j], prev, eps, cfg.d, c)) span = std::min(cfg.pa_m, N - j);
        out.push_back(detail::plate_segment(x[j], x[j + span], span * dT, s, cfg.d, span));
        j += span;
    }
    return out;
}

/// Per-path quantities of the plate estimators.
struct PlatesPathSample {
    double K_lower = 1.0, dK_lower = 0.0;  ///< product of lower-plate factors and its derivative
    double K_upper = 1.0, dK_upper = 0.0;
    double weight = 0.0;                   ///< kernel weight times midplane reweight
    std::array<double, 3> lever_sum{};     ///< sum over upper segments of (d_value/value) z x (r - pivot)
    int ambiguous = 0;
    int segments = 0;
    double energy = 0.0, force = 0.0, curvature = 0.0;
    std::array<double, 3> torque{};
};

namespace detail {

/// Accumulates segment factors into kernel products with product-rule derivatives.
struct KernelProducts {
    double K[2] = {1.0, 1.0};
    double dK[2] = {0.0, 0.0};
    std::array<double, 3> lever{};

    void add(const SegmentFactor& f, const double* transverse, const std::array<double, 3>& pivot) {
        if (f.plate == Plate::none) return;
        const int i = f.plate == Plate::lower ? 0 : 1;
        dK[i] = dK[i] * f.value + K[i] * f.d_value;
        K[i] *= f.value;
        if (transverse && i == 1 && f.d_value != 0.0) {
            // z x (r - pivot) = (-(y - py), x - px, 0)
            const double g = f.d_value / f.value;
            lever[0] += -g * (transverse[1] - pivot[1]);
            lever[1] += g * (transverse[0] - pivot[0]);
        }
    }
};

inline double energy_scale(double d) { return 720.0 * d * d * d / (std::numbers::pi * std::numbers::pi); }
inline double force_scale(double d) { return 240.0 * d * d * d * d / (std::numbers::pi * std::numbers::pi); }
inline double curvature_scale(double d) {
    return -60.0 * d * d * d * d * d / (std::numbers::pi * std::numbers::pi);
}
inline double path_prefactor() { return std::pow(2.0 * std::numbers::pi, -2.5); }

inline void finish_sample(PlatesPathSample& ps, const KernelProducts& kp, double d) {
    ps.K_lower = kp.K[0];
    ps.dK_lower = kp.dK[0];
    ps.K_upper = kp.K[1];
    ps.dK_upper = kp.dK[1];
    const double w = path_prefactor() * ps.weight;
    ps.energy = energy_scale(d) * w * (1.0 - kp.K[0]) * (1.0 - kp.K[1]);
    ps.force = force_scale(d) * w * (1.0 - kp.K[0]) * kp.dK[1];
    ps.curvature = curvature_scale(d) * w * kp.dK[0] * kp.dK[1];
    for (int a = 0; a < 3; ++a) {
        ps.lever_sum[a] = kp.lever[a];
        ps.torque[a] = force_scale(d) * w * (1.0 - kp.K[0]) * kp.K[1] * kp.lever[a];
    }
}

} // namespace detail

/// Generates one midplane-started path on the fly (skipped points are never drawn) and evaluates it.
inline PlatesPathSample plates_path_sample(const PlatesConfig& cfg, PathRng& rng, bool with_torque) {
    const int N = cfg.n_steps;
    const double d = cfg.d;
    const double c = 0.5 * d;
    const SampledKernel k = sample_kernel(rng, cfg.t_min * d * d);
    const double s = plate_coupling(k, cfg.chi_hat);
    const double T = k.T;
    const double dT = T / N;
    const double eps = cfg.pa_epsilon < 0.0 ? detail::default_epsilon(N, T / (d * d)) : cfg.pa_epsilon;

    PlatesPathSample ps;
    detail::KernelProducts kp;
    double x = c, xprev = c;
    double tx = 0.0, ty = 0.0;
    double up = std::numeric_limits<double>::infinity(), lo = -std::numeric_limits<double>::infinity();
    int j = 0;
    while (j < N) {
        int span = 1;
        if (cfg.pa_m > 1 && detail::skip_condition(x, xprev, eps, d, c)) span = std::min(cfg.pa_m, N - j);
        const int jn = j + span;
        double xn, txn = 0.0, tyn = 0.0;
        if (jn == N) {
            xn = c;
        } else {
            // bridge conditional from (j, x) to the fixed end (N, c)
            const double frac = static_cast<double>(N - jn) / (N - j);
            const double sd = std::sqrt(dT * span * frac);
            xn = c + (x - c) * frac + sd * rng.normal();
            if (with_torque) {
                txn = tx * frac + sd * rng.normal();
                tyn = ty * frac + sd * rng.normal();
            }
            if (xn > c && xn < up) up = xn;
            if (xn < c && xn > lo) lo = xn;
        }
        bool amb = false;
        const SegmentFactor f = detail::plate_segment(x, xn, span * dT, s, d, span, &amb);
        ps.ambiguous += amb ? 1 : 0;
        ++ps.segments;
        const double mid[2] = {0.5 * (tx + txn), 0.5 * (ty + tyn)};
        kp.add(f, with_torque ? mid : nullptr, cfg.pivot);
        xprev = x;
        x = xn;
        tx = txn;
        ty = tyn;
        j = jn;
    }
    if (std::isinf(up)) up = c;
    if (std::isinf(lo)) lo = c;
    ps.weight = k.weight * N * (up - lo) / 2.0;
    detail::finish_sample(ps, kp, d);
    return ps;
}

/// Brute-force counterpart: loop generated from 0 without coarsening, translated by z0 drawn
/// uniformly over every offset at which both plates can contribute, weighted by that length.
inline PlatesPathSample plates_path_sample_translated(const PlatesConfig& cfg, PathRng& rng) {
    const int N = cfg.n_steps;
    const double d = cfg.d;
    const SampledKernel k = sample_kernel(rng, cfg.t_min * d * d);
    const double s = plate_coupling(k, cfg.chi_hat);
    const double dT = k.T / N;
    UnitBridge br = generate_closed_bridge(N, k.T, rng);
    double bmin = 0.0, bmax = 0.0;
    for (double v : br.samples) {
        bmin = std::min(bmin, v);
        bmax = std::max(bmax, v);
    }
    const double r = std::sqrt(detail::screen_ratio * dT) * (1.0 + 1e-9);
    const double z_lo = d - r - bmax, z_hi = r - bmin;
    PlatesPathSample ps;
    detail::KernelProducts kp;
    const double len = z_hi - z_lo;
    if (len > 0.0) {
        const double z0 = z_lo + len * rng.uniform();
        for (int j = 0; j < N; ++j) {
            const SegmentFactor f = detail::plate_segment(z0 + br.samples[j], z0 + br.samples[j + 1], dT, s, d, 1);
            kp.add(f, nullptr, cfg.pivot);
            ++ps.segments;
        }
        ps.weight = k.weight * len;
    }
    detail::finish_sample(ps, kp, d);
    return ps;
}

inline void validate(const PlatesConfig& cfg) {
    require(cfg.chi_hat >= 0.0, "chi_hat must be nonnegative");
    require(cfg.d > 0.0, "d must be positive");
    require(cfg.n_steps >= 2, "n_steps must be >= 2");
    require(cfg.n_paths >= 1, "n_paths must be >= 1");
    require(cfg.pa_m >= 1, "pa_m must be >= 1");
    require(cfg.t_min > 0.0, "t_min must be positive");
    if (cfg.derivative == PlatesObservable::torque)
        require(std::isfinite(cfg.chi_hat), "torque requires finite chi_hat");
}

/// Observable slots of a plates ensemble.
enum PlatesSlot : std::size_t {
    slot_energy = 0,
    slot_force,
    slot_curvature,
    slot_torque_x,
    slot_torque_y,
    slot_torque_z,
    slot_ambiguous,
    plates_slot_count
};

struct PlatesResult {
    std::vector<EnsembleAccumulator> observables;
    double wall_time_s = 0.0;

    const EnsembleAccumulator& operator[](std::size_t i) const { return observables.at(i); }
    double estimate(PlatesSlot s) const { return observables.at(s).mean; }
    double stderr_(PlatesSlot s) const { return observables.at(s).stderr_(); }
};

/// Energy, force and curvature (and torque when cfg.derivative == torque) from one ensemble.
inline PlatesResult plates_run(const PlatesConfig& cfg, bool brute_force_x0 = false) {
    validate(cfg);
    const bool torque = cfg.derivative == PlatesObservable::torque;
    auto factory = [&] {
        return [&](std::uint64_t, PathRng& rng, std::span<double> out) {
            if (cfg.chi_hat == 0.0) return;
            const PlatesPathSample ps =
                brute_force_x0 ? plates_path_sample_translated(cfg, rng) : plates_path_sample(cfg, rng, torque);
            out[slot_energy] = ps.energy;
            out[slot_force] = ps.force;
            out[slot_curvature] = ps.curvature;
            out[slot_torque_x] = ps.torque[0];
            out[slot_torque_y] = ps.torque[1];
            out[slot_torque_z] = ps.torque[2];
            out[slot_ambiguous] = ps.ambiguous;
        };
    };
    auto r = run_ensemble(factory, cfg.n_paths, cfg.seed, cfg.workers, plates_slot_count);
    return {std::move(r.observables), r.wall_time_s};
}

inline EnsembleAccumulator plates_energy(PlatesConfig cfg) {
    cfg.derivative = PlatesObservable::energy;
    return plates_run(cfg)[slot_energy];
}

inline EnsembleAccumulator plates_force(PlatesConfig cfg) {
    cfg.derivative = PlatesObservable::force;
    return plates_run(cfg)[slot_force];
}

inline EnsembleAccumulator plates_curvature(PlatesConfig cfg) {
    cfg.derivative = PlatesObservable::curvature;
    return plates_run(cfg)[slot_curvature];
}

/// Per-path torque weight on the upper plate about `pivot` for a sampled path
/// (positions x along the normal, tx/ty transverse), projected on `axis` if nonzero.
inline std::array<double, 3> torque_weight(std::span<const double> x, std::span<const double> tx,
                                           std::span<const double> ty, double T, double s, const PlatesConfig& cfg,
                                           std::array<double, 3> pivot) {
    require(x.size() == tx.size() && x.size() == ty.size() && x.size() >= 2, "torque_weight: size mismatch");
    const int N = static_cast<int>(x.size()) - 1;
    const double dT = T / N;
    detail::KernelProducts kp;
    for (int j = 0; j < N; ++j) {
        const SegmentFactor f = detail::plate_segment(x[j], x[j + 1], dT, s, cfg.d, 1);
        const double mid[2] = {0.5 * (tx[j] + tx[j + 1]), 0.5 * (ty[j] + ty[j + 1])};
        kp.add(f, mid, pivot);
    }
    std::array<double, 3> out{};
    for (int a = 0; a < 3; ++a) out[a] = (1.0 - kp.K[0]) * kp.K[1] * kp.lever[a];
    return out;
}

inline std::array<double, 3> plates_torque(PlatesConfig cfg, std::array<double, 3> pivot,
                                           std::array<double, 3>* stderr_out = nullptr) {
    cfg.derivative = PlatesObservable::torque;
    cfg.pivot = pivot;
    const auto r = plates_run(cfg);
    std::array<double, 3> out{r.estimate(slot_torque_x), r.estimate(slot_torque_y), r.estimate(slot_torque_z)};
    if (stderr_out) *stderr_out = {r.stderr_(slot_torque_x), r.stderr_(slot_torque_y), r.stderr_(slot_torque_z)};
    return out;
}

} // namespace worldline
