#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "worldline/errors.hpp"
#include "worldline/rng.hpp"

namespace worldline {

/// Running count/mean/M2 (Welford) with exact-order merging.
struct EnsembleAccumulator {
    std::uint64_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;
    std::uint64_t skipped = 0;

    void add(double x) {
        if (!std::isfinite(x)) {
            ++skipped;
            return;
        }
        ++count;
        const double delta = x - mean;
        mean += delta / static_cast<double>(count);
        m2 += delta * (x - mean);
    }

    void merge(const EnsembleAccumulator& o) {
        skipped += o.skipped;
        if (o.count == 0) return;
        if (count == 0) {
            count = o.count;
            mean = o.mean;
            m2 = o.m2;
            return;
        }
        const double n1 = static_cast<double>(count), n2 = static_cast<double>(o.count);
        const double n = n1 + n2;
        const double delta = o.mean - mean;
        mean += delta * (n2 / n);
        m2 += o.m2 + delta * delta * (n1 * n2 / n);
        count += o.count;
    }

    double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }

    double stderr_() const {
        if (count < 2) return 0.0;
        const double n = static_cast<double>(count);
        return std::sqrt(m2 / n) / std::sqrt(n - 1.0);
    }
};

inline double standard_error(const EnsembleAccumulator& a) { return a.stderr_(); }

/// Paths are processed in fixed blocks; block results are merged in a fixed
/// binary tree, so the outcome does not depend on how blocks were scheduled.
inline constexpr std::uint64_t ensemble_block_size = 1024;

struct EnsembleResult {
    std::vector<EnsembleAccumulator> observables;
    double wall_time_s = 0.0;

    const EnsembleAccumulator& operator[](std::size_t i) const { return observables.at(i); }
};

/// `make_worker()` is called once per thread and must return a callable
/// `void(std::uint64_t stream_id, PathRng& rng, std::span<double> out)`.
template <class WorkerFactory>
EnsembleResult run_ensemble(WorkerFactory&& make_worker, std::uint64_t n_paths, std::uint64_t seed, int workers,
                            std::size_t n_observables) {
    require(n_paths >= 1, "run_ensemble: n_paths must be >= 1");
    require(workers >= 1, "run_ensemble: workers must be >= 1");
    require(n_observables >= 1, "run_ensemble: need at least one observable");
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t n_blocks = (n_paths + ensemble_block_size - 1) / ensemble_block_size;
    std::vector<std::vector<EnsembleAccumulator>> blocks(n_blocks,
                                                         std::vector<EnsembleAccumulator>(n_observables));
    std::atomic<std::uint64_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mu;

    auto body = [&] {
        try {
            auto worker = make_worker();
            std::vector<double> out(n_observables);
            for (;;) {
                if (failed.load(std::memory_order_relaxed)) return;
                const std::uint64_t blk = next.fetch_add(1);
                if (blk >= n_blocks) return;
                auto& acc = blocks[blk];
                const std::uint64_t lo = blk * ensemble_block_size;
                const std::uint64_t hi = std::min(n_paths, lo + ensemble_block_size);
                for (std::uint64_t id = lo; id < hi; ++id) {
                    PathRng rng(RngStream{seed, id});
                    std::fill(out.begin(), out.end(), 0.0);
                    worker(id, rng, std::span<double>(out));
                    for (std::size_t k = 0; k < n_observables; ++k) acc[k].add(out[k]);
                }
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mu);
            if (!error) error = std::current_exception();
            failed = true;
        }
    };

    const int n_threads = static_cast<int>(std::min<std::uint64_t>(workers, n_blocks));
    if (n_threads <= 1) {
        body();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(body);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);

    // fixed-shape pairwise reduction over block indices
    for (std::uint64_t width = 1; width < n_blocks; width *= 2)
        for (std::uint64_t i = 0; i + width < n_blocks; i += 2 * width)
            for (std::size_t k = 0; k < n_observables; ++k) blocks[i][k].merge(blocks[i + width][k]);

    EnsembleResult r;
    r.observables = std::move(blocks[0]);
    for (const auto& a : r.observables)
        if (static_cast<double>(a.skipped) > 1e-6 * static_cast<double>(n_paths))
            throw NumericalError("run_ensemble: " + std::to_string(a.skipped) + " non-finite path contributions");
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

/// Worker count from an explicit value, else WORLDLINE_WORKERS, else hardware concurrency.
inline int resolve_workers(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("WORLDLINE_WORKERS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

enum class SweepAxis { fd_delta, pa_fraction };

struct SweepPlan {
    std::string observable;
    SweepAxis axis = SweepAxis::pa_fraction;
    std::vector<double> points;
    std::uint64_t paths_per_point = 0;
    bool shared_seed = true;
};

struct SweepRow {
    double axis_value = 0.0;
    double estimate = 0.0;
    double stderr_ = 0.0;
    double oracle = 0.0;
    double rel_err = 0.0;
    bool flagged = false;
    double wall_time_s = 0.0;
};

struct PointEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;
    double wall_time_s = 0.0;
};

/// Seed for one sweep point; all points share `seed` under common random numbers.
inline std::uint64_t sweep_point_seed(std::uint64_t seed, std::size_t point_index, bool shared) {
    return shared ? seed : hash_pair(seed, 0x5eed0000ULL + point_index);
}

/// `evaluate(axis_value, seed)` returns a PointEstimate; `oracle()` may throw, which flags rows.
template <class Evaluate, class Oracle>
std::vector<SweepRow> sweep(const SweepPlan& plan, std::uint64_t seed, Evaluate&& evaluate, Oracle&& oracle) {
    for (std::size_t i = 1; i < plan.points.size(); ++i)
        require(plan.points[i] > plan.points[i - 1], "sweep: points must be strictly increasing");
    double ref = std::numeric_limits<double>::quiet_NaN();
    bool oracle_ok = true;
    try {
        ref = oracle();
    } catch (const std::exception&) {
        oracle_ok = false;
    }
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < plan.points.size(); ++i) {
        const PointEstimate p = evaluate(plan.points[i], sweep_point_seed(seed, i, plan.shared_seed));
        SweepRow row;
        row.axis_value = plan.points[i];
        row.estimate = p.estimate;
        row.stderr_ = p.stderr_;
        row.wall_time_s = p.wall_time_s;
        row.oracle = ref;
        row.flagged = !oracle_ok || !std::isfinite(ref) || ref == 0.0;
        row.rel_err = row.flagged ? std::numeric_limits<double>::quiet_NaN() : std::fabs(p.estimate - ref) / std::fabs(ref);
        rows.push_back(row);
    }
    return rows;
}

/// Least-squares fit y = a x^b in log-log space.
struct PowerLawFit {
    double a = 0.0;
    double exponent = 0.0;
};

inline PowerLawFit fit_power_law(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size() && x.size() >= 2, "fit_power_law: need at least two points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        require(x[i] > 0.0 && y[i] > 0.0, "fit_power_law: values must be positive");
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly;
    }
    const double den = n * sxx - sx * sx;
    require(den != 0.0, "fit_power_law: degenerate abscissae");
    const double b = (n * sxy - sx * sy) / den;
    return {std::exp((sy - b * sx) / n), b};
}

/// Quadratic least squares in (log x, log y); coefficients c0 + c1 L + c2 L^2.
inline std::array<double, 3> fit_log_quadratic(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size() && x.size() >= 3, "fit_log_quadratic: need at least three points");
    double s[5] = {0, 0, 0, 0, 0}, t[3] = {0, 0, 0};
    for (std::size_t i = 0; i < x.size(); ++i) {
        require(x[i] > 0.0 && y[i] > 0.0, "fit_log_quadratic: values must be positive");
        const double L = std::log(x[i]), Y = std::log(y[i]);
        double p = 1.0;
        for (int k = 0; k < 5; ++k) {
            s[k] += p;
            if (k < 3) t[k] += p * Y;
            p *= L;
        }
    }
    // 3x3 normal equations, Cramer's rule
    const double m[3][3] = {{s[0], s[1], s[2]}, {s[1], s[2], s[3]}, {s[2], s[3], s[4]}};
    auto det3 = [](const double a[3][3]) {
        return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
               a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    };
    const double d = det3(m);
    require(std::fabs(d) > 0.0, "fit_log_quadratic: singular system");
    std::array<double, 3> c{};
    for (int k = 0; k < 3; ++k) {
        double mk[3][3];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) mk[i][j] = (j == k) ? t[i] : m[i][j];
        c[k] = det3(mk) / d;
    }
    return c;
}

struct FitRange {
    double lo = 0.0;
    double hi = 0.0;
};

struct ErrorFloorFit {
    PowerLawFit small_side;
    std::array<double, 3> large_side{};  ///< log y = c0 + c1 log x + c2 (log x)^2
    FitRange small_range;
    FitRange large_range;
    std::optional<double> crossing;
    std::optional<double> floor;
};

/// Power law on the small-axis side, log-log quadratic on the large side, and their crossing.
/// Points with axis value in [small.lo, small.hi] / [large.lo, large.hi] enter the respective fits.
inline ErrorFloorFit fit_error_floor(std::span<const double> x, std::span<const double> y, FitRange small,
                                     FitRange large) {
    require(x.size() == y.size(), "fit_error_floor: size mismatch");
    std::vector<double> xs, ys, xl, yl;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] >= small.lo && x[i] <= small.hi) { xs.push_back(x[i]); ys.push_back(y[i]); }
        if (x[i] >= large.lo && x[i] <= large.hi) { xl.push_back(x[i]); yl.push_back(y[i]); }
    }
    require(xs.size() >= 3 && xl.size() >= 3, "fit_error_floor: need at least three points on each side");
    ErrorFloorFit f;
    f.small_range = small;
    f.large_range = large;
    f.small_side = fit_power_law(xs, ys);
    f.large_side = fit_log_quadratic(xl, yl);
    const double la = std::log(f.small_side.a), b = f.small_side.exponent;
    const auto& c = f.large_side;
    const double lmin = std::log(*std::min_element(x.begin(), x.end()));
    const double lmax = std::log(*std::max_element(x.begin(), x.end()));
    // c2 L^2 + (c1 - b) L + (c0 - la) = 0
    std::vector<double> roots;
    const double qa = c[2], qb = c[1] - b, qc = c[0] - la;
    auto gap = [&](double L) { return std::fabs((qa * L + qb) * L + qc); };
    const double span = lmax - lmin;
    if (std::max({gap(lmin), gap(lmax), gap(0.5 * (lmin + lmax))}) < 1e-9) {
        // coincident branches: no distinct crossing
    } else if (std::fabs(qa) * span * span < 1e-12) {
        if (std::fabs(qb) * span > 1e-12) roots.push_back(-qc / qb);
    } else {
        const double disc = qb * qb - 4.0 * qa * qc;
        if (disc >= 0.0) {
            const double sq = std::sqrt(disc);
            roots.push_back((-qb - sq) / (2.0 * qa));
            roots.push_back((-qb + sq) / (2.0 * qa));
        }
    }
    for (double L : roots) {
        if (L < lmin || L > lmax) continue;
        const double v = std::exp(la + b * L);
        if (!f.floor || v < *f.floor) {
            f.floor = v;
            f.crossing = std::exp(L);
        }
    }
    return f;
}

} // namespace worldline
