#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "worldline/analytic.hpp"
#include "worldline/errors.hpp"
#include "worldline/quadrature.hpp"
#include "worldline/stats.hpp"
#include "worldline/stochastic.hpp"

namespace worldline {

enum class DerivativeMethod { finite_difference, partial_average };

struct DerivativeSpec {
    int order = 0;
    DerivativeMethod method = DerivativeMethod::partial_average;
    double fd_delta = 0.01;  ///< delta / d
    int pa_m = 1;
    int subaverage_count = 1;
};

/// Atom at distance d from a dielectric half-space; D = 4, paths are 1-D normal to the interface.
struct CpConfig {
    double chi = 1.0;  ///< +infinity selects the perfect-conductor limit
    double d = 1.0;
    int n_steps = 10000;
    int sub_steps = 1;  ///< refinement of the two segments around the path maximum; 1 disables it
    std::uint64_t n_paths = 1000;
    DerivativeSpec derivative;
    int t_quadrature_nodes = 64;
    double epsilon_tolerance = 1e-8;
    bool strict = false;  ///< reject pa_m/N above the averaging-fraction bound
    std::uint64_t seed = 1;
    int workers = 1;
};

struct OccupationEstimate {
    double fraction = 0.0;
    bool includes_endpoint_weights = false;
};

/// Occupation weights of a closed path whose first and last m steps are partially averaged:
/// source m, x_m and x_{N-m} (m+1)/2 each, interior 1; total N. m = 0 is the plain trapezoid.
inline std::vector<double> occupation_weights(int n_steps, int m) {
    require(m >= 0 && 2 * m < n_steps, "occupation_weights: need 0 <= m < N/2");
    std::vector<double> w(n_steps + 1, 1.0);
    if (m == 0) {
        w[0] = w[n_steps] = 0.5;
        return w;
    }
    for (int j = 1; j < m; ++j) w[j] = w[n_steps - j] = 0.0;
    w[0] = 0.5 * m;
    w[n_steps] = 0.5 * m;
    w[m] = w[n_steps - m] = 0.5 * (m + 1);
    return w;
}

/// Weighted samples sorted by value; answers "weight above level" in O(log N).
class OccupationProfile {
public:
    OccupationProfile(std::span<const double> values, std::span<const double> weights) {
        require(values.size() == weights.size(), "OccupationProfile: size mismatch");
        std::vector<std::size_t> idx(values.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
        values_.reserve(idx.size());
        cumulative_.reserve(idx.size());
        double c = 0.0;
        for (std::size_t i : idx) {
            c += weights[i];
            values_.push_back(values[i]);
            cumulative_.push_back(c);
        }
        total_ = c;
    }

    /// Total weight of samples strictly above `level`.
    double weight_above(double level) const {
        auto it = std::partition_point(values_.begin(), values_.end(), [&](double v) { return v > level; });
        const auto k = it - values_.begin();
        return k == 0 ? 0.0 : cumulative_[k - 1];
    }
    double total() const { return total_; }
    double max() const { return values_.empty() ? -std::numeric_limits<double>::infinity() : values_.front(); }

private:
    std::vector<double> values_;
    std::vector<double> cumulative_;
    double total_ = 0.0;
};

/// Weighted fraction of the scaled path x0 + sqrt(T) B beyond the interface at x0 + d.
inline OccupationEstimate occupation_fraction(const UnitBridge& bridge, double x0, double d, double T, int m) {
    require(T > 0.0 && d > 0.0, "occupation_fraction: need T > 0 and d > 0");
    const int n = bridge.n_steps;
    const auto w = occupation_weights(n, m);
    std::vector<double> x(bridge.samples.size());
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = x0 + std::sqrt(T) * bridge.samples[j];
    // the closed path visits j = 0 and j = N at the same point; count it once
    std::vector<double> wt(w.begin(), w.end());
    if (m == 0) { wt[0] = 1.0; wt[n] = 0.0; }
    OccupationProfile prof(x, wt);
    return {prof.weight_above(x0 + d) / n, m > 0};
}

/// Renormalized kernel g(F) = (1 + chi F)^{-3/2} - 1; -1 for any F > 0 when chi is infinite.
inline double renormalized_kernel(double chi, double fraction) {
    if (fraction <= 0.0) return 0.0;
    if (std::isinf(chi)) return -1.0;
    return 1.0 / ((1.0 + chi * fraction) * std::sqrt(1.0 + chi * fraction)) - 1.0;
}

/// Counts how many of an ascending node set lie strictly below a value, via a lookup table.
class NodeBucketer {
public:
    NodeBucketer() = default;
    NodeBucketer(std::vector<double> nodes, double hi) : nodes_(std::move(nodes)), hi_(hi) {
        const std::size_t cells = 8 * nodes_.size() + 8;
        scale_ = static_cast<double>(cells) / hi_;
        table_.resize(cells);
        std::size_t k = 0;
        for (std::size_t b = 0; b < cells; ++b) {
            const double lo = static_cast<double>(b) / scale_;
            while (k < nodes_.size() && nodes_[k] < lo) ++k;
            table_[b] = static_cast<int>(k);
        }
    }

    int size() const { return static_cast<int>(nodes_.size()); }
    const std::vector<double>& nodes() const { return nodes_; }

    /// Number of nodes < v; v must be > 0.
    int index(double v) const {
        if (v >= hi_) return static_cast<int>(nodes_.size());
        int k = table_[static_cast<std::size_t>(v * scale_)];
        const int n = static_cast<int>(nodes_.size());
        while (k < n && nodes_[k] < v) ++k;
        return k;
    }

private:
    std::vector<double> nodes_;
    std::vector<int> table_;
    double hi_ = 1.0;
    double scale_ = 1.0;
};

/// Raw T integral  int_0^inf dT T^{-3-n/2} g(F(d/sqrt(T)))  for one path, with the
/// substitution T = T_touch / w^2 and Gauss-Legendre nodes in w. The atom position
/// drops out; only the distance d to the interface matters.
inline double per_path_t_integral(const UnitBridge& bridge, double d, double chi, int nodes, int order = 0) {
    require(d > 0.0 && nodes >= 1 && order >= 0, "per_path_t_integral: invalid arguments");
    const int n = bridge.n_steps;
    double M = 0.0;
    for (int j = 1; j < n; ++j) M = std::max(M, bridge.samples[j]);
    if (M <= 0.0 || chi == 0.0) return 0.0;
    const auto& g = gauss_legendre(nodes);
    std::vector<double> interior(bridge.samples.begin() + 1, bridge.samples.end() - 1);
    std::vector<double> ones(interior.size(), 1.0);
    OccupationProfile prof(interior, ones);
    const int p = 3 + order;
    double s = 0.0;
    for (int k = 0; k < nodes; ++k) {
        const double w = g.x[k];
        s += g.w[k] * std::pow(w, p) * renormalized_kernel(chi, prof.weight_above(M * w) / n);
    }
    return 2.0 * std::pow(M / d, p + 1) * s;
}

/// Normalization turning d^n/dd^n of the raw path integral into the efficiency eta.
inline double cp_derivative_normalization(int order, double d) {
    double fact = 1.0;
    for (int k = 2; k <= order + 3; ++k) fact *= k;
    return -(2.0 / 3.0) * (order % 2 == 0 ? 1.0 : -1.0) * (6.0 / fact) * std::pow(d, 4.0 + order);
}

struct CpResult {
    double estimate = 0.0;
    double stderr_ = 0.0;
    EnsembleAccumulator acc;
    double wall_time_s = 0.0;
};

namespace detail {

inline CpResult to_result(const EnsembleAccumulator& a, double wall) {
    return {a.mean, a.stderr_(), a, wall};
}

/// Per-thread scratch and per-path evaluation for the half-space problem.
class CpWorker {
public:
    CpWorker(const CpConfig& cfg, std::vector<double> chis, std::vector<double> fd_deltas = {})
        : cfg_(cfg), chis_(std::move(chis)), deltas_(std::move(fd_deltas)) {
        if (deltas_.empty()) deltas_.push_back(cfg.derivative.fd_delta);
        const int n = cfg.n_steps;
        const int m = cfg.derivative.order > 0 && cfg.derivative.method == DerivativeMethod::partial_average
                          ? cfg.derivative.pa_m
                          : 0;
        m_ = m;
        y_.resize(n + 1);
        if (m_ == 0) closed_ = BridgeCoefficients(n);
        else interior_ = BridgeCoefficients(n - 2 * m_);
        if (cfg.sub_steps > 1) {
            fine_ = BridgeCoefficients(cfg.sub_steps);
            fine_a_.resize(cfg.sub_steps + 1);
            fine_b_.resize(cfg.sub_steps + 1);
        }
        const auto& g = gauss_legendre(cfg.t_quadrature_nodes);
        if (cfg.derivative.order > 0 && cfg.derivative.method == DerivativeMethod::finite_difference) {
            // path-independent level grid u = d/sqrt(T) on (0, u_max], shared by all shifts
            const double u_max = 6.0 / (1.0 - *std::max_element(deltas_.begin(), deltas_.end()));
            const int K = cfg.t_quadrature_nodes;
            std::vector<std::pair<double, int>> th;
            for (int i = 0; i < K; ++i) {
                const double u = u_max * g.x[i];
                fd_u_.push_back(u);
                fd_w_.push_back(u_max * g.w[i]);
                for (std::size_t r = 0; r < deltas_.size(); ++r)
                    for (int s = 0; s < 3; ++s)
                        th.emplace_back(u * (1.0 + (s - 1) * deltas_[r]), static_cast<int>(3 * r + s) * K + i);
            }
            std::sort(th.begin(), th.end());
            std::vector<double> nodes;
            fd_slot_.resize(th.size());
            for (std::size_t r = 0; r < th.size(); ++r) {
                nodes.push_back(th[r].first);
                fd_slot_[r] = th[r].second;
            }
            bucket_ = NodeBucketer(nodes, nodes.back() * (1.0 + 1e-12) + 1e-300);
        } else {
            std::vector<double> nodes(g.x.begin(), g.x.end());
            wq_.assign(g.w.begin(), g.w.end());
            const int p = 3 + (m_ > 0 ? cfg.derivative.order : 0);
            for (int k = 0; k < cfg.t_quadrature_nodes; ++k) wq_[k] *= std::pow(g.x[k], p);
            bucket_ = NodeBucketer(nodes, 1.0);
        }
        hist_.resize(bucket_.size() + 1);
        counts_.resize(bucket_.size());
    }

    void operator()(std::uint64_t, PathRng& rng, std::span<double> out) {
        if (cfg_.derivative.order == 0) potential(rng, out);
        else if (cfg_.derivative.method == DerivativeMethod::finite_difference) fd(rng, out);
        else pa(rng, out);
    }

private:
    struct Special {
        int index;
        double weight;
    };

    // closed bridge in unit time with refinement around the maximum; returns refined maximum
    double build_closed(PathRng& rng) {
        const int n = cfg_.n_steps;
        fill_open_bridge(y_.data(), 0.0, 0.0, closed_, 1.0 / n, rng);
        int jmax = 1;
        for (int j = 2; j < n; ++j)
            if (y_[j] > y_[jmax]) jmax = j;
        return refine(rng, jmax, 0, n);
    }

    // refines the regular segments adjacent to jmax within [lo, hi]; records weight corrections
    double refine(PathRng& rng, int jmax, int lo, int hi) {
        specials_.clear();
        refined_a_ = refined_b_ = false;
        double M = y_[jmax];
        const int S = cfg_.sub_steps;
        if (S <= 1) return M;
        const double dt = 1.0 / (static_cast<double>(cfg_.n_steps) * S);
        const double cut = 0.5 - 0.5 / S;
        if (jmax - 1 >= lo) {
            fill_open_bridge(fine_a_.data(), y_[jmax - 1], y_[jmax], fine_, dt, rng);
            refined_a_ = true;
            specials_.push_back({jmax - 1, -cut});
            specials_.push_back({jmax, -cut});
            for (int i = 1; i < S; ++i) M = std::max(M, fine_a_[i]);
        }
        if (jmax + 1 <= hi) {
            fill_open_bridge(fine_b_.data(), y_[jmax], y_[jmax + 1], fine_, dt, rng);
            refined_b_ = true;
            specials_.push_back({jmax, -cut});
            specials_.push_back({jmax + 1, -cut});
            for (int i = 1; i < S; ++i) M = std::max(M, fine_b_[i]);
        }
        return M;
    }

    // accumulates weights of all occupation points with (y + shift) * inv_scale into hist_
    void bucket_points(int lo, int hi, double shift, double inv_scale, std::span<const Special> extra) {
        std::fill(hist_.begin(), hist_.end(), 0.0);
        auto add = [&](double y, double w) {
            const double v = (y + shift) * inv_scale;
            if (v > 0.0) hist_[bucket_.index(v)] += w;
        };
        for (int j = lo; j <= hi; ++j) {
            const double v = (y_[j] + shift) * inv_scale;
            if (v > 0.0) hist_[bucket_.index(v)] += 1.0;
        }
        for (const auto& s : extra) add(y_[s.index], s.weight);
        for (const auto& s : specials_) add(y_[s.index], s.weight);
        const int S = cfg_.sub_steps;
        if (S > 1) {
            const double wf = 1.0 / S;
            if (refined_a_) for (int i = 1; i < S; ++i) add(fine_a_[i], wf);
            if (refined_b_) for (int i = 1; i < S; ++i) add(fine_b_[i], wf);
        }
        // counts_[k] = weight strictly above node k
        double c = hist_[bucket_.size()];
        for (int k = bucket_.size() - 1; k >= 0; --k) {
            counts_[k] = c;
            c += hist_[k];
        }
    }

    // int_0^1 w^p g(F(M w)) dw with F from counts_
    double w_integral(double chi) const {
        const double inv_n = 1.0 / cfg_.n_steps;
        double s = 0.0;
        for (int k = 0; k < bucket_.size(); ++k) s += wq_[k] * renormalized_kernel(chi, counts_[k] * inv_n);
        return s;
    }

    void potential(PathRng& rng, std::span<double> out) {
        const double M = build_closed(rng);
        if (M <= 0.0) return;
        const double m4 = M * M * M * M;
        bool finite_chi = false;
        for (double chi : chis_) finite_chi |= (chi > 0.0 && !std::isinf(chi));
        if (finite_chi) bucket_points(1, cfg_.n_steps - 1, 0.0, 1.0 / M, {});
        for (std::size_t c = 0; c < chis_.size(); ++c) {
            const double chi = chis_[c];
            if (chi == 0.0) out[c] = 0.0;
            else if (std::isinf(chi)) out[c] = (4.0 / 3.0) * m4 * 0.25;
            else out[c] = -(4.0 / 3.0) * m4 * w_integral(chi);
        }
    }

    // one output per (chi, delta) pair, chi-major
    void fd(PathRng& rng, std::span<double> out) {
        const double M = build_closed(rng);
        if (M <= 0.0) return;
        const int K = cfg_.t_quadrature_nodes;
        const int n = cfg_.derivative.order;
        const std::size_t R = deltas_.size();
        bucket_points(1, cfg_.n_steps - 1, 0.0, 1.0, {});
        std::vector<double>& F = fd_fraction_;
        F.assign(3 * K * R, 0.0);
        for (std::size_t r = 0; r < fd_slot_.size(); ++r) F[fd_slot_[r]] = counts_[r] / cfg_.n_steps;
        for (std::size_t c = 0; c < chis_.size(); ++c) {
            const double chi = chis_[c];
            if (chi == 0.0) continue;
            for (std::size_t r = 0; r < R; ++r) {
                const double rho = deltas_[r];
                // I(d') in units of d: 2 sum W u^3 g(F(u d'/d)), evaluated at d' = d(1 + (s-1) rho)
                double I[3] = {0.0, 0.0, 0.0};
                for (int s = 0; s < 3; ++s) {
                    const double* f = &F[(3 * r + s) * K];
                    for (int i = 0; i < K; ++i) {
                        const double u = fd_u_[i];
                        I[s] += fd_w_[i] * u * u * u * renormalized_kernel(chi, f[i]);
                    }
                }
                for (double& v : I) v *= 2.0;
                const double stencil =
                    n == 1 ? (I[2] - I[0]) / (2.0 * rho) : (I[2] - 2.0 * I[1] + I[0]) / (rho * rho);
                out[c * R + r] = cp_derivative_normalization(n, 1.0) * stencil;
            }
        }
    }

    void pa(PathRng& rng, std::span<double> out) {
        const int N = cfg_.n_steps;
        const int m = m_;
        const int n = cfg_.derivative.order;
        const int S = cfg_.derivative.subaverage_count;
        const double frac = static_cast<double>(m) / N;
        const auto& table = hermite_table(n);
        // x-bar positions (unit coordinates) for every subaverage, stratified by van der Corput
        const double u0 = rng.uniform();
        zbar_.resize(S);
        for (int k = 0; k < S; ++k) {
            double u = u0 + van_der_corput(static_cast<std::uint64_t>(k));
            if (u >= 1.0) u -= 1.0;
            zbar_[k] = table.quantile(std::clamp(u, 1e-300, 1.0 - 1e-16));
        }
        const double half = std::sqrt(frac * (1.0 - 2.0 * frac) / 2.0) * rng.normal();
        fill_open_bridge(y_.data() + m, half, -half, interior_, 1.0 / N, rng);
        int jmax = m;
        for (int j = m + 1; j <= N - m; ++j)
            if (y_[j] > y_[jmax]) jmax = j;
        const double ymax = refine(rng, jmax, m, N - m);
        const Special ends[2] = {{m, 0.5 * (m + 1)}, {N - m, 0.5 * (m + 1)}};
        const double scale = std::pow(frac, -0.5 * n) / table.eta();
        const double norm = cp_derivative_normalization(n, 1.0) * (n % 2 == 0 ? 1.0 : -1.0);
        for (std::size_t c = 0; c < chis_.size(); ++c) {
            const double chi = chis_[c];
            if (chi == 0.0) continue;
            double sum = 0.0;
            for (int k = 0; k < S; ++k) {
                const double z = zbar_[k];
                const double h = hermite(n, z);
                if (h == 0.0) continue;
                const double shift = std::sqrt(frac) * z;
                const double Mk = shift + ymax;
                if (Mk <= 0.0) continue;
                double integral;
                if (std::isinf(chi)) {
                    integral = -1.0 / (4.0 + n);
                } else {
                    bucket_points(m + 1, N - m - 1, shift, 1.0 / Mk, ends);
                    integral = w_integral(chi);
                }
                sum += (h > 0.0 ? 1.0 : -1.0) * 2.0 * std::pow(Mk, 4.0 + n) * integral;
            }
            // derivative with respect to the source position; convert to d-derivatives
            out[c] = norm * scale * sum / S;
        }
    }

    const CpConfig& cfg_;
    std::vector<double> chis_;
    std::vector<double> deltas_;
    int m_ = 0;
    BridgeCoefficients closed_, interior_, fine_;
    std::vector<double> y_, fine_a_, fine_b_;
    bool refined_a_ = false, refined_b_ = false;
    std::vector<Special> specials_;
    NodeBucketer bucket_;
    std::vector<double> wq_;
    std::vector<double> hist_, counts_;
    std::vector<double> fd_u_, fd_w_, fd_fraction_;
    std::vector<int> fd_slot_;
    std::vector<double> zbar_;
};

inline void validate(const CpConfig& cfg) {
    require(cfg.chi >= 0.0, "chi must be nonnegative");
    require(cfg.d > 0.0, "d must be positive");
    require(cfg.n_steps >= 2, "n_steps must be >= 2");
    require(cfg.sub_steps >= 1, "sub_steps must be >= 1");
    require(cfg.n_paths >= 1, "n_paths must be >= 1");
    require(cfg.t_quadrature_nodes >= 1, "t_quadrature_nodes must be >= 1");
    require(cfg.epsilon_tolerance > 0.0 && cfg.epsilon_tolerance < 1.0, "epsilon_tolerance must lie in (0, 1)");
    const auto& dv = cfg.derivative;
    require(dv.order >= 0 && dv.order <= 10, "derivative order must be in [0, 10]");
    if (dv.order == 0) return;
    if (dv.method == DerivativeMethod::finite_difference) {
        require(dv.order <= 2, "finite differences support orders 1 and 2");
        require(dv.fd_delta > 0.0, "fd_delta must be positive");
        require(dv.fd_delta < 1.0, "fd_delta must be below d (shifted atom inside medium)");
    } else {
        require(dv.pa_m >= 1, "pa_m must be >= 1");
        require(2 * dv.pa_m < cfg.n_steps, "pa_m must be below N/2");
        require(dv.subaverage_count >= 1, "subaverage_count must be >= 1");
        if (cfg.strict) {
            // bound evaluated at T = d^2, where the unit-distance integrand peaks
            const double bound = std::clamp(averaging_fraction(cfg.d, cfg.d * cfg.d, cfg.epsilon_tolerance),
                                            1.0 / cfg.n_steps, 0.5);
            require(static_cast<double>(dv.pa_m) / cfg.n_steps <= bound,
                    "pa_m/N exceeds the averaging-fraction bound (strict mode)");
        }
    }
}

} // namespace detail

/// Normalized potential eta for each chi in `chis`, all from the same paths.
inline std::vector<CpResult> cp_potential_multi(CpConfig cfg, const std::vector<double>& chis) {
    cfg.derivative.order = 0;
    detail::validate(cfg);
    for (double c : chis) require(c >= 0.0, "chi must be nonnegative");
    auto r = run_ensemble([&] { return detail::CpWorker(cfg, chis); }, cfg.n_paths, cfg.seed, cfg.workers,
                          chis.size());
    std::vector<CpResult> out;
    for (const auto& a : r.observables) out.push_back(detail::to_result(a, r.wall_time_s));
    return out;
}

inline CpResult cp_potential(const CpConfig& cfg) {
    require(cfg.derivative.order == 0, "cp_potential: derivative order must be 0");
    return cp_potential_multi(cfg, {cfg.chi}).front();
}

inline CpResult cp_derivative_fd(const CpConfig& cfg) {
    require(cfg.derivative.method == DerivativeMethod::finite_difference, "cp_derivative_fd: method must be fd");
    require(cfg.derivative.order == 1 || cfg.derivative.order == 2, "cp_derivative_fd: order must be 1 or 2");
    detail::validate(cfg);
    auto r = run_ensemble([&] { return detail::CpWorker(cfg, {cfg.chi}); }, cfg.n_paths, cfg.seed, cfg.workers, 1);
    return detail::to_result(r[0], r.wall_time_s);
}

/// Finite-difference derivative at several delta/d values from the same paths.
inline std::vector<CpResult> cp_derivative_fd_multi(CpConfig cfg, const std::vector<double>& deltas) {
    cfg.derivative.method = DerivativeMethod::finite_difference;
    require(!deltas.empty(), "cp_derivative_fd_multi: no deltas");
    for (double dl : deltas) {
        cfg.derivative.fd_delta = dl;
        detail::validate(cfg);
    }
    require(cfg.derivative.order == 1 || cfg.derivative.order == 2, "cp_derivative_fd_multi: order must be 1 or 2");
    auto r = run_ensemble([&] { return detail::CpWorker(cfg, {cfg.chi}, deltas); }, cfg.n_paths, cfg.seed,
                          cfg.workers, deltas.size());
    std::vector<CpResult> out;
    for (const auto& a : r.observables) out.push_back(detail::to_result(a, r.wall_time_s));
    return out;
}

inline CpResult cp_derivative_pa(const CpConfig& cfg) {
    require(cfg.derivative.method == DerivativeMethod::partial_average, "cp_derivative_pa: method must be pa");
    if (cfg.derivative.order == 0) return cp_potential(cfg);
    detail::validate(cfg);
    auto r = run_ensemble([&] { return detail::CpWorker(cfg, {cfg.chi}); }, cfg.n_paths, cfg.seed, cfg.workers, 1);
    return detail::to_result(r[0], r.wall_time_s);
}

/// Dispatches on the derivative spec.
inline CpResult cp_run(const CpConfig& cfg) {
    if (cfg.derivative.order == 0) return cp_potential(cfg);
    if (cfg.derivative.method == DerivativeMethod::finite_difference) return cp_derivative_fd(cfg);
    return cp_derivative_pa(cfg);
}

} // namespace worldline
