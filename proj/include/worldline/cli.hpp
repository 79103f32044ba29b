#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "worldline/analytic.hpp"
#include "worldline/cp_engine.hpp"
#include "worldline/errors.hpp"
#include "worldline/plates_engine.hpp"
#include "worldline/stats.hpp"
#include "worldline/stochastic.hpp"

namespace worldline::cli {

inline constexpr const char* artifact_version = "0.1.0";

enum ExitCode { exit_ok = 0, exit_selftest_failed = 1, exit_config = 2, exit_numerical = 3 };

/// Ordered (column, value) pairs of one output row.
using Row = std::vector<std::pair<std::string, nlohmann::json>>;

/// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Writes a '#' header block, then rows as CSV or JSON lines with identical fields.
class RowWriter {
public:
    RowWriter(std::ostream& os, std::string format) : os_(os), format_(std::move(format)) {
        require(format_ == "csv" || format_ == "jsonl", "format must be csv or jsonl");
    }

    void header(const std::vector<std::pair<std::string, std::string>>& config) {
        os_ << "# worldline " << artifact_version << "\n";
        for (const auto& [k, v] : config) os_ << "# " << k << " = " << v << "\n";
    }

    void write(const Row& row) {
        if (format_ == "jsonl") {
            nlohmann::ordered_json j;
            for (const auto& [k, v] : row) j[k] = v;
            os_ << j.dump() << "\n";
            return;
        }
        if (!wrote_columns_) {
            for (std::size_t i = 0; i < row.size(); ++i) os_ << (i ? "," : "") << row[i].first;
            os_ << "\n";
            wrote_columns_ = true;
        }
        for (std::size_t i = 0; i < row.size(); ++i) os_ << (i ? "," : "") << csv_value(row[i].second);
        os_ << "\n";
    }

private:
    static std::string csv_value(const nlohmann::json& v) {
        if (v.is_null()) return "nan";
        if (v.is_string()) return v.get<std::string>();
        if (v.is_number_float()) return fmt(v.get<double>());
        return v.dump();
    }

    std::ostream& os_;
    std::string format_;
    bool wrote_columns_ = false;
};

/// NaN becomes JSON null and prints "nan" in CSV; infinities are written as the strings "inf" and "-inf".
inline nlohmann::json num(double v) {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

/// Accepts integers and scientific notation ("1e6"); rejects fractional or negative counts.
inline std::uint64_t parse_count(const std::string& s, const std::string& what) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw ParameterError(what + ": not a number: " + s);
    }
    if (pos != s.size() || !(v >= 0.0) || v != std::floor(v) || v > 1.8e19)
        throw ParameterError(what + ": expected a nonnegative integer, got " + s);
    return static_cast<std::uint64_t>(v);
}

inline double parse_real(const std::string& s, const std::string& what) {
    if (s == "inf" || s == "infinity" || s == "+inf") return std::numeric_limits<double>::infinity();
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw ParameterError(what + ": not a number: " + s);
    }
    if (pos != s.size()) throw ParameterError(what + ": not a number: " + s);
    return v;
}

inline std::vector<double> parse_list(const std::string& s, const std::string& what) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(parse_real(item, what));
    }
    return out;
}

/// Flat key=value file; '#' starts a comment. Keys are long flag names without dashes.
inline std::vector<std::pair<std::string, std::string>> load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParameterError("cannot open config file " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    int lineno = 0;
    auto trim = [](std::string x) {
        const auto b = x.find_first_not_of(" \t\r");
        const auto e = x.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : x.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParameterError(path + ":" + std::to_string(lineno) + ": expected key=value");
        out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
}

/// Inserts config-file entries right after the subcommand so later command-line flags win.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::string path;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (path.empty() || rest.empty()) return rest;
    std::vector<std::string> out{rest.front()};
    for (const auto& [k, v] : load_config_file(path)) {
        if (v == "true") {
            out.push_back("--" + k);
        } else if (v != "false") {
            out.push_back("--" + k);
            out.push_back(v);
        }
    }
    out.insert(out.end(), rest.begin() + 1, rest.end());
    return out;
}

/// Raw flag values shared by the subcommands; parsed into engine configs afterwards.
struct Flags {
    std::string chi = "1", chi_hat = "1", paths = "1000", steps, sub_steps = "1", epsilon, seed = "1";
    std::string delta = "0.01", pivot = "0,0,0", points, fit_small, fit_large, t_min = "0.15";
    std::string method = "pa", observable, format = "csv", out, axis = "pa-fraction", mutate;
    int order = 0, pa_m = 1, subaverages = 1, t_nodes = 64, workers = 0, verbosity = 0;
    bool shared_seed = false, strict = false;
};

inline std::ostream& open_output(const std::string& path, std::ofstream& file, std::ostream& fallback) {
    if (path.empty() || path == "-") return fallback;
    file.open(path);
    if (!file) throw ParameterError("cannot open output file " + path);
    return file;
}

inline double rel_err(double est, double oracle) {
    if (!std::isfinite(oracle) || oracle == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return std::fabs(est - oracle) / std::fabs(oracle);
}

inline CpConfig cp_config(const Flags& f) {
    CpConfig c;
    c.chi = parse_real(f.chi, "--chi");
    c.n_paths = parse_count(f.paths, "--paths");
    c.n_steps = static_cast<int>(parse_count(f.steps.empty() ? "10000" : f.steps, "--steps"));
    c.sub_steps = static_cast<int>(parse_count(f.sub_steps, "--sub-steps"));
    c.seed = parse_count(f.seed, "--seed");
    c.workers = resolve_workers(f.workers);
    c.t_quadrature_nodes = f.t_nodes;
    c.strict = f.strict;
    if (!f.epsilon.empty()) c.epsilon_tolerance = parse_real(f.epsilon, "--epsilon");
    c.derivative.order = f.order;
    require(f.method == "pa" || f.method == "fd", "--method must be fd or pa");
    c.derivative.method = f.method == "fd" ? DerivativeMethod::finite_difference : DerivativeMethod::partial_average;
    c.derivative.fd_delta = parse_real(f.delta, "--delta");
    c.derivative.pa_m = f.pa_m;
    c.derivative.subaverage_count = f.subaverages;
    return c;
}

inline PlatesObservable parse_observable(const std::string& s) {
    if (s == "energy" || s.empty()) return PlatesObservable::energy;
    if (s == "force") return PlatesObservable::force;
    if (s == "curvature") return PlatesObservable::curvature;
    if (s == "torque") return PlatesObservable::torque;
    throw ParameterError("--observable must be energy, force, curvature or torque");
}

inline PlatesConfig plates_config(const Flags& f) {
    PlatesConfig c;
    c.chi_hat = parse_real(f.chi_hat, "--chi-hat");
    c.n_paths = parse_count(f.paths, "--paths");
    c.n_steps = static_cast<int>(parse_count(f.steps.empty() ? "1000" : f.steps, "--steps"));
    c.seed = parse_count(f.seed, "--seed");
    c.workers = resolve_workers(f.workers);
    c.pa_m = f.pa_m;
    c.t_min = parse_real(f.t_min, "--t-min");
    if (!f.epsilon.empty()) c.pa_epsilon = parse_real(f.epsilon, "--epsilon");
    c.derivative = parse_observable(f.observable);
    const auto p = parse_list(f.pivot, "--pivot");
    require(p.size() == 3, "--pivot expects x,y,z");
    c.pivot = {p[0], p[1], p[2]};
    return c;
}

inline double cp_oracle(double chi) { return eta_te(chi); }

inline int cmd_cp(const Flags& f, std::ostream& os) {
    const CpConfig c = cp_config(f);
    RowWriter w(os, f.format);
    const auto& dv = c.derivative;
    const bool fd = dv.order > 0 && dv.method == DerivativeMethod::finite_difference;
    w.header({{"command", "cp"}, {"chi", fmt(c.chi)}, {"d", fmt(c.d)}, {"steps", std::to_string(c.n_steps)},
              {"sub_steps", std::to_string(c.sub_steps)}, {"paths", std::to_string(c.n_paths)},
              {"order", std::to_string(dv.order)}, {"method", dv.order == 0 ? "none" : (fd ? "fd" : "pa")},
              {"delta", fmt(dv.fd_delta)}, {"pa_m", std::to_string(dv.pa_m)},
              {"subaverages", std::to_string(dv.subaverage_count)}, {"t_nodes", std::to_string(c.t_quadrature_nodes)},
              {"epsilon", fmt(c.epsilon_tolerance)}, {"strict", c.strict ? "true" : "false"},
              {"seed", std::to_string(c.seed)}, {"workers", std::to_string(c.workers)}});
    CpResult r;
    if (c.chi == 0.0) {
        detail::validate(c);
        r = {};
    } else {
        r = cp_run(c);
    }
    const double oracle = cp_oracle(c.chi);
    w.write({{"chi", num(c.chi)},
             {"N", c.n_steps},
             {"n_paths", c.n_paths},
             {"method", dv.order == 0 ? "none" : (fd ? "fd" : "pa")},
             {"order", dv.order},
             {"m_or_delta", num(fd ? dv.fd_delta : (dv.order == 0 ? 0.0 : static_cast<double>(dv.pa_m)))},
             {"estimate", num(r.estimate)},
             {"stderr", num(r.stderr_)},
             {"oracle", num(oracle)},
             {"rel_err", num(c.chi == 0.0 ? 0.0 : rel_err(r.estimate, oracle))},
             {"seed", c.seed},
             {"wall_time_s", num(r.wall_time_s)}});
    return exit_ok;
}

inline double plates_oracle(const PlatesConfig& c, int order) {
    if (std::isinf(c.chi_hat)) return 0.5;
    if (order == 0) return gamma_te(c.chi_hat, c.d);
    return gamma_te_derivatives(c.chi_hat, c.d, order);
}

inline std::vector<std::pair<std::string, std::string>> plates_header(const PlatesConfig& c, const char* cmd) {
    return {{"command", cmd},
            {"chi_hat", fmt(c.chi_hat)},
            {"d", fmt(c.d)},
            {"steps", std::to_string(c.n_steps)},
            {"paths", std::to_string(c.n_paths)},
            {"pa_m", std::to_string(c.pa_m)},
            {"epsilon", c.pa_epsilon < 0.0 ? "default" : fmt(c.pa_epsilon)},
            {"t_min", fmt(c.t_min)},
            {"pivot", fmt(c.pivot[0]) + "," + fmt(c.pivot[1]) + "," + fmt(c.pivot[2])},
            {"seed", std::to_string(c.seed)},
            {"workers", std::to_string(c.workers)}};
}

inline int cmd_plates(const Flags& f, std::ostream& os) {
    const PlatesConfig c = plates_config(f);
    validate(c);
    RowWriter w(os, f.format);
    auto hdr = plates_header(c, "plates");
    hdr.insert(hdr.begin() + 1, {"observable", f.observable.empty() ? "energy" : f.observable});
    w.header(hdr);
    const PlatesResult r = plates_run(c);
    auto row = [&](const std::string& obs, const std::string& comp, PlatesSlot slot, double oracle) {
        const double est = c.chi_hat == 0.0 ? 0.0 : r.estimate(slot);
        w.write({{"chi_hat", num(c.chi_hat)},
                 {"N", c.n_steps},
                 {"n_paths", c.n_paths},
                 {"observable", obs},
                 {"component", comp},
                 {"pa_m", c.pa_m},
                 {"estimate", num(est)},
                 {"stderr", num(r.stderr_(slot))},
                 {"oracle", num(oracle)},
                 {"rel_err", num(c.chi_hat == 0.0 ? 0.0 : rel_err(est, oracle))},
                 {"ambiguous_per_path", num(r.estimate(slot_ambiguous))},
                 {"seed", c.seed},
                 {"wall_time_s", num(r.wall_time_s)}});
    };
    switch (c.derivative) {
    case PlatesObservable::energy: row("energy", "", slot_energy, c.chi_hat == 0.0 ? 0.0 : plates_oracle(c, 0)); break;
    case PlatesObservable::force: row("force", "", slot_force, c.chi_hat == 0.0 ? 0.0 : plates_oracle(c, 1)); break;
    case PlatesObservable::curvature:
        row("curvature", "", slot_curvature, c.chi_hat == 0.0 ? 0.0 : plates_oracle(c, 2));
        break;
    case PlatesObservable::torque: {
        // torque about the pivot equals pivot x (force z-hat) for infinite plates
        const double F = c.chi_hat == 0.0 ? 0.0 : plates_oracle(c, 1);
        row("torque", "x", slot_torque_x, c.pivot[1] * F);
        row("torque", "y", slot_torque_y, -c.pivot[0] * F);
        row("torque", "z", slot_torque_z, 0.0);
        break;
    }
    }
    return exit_ok;
}

inline int cmd_sweep(const Flags& f, std::ostream& os) {
    require(!f.points.empty(), "--points is required for sweep");
    SweepPlan plan;
    plan.observable = f.observable.empty() ? "cp" : f.observable;
    require(f.axis == "pa-fraction" || f.axis == "fd-delta", "--axis must be pa-fraction or fd-delta");
    plan.axis = f.axis == "fd-delta" ? SweepAxis::fd_delta : SweepAxis::pa_fraction;
    plan.points = parse_list(f.points, "--points");
    plan.paths_per_point = parse_count(f.paths, "--paths");
    plan.shared_seed = f.shared_seed;
    const std::uint64_t seed = parse_count(f.seed, "--seed");
    const bool is_cp = plan.observable == "cp";
    if (!is_cp) require(plan.axis == SweepAxis::pa_fraction, "plates sweeps support only --axis pa-fraction");

    std::function<PointEstimate(double, std::uint64_t)> evaluate;
    std::function<double()> oracle;
    std::vector<std::pair<std::string, std::string>> hdr;
    if (is_cp) {
        CpConfig base = cp_config(f);
        base.n_paths = plan.paths_per_point;
        require(base.derivative.order >= 1, "cp sweeps need --order >= 1");
        base.derivative.method =
            plan.axis == SweepAxis::fd_delta ? DerivativeMethod::finite_difference : DerivativeMethod::partial_average;
        evaluate = [base](double x, std::uint64_t s) {
            CpConfig c = base;
            c.seed = s;
            if (c.derivative.method == DerivativeMethod::finite_difference) {
                c.derivative.fd_delta = x;
            } else {
                c.derivative.pa_m = std::max(1, static_cast<int>(std::lround(x * c.n_steps)));
            }
            const CpResult r = cp_run(c);
            return PointEstimate{r.estimate, r.stderr_, r.wall_time_s};
        };
        oracle = [chi = base.chi] { return eta_te(chi); };
        hdr = {{"command", "sweep"}, {"observable", "cp"}, {"chi", fmt(base.chi)},
               {"order", std::to_string(base.derivative.order)}, {"steps", std::to_string(base.n_steps)},
               {"sub_steps", std::to_string(base.sub_steps)}};
    } else {
        PlatesConfig base = plates_config(f);
        base.n_paths = plan.paths_per_point;
        require(base.derivative != PlatesObservable::torque, "torque sweeps are not supported");
        validate(base);
        const int order = base.derivative == PlatesObservable::energy ? 0
                          : base.derivative == PlatesObservable::force ? 1
                                                                        : 2;
        evaluate = [base, order](double x, std::uint64_t s) {
            PlatesConfig c = base;
            c.seed = s;
            c.pa_m = std::max(1, static_cast<int>(std::lround(x * c.n_steps)));
            const PlatesResult r = plates_run(c);
            const PlatesSlot slot = order == 0 ? slot_energy : order == 1 ? slot_force : slot_curvature;
            return PointEstimate{r.estimate(slot), r.stderr_(slot), r.wall_time_s};
        };
        oracle = [base, order] { return plates_oracle(base, order); };
        hdr = plates_header(base, "sweep");
        hdr.insert(hdr.begin() + 1, {"observable", plan.observable});
    }
    hdr.emplace_back("axis", f.axis);
    hdr.emplace_back("points", f.points);
    hdr.emplace_back("paths_per_point", std::to_string(plan.paths_per_point));
    hdr.emplace_back("shared_seed", plan.shared_seed ? "true" : "false");
    hdr.emplace_back("seed", std::to_string(seed));
    RowWriter w(os, f.format);
    w.header(hdr);

    const auto rows = sweep(plan, seed, evaluate, oracle);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto emit = [&](const std::string& kind, double x, double est, double se, double orc, double re, bool flagged,
                    double wall, const ErrorFloorFit* fit, const std::string& status) {
        Row r{{"kind", kind},
              {"axis", f.axis},
              {"axis_value", num(x)},
              {"estimate", num(est)},
              {"stderr", num(se)},
              {"oracle", num(orc)},
              {"rel_err", num(re)},
              {"flagged", flagged ? 1 : 0},
              {"wall_time_s", num(wall)}};
        r.emplace_back("fit_status", status);
        r.emplace_back("small_a", num(fit ? fit->small_side.a : nan));
        r.emplace_back("small_exponent", num(fit ? fit->small_side.exponent : nan));
        r.emplace_back("large_c0", num(fit ? fit->large_side[0] : nan));
        r.emplace_back("large_c1", num(fit ? fit->large_side[1] : nan));
        r.emplace_back("large_c2", num(fit ? fit->large_side[2] : nan));
        r.emplace_back("small_lo", num(fit ? fit->small_range.lo : nan));
        r.emplace_back("small_hi", num(fit ? fit->small_range.hi : nan));
        r.emplace_back("large_lo", num(fit ? fit->large_range.lo : nan));
        r.emplace_back("large_hi", num(fit ? fit->large_range.hi : nan));
        r.emplace_back("crossing", num(fit && fit->crossing ? *fit->crossing : nan));
        r.emplace_back("floor", num(fit && fit->floor ? *fit->floor : nan));
        w.write(r);
    };
    std::vector<double> xs, ys;
    for (const auto& r : rows) {
        emit("point", r.axis_value, r.estimate, r.stderr_, r.oracle, r.rel_err, r.flagged, r.wall_time_s, nullptr, "");
        if (std::isfinite(r.rel_err) && r.rel_err > 0.0) {
            xs.push_back(r.axis_value);
            ys.push_back(r.rel_err);
        }
    }
    if (rows.empty()) return exit_ok;
    // default split: lower half of the points on the small side, upper half on the large side
    FitRange small{plan.points.front(), plan.points[(plan.points.size() - 1) / 2]};
    FitRange large{plan.points[plan.points.size() / 2], plan.points.back()};
    if (!f.fit_small.empty()) {
        const auto v = parse_list(f.fit_small, "--fit-small");
        require(v.size() == 2, "--fit-small expects lo,hi");
        small = {v[0], v[1]};
    }
    if (!f.fit_large.empty()) {
        const auto v = parse_list(f.fit_large, "--fit-large");
        require(v.size() == 2, "--fit-large expects lo,hi");
        large = {v[0], v[1]};
    }
    try {
        const ErrorFloorFit fit = fit_error_floor(xs, ys, small, large);
        emit("fit", fit.crossing.value_or(nan), nan, nan, nan, fit.floor.value_or(nan), false, 0.0, &fit,
             fit.crossing ? "ok" : "no crossing in range");
    } catch (const ParameterError& e) {
        ErrorFloorFit empty;
        empty.small_range = small;
        empty.large_range = large;
        emit("fit", nan, nan, nan, nan, nan, false, 0.0, &empty, std::string("absent: ") + e.what());
    }
    return exit_ok;
}

struct SelftestItem {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Oracle and property checks; `eta` is injectable so the mutation mode can verify the suite bites.
inline std::vector<SelftestItem> run_selftests(const std::function<double(double)>& eta) {
    std::vector<SelftestItem> items;
    auto add = [&](std::string name, bool pass, std::string detail) {
        items.push_back({std::move(name), pass, std::move(detail)});
    };
    {
        const double r = eta(1e-5) / 1e-5;
        add("eta_te small-chi slope 1/40", std::fabs(r - 0.025) <= 1e-4 * 0.025, "eta(1e-5)/1e-5 = " + fmt(r));
        const double big = eta(1e12);
        add("eta_te strong-coupling limit 1/6", std::fabs(big - 1.0 / 6.0) < 1e-5, "eta(1e12) = " + fmt(big));
    }
    {
        std::string detail;
        bool ok = true;
        double last = 0.0;
        for (double u : {1e-2, 1e-3, 1e-4}) {
            const double ratio = gamma_te(u, 1.0) / (27.0 * u * u / (4.0 * std::pow(std::numbers::pi, 4)));
            detail += "u=" + fmt(u) + " ratio=" + fmt(ratio) + "; ";
            if (u < 1e-2) ok = ok && std::fabs(ratio - 1.0) < std::fabs(last - 1.0);
            last = ratio;
        }
        ok = ok && std::fabs(last - 1.0) < 1e-3;
        add("gamma_te weak-coupling asymptote", ok, detail);
    }
    {
        const double frozen[] = {0.88622692545275801, 0.51659141926531162, 0.23413930248463022,
                                 0.089266576142951703};
        double worst = 0.0;
        for (int n = 1; n <= 4; ++n)
            worst = std::max(worst, std::fabs(hermite_table(n).eta() / frozen[n - 1] - 1.0));
        add("Hermite normalization eta_n", worst < 1e-8, "max relative deviation " + fmt(worst));
    }
    {
        double worst = 0.0;
        for (double a : {-0.3, 0.1, 0.4})
            for (double t : {0.05, 0.5})
                for (double s : {0.5, 3.0}) {
                    const LocalTimeParams p{a, 0.2, 0.0, t, s};
                    const double direct = local_time_density(p, 0.0).atom +
                                          integrate([&](double x) { return std::exp(-s * x) * local_time_density(p, x).density; },
                                                    0.0, 40.0, 64, 20);
                    worst = std::max(worst, std::fabs(direct - local_time_mgf(p)));
                }
        add("local-time MGF matches density transform", worst < 1e-8, "max deviation " + fmt(worst));
    }
    {
        // covariance of a closed unit bridge: t_i (1 - t_j), i <= j
        const int N = 8, M = 20000;
        std::vector<double> sxy(N * N, 0.0);
        for (int k = 0; k < M; ++k) {
            PathRng rng(RngStream{12345, static_cast<std::uint64_t>(k)});
            const UnitBridge b = generate_closed_bridge(N, 1.0, rng);
            for (int i = 1; i < N; ++i)
                for (int j = i; j < N; ++j) sxy[i * N + j] += b.samples[i] * b.samples[j];
        }
        double worst = 0.0;
        for (int i = 1; i < N; ++i)
            for (int j = i; j < N; ++j) {
                const double ti = double(i) / N, tj = double(j) / N;
                const double c = ti * (1 - tj), vi = ti * (1 - ti), vj = tj * (1 - tj);
                const double se = std::sqrt((vi * vj + c * c) / M);
                worst = std::max(worst, std::fabs(sxy[i * N + j] / M - c) / se);
            }
        add("bridge covariance", worst < 5.0, "max |z| = " + fmt(worst));
    }
    return items;
}

inline int cmd_selftest(const Flags& f, std::ostream& os) {
    std::function<double(double)> eta = [](double c) { return eta_te(c); };
    if (f.mutate == "eta-sign") eta = [](double c) { return -eta_te(c); };
    else require(f.mutate.empty(), "--mutate supports only eta-sign");
    const auto items = run_selftests(eta);
    bool all = true;
    for (const auto& it : items) {
        os << (it.pass ? "PASS " : "FAIL ") << it.name << " : " << it.detail << "\n";
        all = all && it.pass;
    }
    return all ? exit_ok : exit_selftest_failed;
}

/// Entry point shared by the executable and the tests; args exclude the program name.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    Flags f;
    CLI::App app{"Worldline Monte Carlo for Casimir and Casimir-Polder energies", "worldline"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    auto common = [&](CLI::App* s) {
        s->add_option("--paths", f.paths, "number of paths (1e6 accepted)");
        s->add_option("--steps", f.steps, "points per path N");
        s->add_option("--seed", f.seed, "master seed");
        s->add_option("--workers", f.workers, "worker threads (default WORLDLINE_WORKERS or all cores)");
        s->add_option("--epsilon", f.epsilon, "cp: averaging tolerance; plates: skip-condition tolerance");
        s->add_option("--out", f.out, "output file (default stdout)");
        s->add_option("--format", f.format, "csv or jsonl");
        s->add_flag("-v,--verbose", f.verbosity, "verbosity");
    };
    auto cp_opts = [&](CLI::App* s) {
        s->add_option("--chi", f.chi, "half-space susceptibility (inf allowed)");
        s->add_option("--order", f.order, "derivative order");
        s->add_option("--method", f.method, "fd or pa");
        s->add_option("--delta", f.delta, "finite-difference step delta/d");
        s->add_option("--pa-m", f.pa_m, "partial-averaging points m");
        s->add_option("--subaverages", f.subaverages, "endpoint subaverages per path");
        s->add_option("--sub-steps", f.sub_steps, "refinement of the segments around the path maximum");
        s->add_option("--t-nodes", f.t_nodes, "Gauss-Legendre nodes of the T integral");
        s->add_flag("--strict", f.strict, "reject m/N above the averaging-fraction bound");
    };
    auto plates_opts = [&](CLI::App* s) {
        s->add_option("--chi-hat", f.chi_hat, "plate strength chi_hat/d (inf allowed)");
        s->add_option("--pa-m", f.pa_m, "coarse step size");
        s->add_option("--pivot", f.pivot, "torque pivot x,y,z");
        s->add_option("--t-min", f.t_min, "T proposal cutoff in units of d^2");
    };

    auto* cp = app.add_subcommand("cp", "Casimir-Polder potential and derivatives");
    common(cp);
    cp_opts(cp);
    cp->get_option("--chi")->required();
    auto* plates = app.add_subcommand("plates", "two delta plates: energy, force, curvature, torque");
    common(plates);
    plates_opts(plates);
    plates->get_option("--chi-hat")->required();
    plates->add_option("--observable", f.observable, "energy, force, curvature or torque");
    auto* sw = app.add_subcommand("sweep", "convergence sweep with error-floor fit");
    common(sw);
    cp_opts(sw);
    sw->add_option("--chi-hat", f.chi_hat, "plate strength chi_hat/d");
    sw->add_option("--pivot", f.pivot, "unused for sweeps");
    sw->add_option("--t-min", f.t_min, "T proposal cutoff in units of d^2");
    sw->add_option("--observable", f.observable, "cp, energy, force or curvature");
    sw->add_option("--axis", f.axis, "pa-fraction or fd-delta");
    sw->add_option("--points", f.points, "comma-separated axis values")->required();
    sw->add_flag("--shared-seed", f.shared_seed, "common random numbers across points");
    sw->add_option("--fit-small", f.fit_small, "lo,hi of the small-side fit");
    sw->add_option("--fit-large", f.fit_large, "lo,hi of the large-side fit");
    auto* st = app.add_subcommand("selftest", "oracle and property self-tests");
    st->add_option("--mutate", f.mutate, "inject a known fault (eta-sign)");

    try {
        args = expand_config(std::move(args));
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return exit_config;
    } catch (const ParameterError& e) {
        err << "error: " << e.what() << "\n";
        return exit_config;
    }

    try {
        std::ofstream file;
        if (st->parsed()) return cmd_selftest(f, out);
        std::ostream& os = open_output(f.out, file, out);
        if (cp->parsed()) return cmd_cp(f, os);
        if (plates->parsed()) return cmd_plates(f, os);
        return cmd_sweep(f, os);
    } catch (const ParameterError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const SingularInputError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const std::out_of_range& e) {
        err << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return exit_numerical;
    }
}

} // namespace worldline::cli
