#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "worldline/errors.hpp"

namespace worldline {

/// Gauss-Legendre rule mapped to [0, 1].
struct GaussRule {
    std::vector<double> x;
    std::vector<double> w;
};

inline GaussRule make_gauss_legendre(int n) {
    require(n >= 1, "Gauss-Legendre rule needs at least one node");
    GaussRule r;
    r.x.resize(n);
    r.w.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int k = 1; k <= n; ++k) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
            }
            dp = n * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::fabs(dz) < 1e-16) break;
        }
        const double w = 2.0 / ((1.0 - z * z) * dp * dp);
        r.x[i] = 0.5 * (1.0 - z);
        r.x[n - 1 - i] = 0.5 * (1.0 + z);
        r.w[i] = r.w[n - 1 - i] = 0.5 * w;
    }
    return r;
}

/// Cached rule; the returned reference stays valid for the program lifetime.
inline const GaussRule& gauss_legendre(int n) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<GaussRule>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<GaussRule>(make_gauss_legendre(n));
    return *slot;
}

/// Composite Gauss-Legendre over [a, b] split into `panels` equal panels.
template <class F>
double integrate(F&& f, double a, double b, int panels = 16, int order = 20) {
    const auto& g = gauss_legendre(order);
    const double h = (b - a) / panels;
    double sum = 0.0;
    for (int p = 0; p < panels; ++p) {
        const double lo = a + p * h;
        for (int i = 0; i < order; ++i) sum += g.w[i] * f(lo + h * g.x[i]);
    }
    return sum * h;
}

} // namespace worldline
