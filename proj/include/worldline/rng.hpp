#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace worldline {

/// Identifies one independent deviate stream (one per path index).
struct RngStream {
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
};

inline std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Stateless 64-bit mix of two words, used to derive per-stream keys.
inline std::uint64_t hash_pair(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a;
    std::uint64_t h = splitmix64(x);
    x = h ^ (b * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
    splitmix64(x);
    return splitmix64(x);
}

namespace detail {

// 256-layer ziggurat for exp(-x^2/2), Doornik-style construction.
struct ZigguratTables {
    static constexpr int layers = 256;
    static constexpr double r = 3.6541528853610088;
    static constexpr double v = 0.00492867323399;
    std::array<double, layers + 1> x{};
    std::array<double, layers> ratio{};
    std::array<std::uint64_t, layers> k{};  // ratio * 2^52, for the integer fast path
    std::array<double, layers> w{};         // x / 2^52

    ZigguratTables() {
        double f = std::exp(-0.5 * r * r);
        x[0] = v / f;
        x[1] = r;
        x[layers] = 0.0;
        for (int i = 2; i < layers; ++i) {
            x[i] = std::sqrt(-2.0 * std::log(v / x[i - 1] + f));
            f = std::exp(-0.5 * x[i] * x[i]);
        }
        for (int i = 0; i < layers; ++i) {
            ratio[i] = x[i + 1] / x[i];
            k[i] = static_cast<std::uint64_t>(ratio[i] * 0x1.0p52);
            w[i] = x[i] * 0x1.0p-52;
        }
    }
};

inline const ZigguratTables& ziggurat() {
    static const ZigguratTables t;
    return t;
}

} // namespace detail

/// xoshiro256++ keyed by (seed, stream_id). The state depends only on the
/// key, so a path's deviates never depend on which worker generates them.
class PathRng {
public:
    explicit PathRng(RngStream s) : zig_(&detail::ziggurat()) {
        std::uint64_t x = hash_pair(s.seed, s.stream_id);
        for (auto& w : state_) w = splitmix64(x);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform on the open interval (0, 1).
    double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    /// Standard normal deviate.
    double normal() {
        const auto& z = *zig_;
        for (;;) {
            const std::uint64_t bits = next_u64();
            const int i = static_cast<int>(bits & 0xFF);
            // top 53 bits as a signed integer j in [-2^52, 2^52); u = j / 2^52
            const std::int64_t j = static_cast<std::int64_t>(bits) >> 11;
            const std::uint64_t aj = static_cast<std::uint64_t>(j < 0 ? -j : j);
            if (aj < z.k[i]) return static_cast<double>(j) * z.w[i];
            const double u = static_cast<double>(j) * 0x1.0p-52;
            if (i == 0) return tail(u < 0.0);
            const double x = u * z.x[i];
            const double f0 = std::exp(-0.5 * (z.x[i] * z.x[i] - x * x));
            const double f1 = std::exp(-0.5 * (z.x[i + 1] * z.x[i + 1] - x * x));
            if (f1 + uniform() * (f0 - f1) < 1.0) return x;
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    double tail(bool negative) {
        const double r = detail::ZigguratTables::r;
        double x, y;
        do {
            x = std::log(uniform()) / r;
            y = std::log(uniform());
        } while (-2.0 * y < x * x);
        return negative ? x - r : r - x;
    }

    std::array<std::uint64_t, 4> state_{};
    const detail::ZigguratTables* zig_;
};

} // namespace worldline
