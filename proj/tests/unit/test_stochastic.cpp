#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "oracle_values.hpp"
#include "worldline/stochastic.hpp"

using namespace worldline;

TEST(PathRng, StreamsAreKeyedNotSequential) {
    PathRng a(RngStream{7, 3}), b(RngStream{7, 3}), c(RngStream{7, 4}), d(RngStream{8, 3});
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
    EXPECT_NE(x, d.next_u64());
}

TEST(PathRng, UniformIsOpenInterval) {
    PathRng r(RngStream{1, 0});
    for (int i = 0; i < 100000; ++i) {
        const double u = r.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(PathRng, NormalMoments) {
    PathRng r(RngStream{2, 0});
    const int n = 1000000;
    double s1 = 0, s2 = 0, s4 = 0, tail = 0;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        s1 += z;
        s2 += z * z;
        s4 += z * z * z * z;
        tail += std::fabs(z) > 3.0;
    }
    EXPECT_NEAR(s1 / n, 0.0, 5 * std::sqrt(1.0 / n));
    EXPECT_NEAR(s2 / n, 1.0, 5 * std::sqrt(2.0 / n));
    EXPECT_NEAR(s4 / n, 3.0, 5 * std::sqrt(96.0 / n));
    const double p3 = std::erfc(3.0 / std::sqrt(2.0));
    EXPECT_NEAR(tail / n, p3, 5 * std::sqrt(p3 / n));
}

TEST(Bridge, EndpointsPinned) {
    PathRng r(RngStream{3, 0});
    const UnitBridge b = generate_open_bridge(0.3, -0.2, 50, 2.0, r);
    EXPECT_EQ(b.samples.front(), 0.3);
    EXPECT_EQ(b.samples.back(), -0.2);
    EXPECT_EQ(b.samples.size(), 51u);
    EXPECT_DOUBLE_EQ(b.dt(), 0.04);
    PathRng r2(RngStream{3, 1});
    const UnitBridge c = generate_closed_bridge(2, 1.0, r2);
    EXPECT_EQ(c.samples[0], 0.0);
    EXPECT_EQ(c.samples[2], 0.0);
}

TEST(Bridge, InvalidArguments) {
    PathRng r(RngStream{3, 0});
    EXPECT_THROW(generate_closed_bridge(1, 1.0, r), ParameterError);
    EXPECT_THROW(generate_open_bridge(0, 0, 4, 0.0, r), ParameterError);
    const UnitBridge b = generate_closed_bridge(4, 1.0, r);
    EXPECT_THROW(refine_segment(b, 4, 8, r), std::out_of_range);
    EXPECT_THROW(refine_segment(b, -1, 8, r), std::out_of_range);
}

TEST(Bridge, ClosedCovarianceGrid) {
    const int N = 16, M = 100000;
    const double T = 1.5;
    std::vector<double> sxy(N * N, 0.0);
    for (int k = 0; k < M; ++k) {
        PathRng r(RngStream{11, static_cast<std::uint64_t>(k)});
        const UnitBridge b = generate_closed_bridge(N, T, r);
        for (int i = 1; i < N; ++i)
            for (int j = i; j < N; ++j) sxy[i * N + j] += b.samples[i] * b.samples[j];
    }
    for (int i = 1; i < N; i += 3)
        for (int j = i; j < N; j += 2) {
            const double ti = T * i / N, tj = T * j / N;
            const double c = ti * (T - tj) / T, vi = ti * (T - ti) / T, vj = tj * (T - tj) / T;
            EXPECT_NEAR(sxy[i * N + j] / M, c, 4.5 * std::sqrt((vi * vj + c * c) / M)) << i << "," << j;
        }
}

TEST(Bridge, OpenMeanLine) {
    const int N = 10, M = 50000;
    std::vector<double> s(N + 1, 0.0);
    for (int k = 0; k < M; ++k) {
        PathRng r(RngStream{12, static_cast<std::uint64_t>(k)});
        const UnitBridge b = generate_open_bridge(1.0, -1.0, N, 1.0, r);
        for (int j = 0; j <= N; ++j) s[j] += b.samples[j];
    }
    for (int j = 1; j < N; ++j) {
        const double t = double(j) / N;
        EXPECT_NEAR(s[j] / M, 1.0 - 2.0 * t, 4.5 * std::sqrt(t * (1 - t) / M));
    }
}

TEST(Bridge, FillMatchesGenerate) {
    PathRng a(RngStream{13, 0}), b(RngStream{13, 0});
    const UnitBridge br = generate_open_bridge(0.2, 0.5, 32, 0.5, a);
    std::vector<double> out(33);
    fill_open_bridge(out.data(), 0.2, 0.5, BridgeCoefficients(32), 0.5 / 32, b);
    for (int j = 0; j <= 32; ++j) EXPECT_NEAR(out[j], br.samples[j], 1e-14);
}

TEST(Bridge, RefinedSegmentPinnedToParent) {
    PathRng r(RngStream{14, 0});
    const UnitBridge b = generate_closed_bridge(10, 2.0, r);
    const RefinedSegment s = refine_segment(b, 3, 8, r);
    EXPECT_EQ(s.sub_samples.front(), b.samples[3]);
    EXPECT_EQ(s.sub_samples.back(), b.samples[4]);
    EXPECT_DOUBLE_EQ(s.sub_duration, 0.2);
}

TEST(Bridge, PrefixCompletionEndsAtTarget) {
    PathRng r(RngStream{15, 0});
    const UnitBridge tail = complete_path_after_prefix(0.4, 0.0, 6, 20, 1.0, r);
    EXPECT_EQ(tail.samples.front(), 0.4);
    EXPECT_EQ(tail.samples.back(), 0.0);
    EXPECT_DOUBLE_EQ(tail.dt(), 0.05);
    EXPECT_THROW(complete_path_after_prefix(0, 0, 21, 20, 1.0, r), ParameterError);
}

TEST(VanDerCorput, KnownValues) {
    EXPECT_EQ(van_der_corput(0), 0.0);
    EXPECT_EQ(van_der_corput(1), 0.5);
    EXPECT_EQ(van_der_corput(2), 0.25);
    EXPECT_EQ(van_der_corput(3), 0.75);
    EXPECT_NEAR(van_der_corput(5, 3), 7.0 / 9.0, 1e-15);
    EXPECT_THROW(van_der_corput(1, 1), ParameterError);
}

TEST(VanDerCorput, LowDiscrepancy) {
    // first 2^k points fill the dyadic cells exactly once
    std::vector<int> cells(64, 0);
    for (std::uint64_t i = 0; i < 64; ++i) ++cells[static_cast<int>(van_der_corput(i) * 64)];
    for (int c : cells) EXPECT_EQ(c, 1);
}

TEST(HermiteTable, NormalizationMatchesOracle) {
    for (int n = 1; n <= 12; ++n) EXPECT_NEAR(hermite_table(n).eta() / oracle::eta_n[n - 1], 1.0, 1e-8) << n;
}

TEST(HermiteTable, QuantileInvertsCdf) {
    const HermiteTable& t = hermite_table(3);
    // the density vanishes linearly at the root z = 0, so the median is only resolved to ~sqrt(eps)
    EXPECT_NEAR(t.quantile(0.5), 0.0, 1e-7);
    // H_3 roots are 0 and +-sqrt(3/2); integrate piecewise between them
    const double r = std::sqrt(1.5);
    auto cdf = [&](double z) {
        double lo = -HermiteTable::z_max, total = 0.0;
        for (double edge : {-r, 0.0, r, HermiteTable::z_max}) {
            const double hi = std::min(edge, z);
            if (hi > lo) total += integrate([&](double x) { return t.density(x); }, lo, hi, 32, 20);
            lo = std::max(lo, edge);
        }
        return total / t.total_mass();
    };
    for (double u : {0.01, 0.2, 0.37, 0.8, 0.999}) EXPECT_NEAR(cdf(t.quantile(u)), u, 1e-10) << u;
}

TEST(HermiteTable, SamplesMatchMoments) {
    // E[z^2] under |H_1| e^{-z^2} is 1
    const HermiteTable& t = hermite_table(1);
    PathRng r(RngStream{16, 0});
    const int n = 200000;
    double s2 = 0.0, d2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = t.quantile(r.uniform());
        s2 += z * z;
        const double w = sample_hermite_z_direct(1, r);
        d2 += w * w;
    }
    EXPECT_NEAR(s2 / n, 1.0, 5 * std::sqrt(1.0 / n));
    EXPECT_NEAR(d2 / n, 1.0, 5 * std::sqrt(1.0 / n));
}

TEST(HermiteTable, DirectSamplerOrderTwo) {
    // E[z^2] under |4z^2-2| e^{-z^2}, normalized: computed by quadrature
    const HermiteTable& t = hermite_table(2);
    const double m2 = integrate([&](double x) { return x * x * t.density(x); }, -9.0, 9.0, 64, 20) / t.total_mass();
    PathRng r(RngStream{17, 0});
    const int n = 200000;
    double s = 0.0, s4 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = sample_hermite_z_direct(2, r);
        s += z * z;
        s4 += z * z * z * z;
    }
    const double var = s4 / n - (s / n) * (s / n);
    EXPECT_NEAR(s / n, m2, 5 * std::sqrt(var / n));
    EXPECT_THROW(sample_hermite_z_direct(3, r), ParameterError);
}

TEST(HermiteEndpoint, SignedMeanIsEta) {
    // E[sgn(H_1(z)) z] under |H_1| e^{-z^2} equals eta_1
    PathRng r(RngStream{18, 0});
    const int n = 200000, m = 4;
    const double x0 = 0.3, dT = 0.01, scale = std::sqrt(m * dT);
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const HermiteEndpointDraw d = sample_hermite_endpoint(x0, 1, m, dT, r);
        const double v = d.sign * (d.xbar - x0) / scale / oracle::eta_n[0];
        s += v;
        s2 += v * v;
    }
    const double mean = s / n, se = std::sqrt((s2 / n - mean * mean) / n);
    EXPECT_NEAR(mean, 1.0, 5 * se);
}

TEST(HermiteEndpoint, HalfSpreadVariance) {
    PathRng r(RngStream{19, 0});
    const int n = 100000, m = 10, N = 100;
    const double dT = 0.01;
    double s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double h = sample_hermite_endpoint(0.0, 2, m, dT, r, N).half_spread;
        s2 += h * h;
    }
    const double var = m * (1.0 - 2.0 * m / N) * dT / 2.0;
    EXPECT_NEAR(s2 / n, var, 5 * var * std::sqrt(2.0 / n));
    EXPECT_THROW(sample_hermite_endpoint(0.0, 1, 50, dT, r, N), ParameterError);
}
