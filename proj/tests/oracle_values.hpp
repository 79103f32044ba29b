#pragma once

// Reference values computed with mpmath at 20-30 digits by tests/oracles/oracle_values.py.

namespace oracle {

inline constexpr double eta_1 = 0.0188730919703476;
inline constexpr double eta_100 = 0.124918177085913;
inline constexpr double eta_ratio_1em3 = 0.0249910757663650;  // eta(1e-3)/1e-3

inline constexpr double gamma_1 = 0.023191825843837910;
inline constexpr double gamma_d1_1 = 0.029082036654462905;
inline constexpr double gamma_d2_1 = -8.6761659926616259e-4;
inline constexpr double gamma_1em3 = 6.9171854885411542e-8;
inline constexpr double gamma_1e3 = 0.44760425760873295;
inline constexpr double force_norm_1 = 0.032885838061992212;
inline constexpr double curvature_norm_1 = 0.042507548896874333;

// eta_n = (2/sqrt(pi) int_0^inf |H_n(z)| e^{-z^2} dz)^{-1}, n = 1..12
inline constexpr double eta_n[12] = {
    0.88622692545275801,  0.51659141926531162,   0.23413930248463022,   0.089266576142951703,
    0.029911020015766149, 0.0090477450647535699, 0.0025147556403811202, 6.5028050207986881e-4,
    1.5789103806676568e-4, 3.6253648972151897e-5, 7.9165782078034739e-6, 1.6516375414791777e-6};

// local-time MGF at (a, b, d, t, s) = (0.2, 0.3, 0, 0.05, 1) and its level derivatives
inline constexpr double mgf_value = 0.99271900908620477;
inline constexpr double mgf_dd = -0.16687392475123454;
inline constexpr double mgf_dd2 = -3.294970282074031;
inline constexpr double mgf_origin = 0.34432045758120153;  // a = b = d = 0, t = s = 1
inline constexpr double erfc_1 = 0.157299207050285;

} // namespace oracle
