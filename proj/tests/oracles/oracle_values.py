"""Regenerates the constants in tests/oracle_values.hpp (mpmath)."""
from mpmath import mp, mpf, quad, log, exp, pi, inf, sqrt, asinh, erfc, hermite, diff

mp.dps = 30


def eta(c):
    c = mpf(c)
    return mpf(1) / 6 + 1 / c - sqrt(1 + c) / (2 * c) - asinh(sqrt(c)) / (2 * c ** 1.5)


def gamma(u):
    u = mpf(u)
    f = lambda xi, p: xi**2 * p * log(1 - (xi * u / (2 * p + xi * u)) ** 2 * exp(-2 * p * xi))
    return -180 / pi**4 * quad(f, [0, 0.1, 1, 5, inf], [1, 2, 10, inf])


def mgf(a, b, d, t, s):
    A = abs(a - d) + abs(b - d)
    return 1 - sqrt(pi * t / 2) * s * exp(((b - a) ** 2 + s**2 * t**2 + 2 * s * t * A) / (2 * t)) * erfc(
        (A + s * t) / sqrt(2 * t))


print("eta_1", eta(1), "eta_100", eta(100), "eta_ratio_1em3", eta(mpf("1e-3")) / mpf("1e-3"))
for u in ("1e-3", "1e3"):
    print("gamma", u, gamma(u))
g0, g1, g2 = gamma(1), diff(gamma, 1), diff(gamma, 1, 2)
print("gamma_1", g0, "d1", g1, "d2", g2)
print("force_norm_1", g0 + g1 / 3, "curvature_norm_1", g0 + 2 * g1 / 3 + g2 / 12)
for n in range(1, 13):
    # split at the positive roots so every piece is smooth
    roots = sorted(r.real for r in polyroots(taylor(lambda z: hermite(n, z), 0, n)[::-1], maxsteps=200, extraprec=200))
    inv = 2 / sqrt(pi) * quad(lambda z: abs(hermite(n, z)) * exp(-z * z), [0] + [r for r in roots if r > 0] + [inf])
    print("eta_n", n, 1 / inv)
a, b, d, t, s = map(mpf, ("0.2", "0.3", "0.0", "0.05", "1.0"))
print("mgf", mgf(a, b, d, t, s), "dd", diff(lambda x: mgf(a, b, x, t, s), d), "dd2", diff(lambda x: mgf(a, b, x, t, s), d, 2))
print("mgf_origin", mgf(0, 0, 0, 1, 1), "erfc_1", erfc(1))
