"""Independent numerical oracles shared by the test modules."""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq


def semicircle_quantiles(sigma: float, n: int) -> np.ndarray:
    """Midpoint quantiles of the semicircle law, descending."""

    def cdf(x):
        t = x / (2 * sigma)
        return 0.5 + (t * np.sqrt(1 - t * t) + np.arcsin(t)) / np.pi

    p = (np.arange(n) + 0.5) / n
    q = [brentq(lambda x: cdf(x) - pk, -2 * sigma, 2 * sigma, xtol=1e-15) for pk in p]
    return np.sort(np.array(q))[::-1]


def ln_z_contour(lams: np.ndarray) -> float:
    """(1/N) ln of the sphere integral of exp(x.Wx/2), ||x||^2 = N, from W's spectrum.

    Exact Bromwich representation: Z = (1/4 pi i) int dmu e^{N mu/2} prod (2 pi/(mu - l_i))^{1/2},
    integrated along the vertical line through the real saddle.
    """
    lams = np.asarray(lams, dtype=float)
    N = len(lams)
    lmax = lams.max()
    f = lambda m: N / 2 - 0.5 * np.sum(1 / (m - lams))
    lo = lmax + 1e-13 * max(1.0, abs(lmax))
    c = brentq(f, lo, lmax + 10 + N, xtol=1e-15) if f(lo) < 0 else lo
    d = c - lams
    a0 = N * c / 2 - 0.5 * np.sum(np.log(d))

    def integrand(y):
        mod = 0.25 * np.sum(np.log1p((y / d) ** 2))
        phase = N * y / 2 - 0.5 * np.sum(np.arctan(y / d))
        return np.exp(-mod) * np.cos(phase)

    width = 1 / np.sqrt(0.5 * np.sum(1 / d**2))
    total, x0, step = 0.0, 0.0, width
    while True:
        v, _ = quad(integrand, x0, x0 + step, limit=500, epsabs=1e-15, epsrel=1e-11)
        total += v
        x0 += step
        step *= 1.5
        if 0.25 * np.sum(np.log1p((x0 / d) ** 2)) > 40:
            break
    total *= 2
    return (a0 + 0.5 * N * np.log(2 * np.pi) + np.log(total / (4 * np.pi))) / N
