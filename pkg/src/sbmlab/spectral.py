"""Semicircle bulk primitives: density, G, F, B and the inverse of G."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

# relative slack for points that sit on the edge up to rounding
_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class SemicircleBulk:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")

    @classmethod
    def from_hyper(cls, gamma: float, eta: float) -> "SemicircleBulk":
        return cls(1.0 / np.sqrt(gamma * eta))

    @property
    def edge(self) -> float:
        return 2.0 * self.sigma


def density(bulk: SemicircleBulk, lam):
    s = bulk.sigma
    lam = np.asarray(lam, dtype=float)
    out = np.sqrt(np.clip(4 * s * s - lam * lam, 0.0, None)) / (2 * np.pi * s * s)
    return out if out.ndim else float(out)


def _check_z(bulk: SemicircleBulk, z):
    z = np.asarray(z, dtype=float)
    if np.any(z < bulk.edge * (1 - _EDGE_TOL)):
        raise DomainError(f"z must be >= 2*sigma={bulk.edge}, got {np.min(z)}")
    return z


def stieltjes_g(bulk: SemicircleBulk, z):
    """G(z) on the real axis above the bulk; G(2 sigma) = 1/sigma."""
    s = bulk.sigma
    z = _check_z(bulk, z)
    r = z / s
    # points within a few ulps of the edge are the edge
    gap = np.where(r - 2.0 <= 16 * np.finfo(float).eps, 0.0, (r - 2.0) * (r + 2.0))
    disc = np.sqrt(gap)
    # rationalised form avoids cancellation at large z
    g = 2.0 / (s * (r + disc))
    return g if g.ndim else float(g)


def stieltjes_f(bulk: SemicircleBulk, z):
    """F(z) = sigma^2 G^2 / 2 - ln G, an antiderivative of G."""
    g = np.asarray(stieltjes_g(bulk, z))
    f = 0.5 * bulk.sigma**2 * g * g - np.log(g)
    return f if f.ndim else float(f)


def stieltjes_b(bulk: SemicircleBulk, z):
    z = _check_z(bulk, z)
    b = z * np.asarray(stieltjes_g(bulk, z)) - 1.0
    return b if b.ndim else float(b)


def inverse_stieltjes(bulk: SemicircleBulk, a):
    """Unique z >= 2 sigma with G(z) = a, for 0 < a <= 1/sigma."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0) or np.any(a > (1 + _EDGE_TOL) / bulk.sigma):
        raise DomainError(f"a must lie in (0, 1/sigma={1 / bulk.sigma}], got {a}")
    a = np.minimum(a, 1.0 / bulk.sigma)
    z = 1.0 / a + bulk.sigma**2 * a
    return z if z.ndim else float(z)
