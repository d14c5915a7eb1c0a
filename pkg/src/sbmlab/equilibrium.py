"""Equilibrium of the trained spherical Boltzmann machine.

Phase classification for arbitrary rank K, the outlier/overlap/condensation
order parameters, the evidence Phi and the posterior weight and sample
statistics.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, InconsistentPhase
from .spectral import SemicircleBulk, inverse_stieltjes, stieltjes_f, stieltjes_g

TIE_TOL = 1e-12
TIE_JITTER = 1e-12
LN_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class DataSpectrum:
    """Ordered nonzero covariance eigenvalues c_1 > ... > c_K.

    ``trace`` defaults to sum(c); it may differ when the spectrum is a
    perturbed source that no longer satisfies Trace C = K.
    """

    eigenvalues: tuple
    trace: float | None = None

    def __post_init__(self):
        c = tuple(float(v) for v in self.eigenvalues)
        if len(c) < 1:
            raise DomainError("spectrum needs at least one eigenvalue")
        if any(v <= 0 for v in c):
            raise DomainError(f"eigenvalues must be positive: {c}")
        if any(a <= b for a, b in zip(c, c[1:])):
            raise DomainError(f"eigenvalues must be strictly decreasing: {c}")
        object.__setattr__(self, "eigenvalues", c)
        if self.trace is None:
            object.__setattr__(self, "trace", float(sum(c)))

    @classmethod
    def from_values(cls, values, trace: float | None = None) -> "DataSpectrum":
        """Sort descending and split exact ties by a relative jitter of 1e-12."""
        c = sorted((float(v) for v in values), reverse=True)
        for i in range(1, len(c)):
            if c[i] >= c[i - 1]:
                c[i] = c[i - 1] * (1 - TIE_JITTER)
        return cls(tuple(c), trace)

    @property
    def K(self) -> int:
        return len(self.eigenvalues)

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.eigenvalues)


@dataclass(frozen=True)
class Hyper:
    gamma: float
    eta: float
    nu: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("gamma", "eta", "nu", "beta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be positive and finite, got {v}")

    @property
    def bulk(self) -> SemicircleBulk:
        return SemicircleBulk.from_hyper(self.gamma, self.eta)

    def with_(self, **kw) -> "Hyper":
        return replace(self, **kw)


class Phase(str, enum.Enum):
    EDGE_HU0 = "Edge_hu0"
    ALIGNED_H0 = "Aligned_h0"
    RANDOM_CONDENSED = "RandomCondensed"
    CONDENSED_EDGE = "CondensedEdge"
    CONDENSED_OUTLIER = "CondensedOutlier"

    @property
    def condensed(self) -> bool:
        return self in (Phase.RANDOM_CONDENSED, Phase.CONDENSED_EDGE, Phase.CONDENSED_OUTLIER)


@dataclass(frozen=True)
class EquilibriumSolution:
    phase: Phase
    lam: np.ndarray
    g: np.ndarray
    u_sq: np.ndarray
    h_sq: float
    mu: float
    d: int
    a: int
    chi: np.ndarray
    sigma: float
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def bulk(self) -> SemicircleBulk:
        return SemicircleBulk(self.sigma)

    @property
    def g1(self) -> float:
        return float(self.g[0])

    @property
    def overlap_sq(self) -> np.ndarray:
        """Sample/data overlaps m_k^2 = h^2 u_k^2."""
        return self.h_sq * self.u_sq


def _lt(a: float, b: float) -> bool:
    # inclusive within the tie tolerance: boundaries go to the condensed side
    return a < b + TIE_TOL * max(1.0, abs(b))


def coalesced_g1(c: np.ndarray, d: int, gamma: float, trace: float) -> float:
    """Stieltjes value of d coalesced condensed modes (force balance root)."""
    s = float(np.sum(c[d:]))
    return (s + np.sqrt(s * s + 4 * d * gamma * trace)) / (2 * trace)


def force_balance_residual(c: np.ndarray, d: int, gamma: float, trace: float, g1: float) -> float:
    return -(1 - g1) * trace - d * gamma / g1 + float(np.sum(c[:d]))


def hciz_saddle(lam_k: float, c_k: float, hyper: Hyper) -> tuple[float, float]:
    """Two-branch saddle (chi_k, u_k^2) of the rank-K spherical integral."""
    bulk = hyper.bulk
    if lam_k < bulk.edge * (1 - TIE_TOL):
        raise DomainError(f"lambda_k={lam_k} below the bulk edge {bulk.edge}")
    g = stieltjes_g(bulk, max(lam_k, bulk.edge))
    ec = hyper.eta * c_k
    if g <= ec:
        return float(lam_k), float(1 - g / ec)
    return float(inverse_stieltjes(bulk, ec)), 0.0


def saddle_mu(g1: float, lam1: float, bulk: SemicircleBulk) -> tuple[float, float]:
    """(mu, h^2) from the spherical saddle given g_1 = G(lambda_1)."""
    if g1 >= 1:
        if bulk.sigma > 1 + TIE_TOL:
            raise DomainError("g1 >= 1 needs gamma*eta >= 1; use the edge-condensed branch")
        return float(inverse_stieltjes(bulk, 1.0)), 0.0
    return float(lam1), float(1 - g1)


def _uncondensed(c_k: float, hyper: Hyper) -> tuple[float, float, float]:
    """(lambda_k, g_k, u_k^2) of a mode sitting at its uncondensed position."""
    gamma, eta = hyper.gamma, hyper.eta
    root = np.sqrt(gamma * eta)
    if eta * c_k >= root:
        return 1 / (eta * c_k) + c_k / gamma, gamma / c_k, 1 - gamma / (eta * c_k * c_k)
    return hyper.bulk.edge, root, 0.0


def phase_conditions(spectrum: DataSpectrum, hyper: Hyper) -> list[tuple[Phase, int]]:
    """Every (phase, d-or-a) whose defining inequalities hold.

    Used to test that the condition sets partition parameter space; the
    classifier itself takes the first hit in the documented order.
    """
    c = spectrum.c
    K, T = spectrum.K, spectrum.trace
    gamma, eta = hyper.gamma, hyper.eta
    root = np.sqrt(gamma * eta)
    hits: list[tuple[Phase, int]] = []

    g1u = _uncondensed(c[0], hyper)[1]
    if g1u > 1 + TIE_TOL:
        a = int(np.sum(eta * c * c > gamma))
        hits.append((Phase.ALIGNED_H0 if a else Phase.EDGE_HU0, a))

    for d in range(K, 0, -1):
        c_next = c[d] if d < K else 0.0
        g = coalesced_g1(c, d, gamma, T)
        upper = min(1.0, eta * c[d - 1], gamma / c_next if c_next > 0 else np.inf, root)
        if _lt(gamma / c[d - 1], g) and _lt(g, upper):
            hits.append((Phase.CONDENSED_OUTLIER, d))
        edge_window = _lt(eta * c_next, root) and _lt(root, min(1.0, eta * c[d - 1]))
        force = root * (eta * T - d) + eta * float(np.sum(c[:d]))
        if edge_window and _lt(force, eta * T):
            hits.append((Phase.CONDENSED_EDGE, d))

    if _lt(eta * c[0], root) and _lt(root, 1.0):
        hits.append((Phase.RANDOM_CONDENSED, 0))
    return hits


def classify_phase(spectrum: DataSpectrum, hyper: Hyper) -> EquilibriumSolution:
    hits = phase_conditions(spectrum, hyper)
    if not hits:
        raise InconsistentPhase(f"no phase condition holds for c={spectrum.eigenvalues}, {hyper}")
    # condensed phases carry the larger d; the h=0 entry, if any, comes first
    condensed = [h for h in hits if h[0].condensed]
    phase, n = condensed[0] if condensed else hits[0]
    return _populate(spectrum, hyper, phase, n)


def _populate(spectrum: DataSpectrum, hyper: Hyper, phase: Phase, n: int) -> EquilibriumSolution:
    c = spectrum.c
    K = spectrum.K
    bulk = hyper.bulk
    gamma, eta = hyper.gamma, hyper.eta
    root = np.sqrt(gamma * eta)
    lam = np.empty(K)
    g = np.empty(K)
    u = np.empty(K)
    d = a = 0

    if phase in (Phase.EDGE_HU0, Phase.ALIGNED_H0):
        for k in range(K):
            lam[k], g[k], u[k] = _uncondensed(c[k], hyper)
        a = n
        mu, h_sq = saddle_mu(g[0], lam[0], bulk)
    elif phase is Phase.RANDOM_CONDENSED:
        lam[:] = bulk.edge
        g[:] = root
        u[:] = 0.0
        mu, h_sq = bulk.edge, 1 - root
    elif phase is Phase.CONDENSED_EDGE:
        d = n
        lam[:] = bulk.edge
        g[:] = root
        u[:] = 0.0
        u[:d] = 1 - root / (eta * c[:d])
        mu, h_sq = bulk.edge, 1 - root
    else:
        d = n
        # the window admits g1 up to the edge within TIE_TOL
        g1 = min(coalesced_g1(c, d, gamma, spectrum.trace), root)
        lam1 = inverse_stieltjes(bulk, g1)
        lam[:d], g[:d] = lam1, g1
        u[:d] = 1 - g1 / (eta * c[:d])
        for k in range(d, K):
            lam[k], g[k], u[k] = _uncondensed(c[k], hyper)
        mu, h_sq = saddle_mu(g1, lam1, bulk)

    chi = np.empty(K)
    for k in range(K):
        chi[k] = lam[k] if k < d else hciz_saddle(lam[k], c[k], hyper)[0]
    u = np.clip(u, 0.0, 1.0)
    return EquilibriumSolution(
        phase=phase, lam=lam, g=g, u_sq=u, h_sq=float(h_sq), mu=float(mu),
        d=d, a=a, chi=chi, sigma=bulk.sigma,
    )


def log_partition_from_top(lam1: float, bulk: SemicircleBulk) -> float:
    """(1/N) ln Z for a spectrum with semicircle bulk and top eigenvalue lam1."""
    lam1 = max(lam1, bulk.edge)
    g1 = stieltjes_g(bulk, lam1)
    if g1 >= 1 and bulk.sigma <= 1:
        mu = inverse_stieltjes(bulk, 1.0)
    else:
        mu = lam1
    return 0.5 * (LN_2PI + mu - stieltjes_f(bulk, mu))


def log_partition_intensive(solution: EquilibriumSolution, hyper: Hyper | None = None) -> float:
    mu = solution.mu
    return 0.5 * (LN_2PI + mu - stieltjes_f(solution.bulk, mu))


def avg_energy_intensive(solution: EquilibriumSolution) -> float:
    return 0.5 * (1 - solution.mu)


def entropy_intensive(solution: EquilibriumSolution) -> float:
    return 0.5 * (LN_2PI + 1 - stieltjes_f(solution.bulk, solution.mu))


def evidence_phi(spectrum: DataSpectrum, hyper: Hyper, solution: EquilibriumSolution | None = None) -> float:
    """Per-N log evidence Phi(C), with per-mode rows for k > d and k <= d."""
    sol = solution if solution is not None else classify_phase(spectrum, hyper)
    c = spectrum.c
    gamma, eta = hyper.gamma, hyper.eta
    ge = gamma * eta
    bulk = sol.bulk
    mu = sol.mu
    phi = 0.5 * spectrum.K * np.log(ge) - 0.5 * eta * (mu - stieltjes_f(bulk, mu)) * spectrum.trace
    g1 = sol.g1
    for k in range(spectrum.K):
        if k < sol.d:
            phi += (-0.5 - ge / (4 * g1 * g1) + c[k] * g1 / (2 * gamma)
                    + eta * c[k] / (2 * g1) - 0.5 * np.log(g1 * eta * c[k]))
        else:
            phi += eta * c[k] ** 2 / (4 * gamma) - 0.5 * np.log(ge)
    return float(phi)


def weight_mean_coefficients(spectrum: DataSpectrum, hyper: Hyper,
                             solution: EquilibriumSolution | None = None) -> np.ndarray:
    """w_k with <W> = sum_k w_k (c_k c_k^T - I) / N."""
    sol = solution if solution is not None else classify_phase(spectrum, hyper)
    return (hyper.eta * sol.chi - 1 / spectrum.c) / hyper.eta


def sample_second_moment_coefficients(spectrum: DataSpectrum, hyper: Hyper,
                                      solution: EquilibriumSolution | None = None) -> np.ndarray:
    """b_k with (K/N) <<x x^T>> = C - sum_k b_k (c_k c_k^T - I) / N."""
    return hyper.gamma * weight_mean_coefficients(spectrum, hyper, solution)


def sample_overlaps_sq(spectrum: DataSpectrum, hyper: Hyper,
                       solution: EquilibriumSolution | None = None) -> np.ndarray:
    """Posterior-predictive <(c_k . x / N)^2> at leading order."""
    b = sample_second_moment_coefficients(spectrum, hyper, solution)
    return (spectrum.c - b) / spectrum.K


def gaussian_baseline_kl(omega_star: float, hyper: Hyper) -> float:
    w = omega_star
    return 0.5 * (w - np.log(w) - 1 + 1 / (2 * hyper.gamma * hyper.eta))
