"""Rank-one teacher/student metrics.

Four KL divergences between the teacher and a K=2 student (typical posterior
sample or posterior predictive), sampling-temperature tuning, the
double-descent threshold, the tempered-posterior classifiers, KLs along
training and the covariance-matching inverse temperature. Everything is
intensive (per N) and leading order in N.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .equilibrium import (
    LN_2PI,
    DataSpectrum,
    EquilibriumSolution,
    Hyper,
    Phase,
    classify_phase,
    evidence_phi,
    log_partition_from_top,
)
from .errors import (
    ApproximationDomain,
    CubicDegeneracy,
    DegenerateDenominator,
    DomainError,
    NoFiniteTime,
    RootBracketFailure,
)
from .spectral import SemicircleBulk, stieltjes_f, stieltjes_g

SCHEMA_VERSION = 1
OMEGA_0 = 1 + 1 / math.sqrt(2)
OMEGA_2 = (3 + math.sqrt(3)) / 2
CUBIC_TOL = 1e-12
BETA_BRACKET = (1e-3, 1e2)
BETA_TOL = 1e-8


@dataclass(frozen=True)
class Teacher:
    omega_star: float

    def __post_init__(self):
        if not (np.isfinite(self.omega_star) and self.omega_star > 1):
            raise DomainError(f"omega_star must exceed 1, got {self.omega_star}")

    @property
    def c1(self) -> float:
        return 2 - 1 / self.omega_star

    @property
    def c2(self) -> float:
        return 1 / self.omega_star

    @property
    def overlap_sq(self) -> float:
        """Squared overlap between the top data direction and the teacher."""
        return 1 - 1 / (2 * self.omega_star - 1)

    @property
    def spectrum(self) -> DataSpectrum:
        return DataSpectrum((self.c1, self.c2))

    @property
    def g_map(self) -> float:
        w = self.omega_star
        return (2 * w - 1) / (2 * w * (w - 1))

    def log_partition(self) -> float:
        w = self.omega_star
        return 0.5 * (LN_2PI + 1) + 0.5 * (w - 1 - math.log(w))

    def entropy(self) -> float:
        return 0.5 * (LN_2PI + 1) - 0.5 * math.log(self.omega_star)


def _solve(teacher: Teacher, hyper: Hyper) -> EquilibriumSolution:
    return classify_phase(teacher.spectrum, hyper)


def _f_mu(sol: EquilibriumSolution) -> float:
    return float(stieltjes_f(sol.bulk, sol.mu))


def teacher_energy_pp(teacher: Teacher, hyper: Hyper, sol: EquilibriumSolution | None = None) -> float:
    """Teacher energy averaged over the posterior predictive."""
    sol = sol or _solve(teacher, hyper)
    w = teacher.omega_star
    gamma, eta = hyper.gamma, hyper.eta
    spike = gamma / eta * w * w / (2 * w - 1) ** 2 * (eta * teacher.c1 * sol.chi[0] - 1)
    return (spike - 1) * (w - 1) / 2


def student_energy_teacher(teacher: Teacher, hyper: Hyper, sol: EquilibriumSolution | None = None) -> float:
    """Student energy averaged over teacher samples and posterior weights."""
    sol = sol or _solve(teacher, hyper)
    w = teacher.omega_star
    return -(teacher.c1 * sol.chi[0] - 1 / hyper.eta) * (w - 1) ** 2 / (2 * w - 1) ** 2


def kl_reverse_typical(teacher: Teacher, hyper: Hyper) -> float:
    sol = _solve(teacher, hyper)
    w = teacher.omega_star
    return teacher_energy_pp(teacher, hyper, sol) + 0.5 * (w - 1 - math.log(w) + _f_mu(sol))


def kl_forward_typical(teacher: Teacher, hyper: Hyper) -> float:
    sol = _solve(teacher, hyper)
    w = teacher.omega_star
    return student_energy_teacher(teacher, hyper, sol) + 0.5 * (sol.mu - _f_mu(sol)) - 0.5 * (1 - math.log(w))


def _cubic_coefficients(m1: float, m2: float, c1: float, c2: float, eta: float) -> np.ndarray:
    P = np.polynomial.polynomial
    x = np.array([0.0, 1.0])
    a = np.array([-c1, 1.0])
    b = np.array([-c2, 1.0])
    poly = P.polyadd(m1 * P.polymul(x, b), m2 * P.polymul(x, a))
    poly = P.polyadd(poly, P.polymul(np.array([1 - m1 - m2, -eta]), P.polymul(a, b)))
    return poly  # ascending powers


def solve_cubic(coef_ascending) -> np.ndarray:
    """Real roots of a cubic with three real roots, trigonometric form, descending."""
    d, c, b, a = (float(v) for v in coef_ascending)
    b, c, d = b / a, c / a, d / a
    p = c - b * b / 3
    q = 2 * b**3 / 27 - b * c / 3 + d
    disc = -(4 * p**3 + 27 * q * q)
    scale = max(1.0, abs(b), abs(c), abs(d)) ** 2
    if p >= 0 or disc < -CUBIC_TOL * scale**3:
        raise CubicDegeneracy(f"cubic does not have three distinct real roots (disc={disc:.3g})")
    if abs(disc) <= CUBIC_TOL * scale**3:
        roots = np.roots([1.0, b, c, d]).real
    else:
        r = 2 * math.sqrt(-p / 3)
        arg = 3 * q / (p * r)
        phi = math.acos(max(-1.0, min(1.0, arg)))
        roots = r * np.cos((phi - 2 * math.pi * np.arange(3)) / 3) - b / 3
    roots = np.sort(roots)[::-1]
    if np.any(np.diff(roots) >= -1e-9 * max(1.0, float(np.max(np.abs(roots))))):
        raise CubicDegeneracy(f"cubic roots coalesce: {roots}")
    return roots


@dataclass(frozen=True)
class PerturbedSpectrum:
    m_sq: np.ndarray
    tilde_c: np.ndarray


def pp_perturbed_spectrum(teacher: Teacher, hyper: Hyper, sol: EquilibriumSolution | None = None) -> PerturbedSpectrum:
    """Overlaps of a posterior-predictive sample and the spectrum of C_x."""
    sol = sol or _solve(teacher, hyper)
    c = teacher.spectrum.c
    m_sq = c / 2 - hyper.gamma / 2 * (sol.chi - 1 / (hyper.eta * c))
    m_sq = np.clip(m_sq, 0.0, None)
    roots = solve_cubic(_cubic_coefficients(m_sq[0], m_sq[1], c[0], c[1], hyper.eta))
    return PerturbedSpectrum(m_sq, roots)


def _phi(values, hyper: Hyper) -> float:
    values = np.asarray(values, dtype=float)
    return evidence_phi(DataSpectrum.from_values(values, trace=float(np.sum(values))), hyper)


def lambda_pm(teacher: Teacher, eta: float) -> tuple[float, float]:
    c1, c2 = teacher.c1, teacher.c2
    s = math.sqrt((c1 - 1 / eta) ** 2 + 2 / eta * (c1 - c2) ** 2)
    return 0.5 * (c1 + 1 / eta + s), 0.5 * (c1 + 1 / eta - s)


def kl_reverse_pp(teacher: Teacher, hyper: Hyper) -> float:
    sol = _solve(teacher, hyper)
    w = teacher.omega_star
    pert = pp_perturbed_spectrum(teacher, hyper, sol)
    phi_gap = _phi(pert.tilde_c, hyper) - evidence_phi(teacher.spectrum, hyper, sol)
    return teacher_energy_pp(teacher, hyper, sol) + 0.5 * (w - math.log(w)) + phi_gap


def kl_forward_pp(teacher: Teacher, hyper: Hyper) -> float:
    lp, lm = lambda_pm(teacher, hyper.eta)
    phi_c = evidence_phi(teacher.spectrum, hyper)
    return -0.5 * (1 - math.log(teacher.omega_star)) - _phi((lp, lm, teacher.c2), hyper) + phi_c


def pp_entropy(teacher: Teacher, hyper: Hyper) -> float:
    """Posterior-predictive entropy per N, including the (1/2) ln 2 pi base measure."""
    sol = _solve(teacher, hyper)
    pert = pp_perturbed_spectrum(teacher, hyper, sol)
    return 0.5 * LN_2PI + evidence_phi(teacher.spectrum, hyper, sol) - _phi(pert.tilde_c, hyper)


def typical_entropy(teacher: Teacher, hyper: Hyper) -> float:
    """Entropy of a typical posterior sample P_W."""
    sol = _solve(teacher, hyper)
    return 0.5 * (LN_2PI + 1 - _f_mu(sol))


# --- double descent ----------------------------------------------------------


def dd_gamma_of_g(g1: float, omega_star: float) -> float:
    return 2 * g1 * g1 - g1 / omega_star


def dd_eta_floor(g1: float, omega_star: float) -> float:
    """Smallest eta for which the top mode is an outlier at this g1."""
    return omega_star * g1 / (2 * omega_star * g1 - 1)


def dd_reverse_kl(g1: float, omega_star: float, eta: float) -> float:
    """Typical reverse KL on the aligned condensed branch, parametrised by g1."""
    w = omega_star
    return (
        0.5 * (w - 1 - math.log(w * g1))
        - w * (w - 1) * (1 - g1) / (2 * w - 1) * (1 - w * g1 / (eta * (2 * w - 1)))
        + w * g1 / (4 * eta * (2 * w * g1 - 1))
    )


def dd_reverse_kl_slope(g1: float, omega_star: float, eta: float) -> float:
    """d/dg1 of dd_reverse_kl, split into its MAP part and its 1/eta part."""
    w = omega_star
    g_map = (2 * w - 1) / (2 * w * (w - 1))
    first = w * (w - 1) * (g1 - g_map) / (g1 * (2 * w - 1))
    second = w * w * (w - 1) * (1 - 2 * g1) / (2 * w - 1) ** 2 - w / (4 * (2 * w * g1 - 1) ** 2)
    return first + second / eta


def _eta_dd_objective(g1: float, w: float, g_map: float) -> float:
    inner = (2 * w * g1 - 1) / ((2 * w - 1) * (g1 - g_map)) * (
        (2 * g1 - 1) + (2 * w - 1) ** 2 / (4 * w * (w - 1) * (2 * w * g1 - 1) ** 2)
    )
    return w * g1 / (2 * w * g1 - 1) * max(1.0, inner)


def eta_dd(omega_star: float) -> float:
    """Threshold eta above which the typical reverse KL has a first minimum."""
    w = float(omega_star)
    if w <= OMEGA_0:
        return math.inf
    g_map = (2 * w - 1) / (2 * w * (w - 1))
    lo, hi = g_map, 1.0
    grid = np.linspace(lo, hi, 2002)[1:-1]
    vals = np.array([_eta_dd_objective(g, w, g_map) for g in grid])
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(lambda g: _eta_dd_objective(g, w, g_map), bounds=(a, b), method="bounded",
                          options={"xatol": 1e-12})
    return float(min(res.fun, vals[i]))


# --- sampling-temperature tuning ----------------------------------------------


def _tuned_log_partition(beta: float, sol: EquilibriumSolution) -> float:
    bulk = SemicircleBulk(beta * sol.sigma)
    return log_partition_from_top(beta * float(sol.lam[0]), bulk)


def _tuned_phase(beta: float, sol: EquilibriumSolution) -> Phase:
    bulk = SemicircleBulk(beta * sol.sigma)
    lam1 = max(beta * float(sol.lam[0]), bulk.edge)
    condensed = stieltjes_g(bulk, lam1) < 1
    aligned = sol.u_sq[0] > 0
    outlier = sol.lam[0] > sol.bulk.edge * (1 + 1e-12)
    if not condensed:
        return Phase.ALIGNED_H0 if aligned else Phase.EDGE_HU0
    if not aligned:
        return Phase.RANDOM_CONDENSED
    return Phase.CONDENSED_OUTLIER if outlier else Phase.CONDENSED_EDGE


def kl_forward_tempered(beta: float, teacher: Teacher, hyper: Hyper, sol: EquilibriumSolution | None = None) -> float:
    """Forward KL of the tempered student P_{beta W}, averaged over posterior W."""
    sol = sol or _solve(teacher, hyper)
    energy = student_energy_teacher(teacher, hyper, sol)
    return beta * energy + _tuned_log_partition(beta, sol) - teacher.entropy()


def kl_forward_beta_slope(teacher: Teacher, hyper: Hyper) -> float:
    """d/dbeta of the tempered forward KL at beta = 1."""
    sol = _solve(teacher, hyper)
    return (sol.mu - 1) / 2 + student_energy_teacher(teacher, hyper, sol)


def golden_section(f, a: float, b: float, tol: float = BETA_TOL) -> float:
    invphi = (math.sqrt(5) - 1) / 2
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def beta_tt(teacher: Teacher, hyper: Hyper) -> tuple[float, Phase]:
    """Optimal sampling inverse temperature and the phase it lands the model in."""
    sol = _solve(teacher, hyper)
    beta = golden_section(lambda b: kl_forward_tempered(b, teacher, hyper, sol), *BETA_BRACKET)
    return beta, _tuned_phase(beta, sol)


def beta_tt_cov(lam, c, gamma: float, constraint: str = "Spherical") -> float:
    """Covariance-matching inverse temperature for a trained model."""
    lam = np.asarray(lam, dtype=float)
    c = np.asarray(c, dtype=float)
    if lam.shape != c.shape or lam.ndim != 1 or lam.size == 0:
        raise DomainError("lam and c must be equal-length non-empty sequences")
    c2 = c * c
    if constraint == "Spherical":
        mu_p = float(np.sum(lam * c2) / np.sum(c2))
    elif constraint == "PerSite":
        mu_p = 0.0
    else:
        raise DomainError(f"unknown constraint {constraint!r}")
    num = float(np.sum(lam * lam * c2))
    den = float(np.sum(lam * (lam - mu_p) * c2 * c2))
    if abs(den) <= 1e-12 * max(1.0, num * float(np.max(c2))):
        raise DegenerateDenominator(f"denominator {den:.3g} vanishes")
    return 1 + gamma * num / den


# --- tempered posterior --------------------------------------------------------


class TemperedLabel(str, enum.Enum):
    WARM_DEG = "WarmDeg"
    DEG = "Deg"
    WARM = "Warm"
    COLD = "Cold"
    MAP = "MAP"
    WARM_FLAT = "WarmFlat"
    MIXED = "Mixed"
    COLD_UNIQUE = "ColdUnique"


@dataclass(frozen=True)
class TemperedPhase:
    """Optimal posterior temperature class.

    ``eta_opt`` is a float, a (lo, hi) interval for flat optima, or math.inf.
    """

    label: TemperedLabel
    eta_opt: object
    thresholds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        eta = self.eta_opt
        if isinstance(eta, tuple):
            eta = [_json_num(v) for v in eta]
        else:
            eta = _json_num(eta)
        return {"label": self.label.value, "eta_opt": eta, "thresholds": {k: _json_num(v) for k, v in self.thresholds.items()}}


def _json_num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else ("Infinity" if v > 0 else "-Infinity")


def reverse_thresholds(teacher: Teacher) -> dict:
    """Warm/cold and cold/MAP boundaries in gamma for the reverse pp KL."""
    w = teacher.omega_star
    c1, c2, gm = teacher.c1, teacher.c2, teacher.g_map
    out = {"gamma_inf": (2 * w - 1) / (2 * w * (w - 1) ** 2)}
    if w <= OMEGA_0:
        return out
    s = c2 + 3 * c1
    g_wc = 0.25 * (s - math.sqrt(s * s - 16 * c1 * gm))
    out["gamma_wc1"] = 2 * g_wc * g_wc - c2 * g_wc
    if w > OMEGA_2:
        try:
            out["gamma_wc2"] = two_mode_warm_cold(teacher)
        except RootBracketFailure:
            pass
    out["gamma_wc"] = out.get("gamma_wc2", out["gamma_wc1"])
    return out


def two_mode_warm_cold(teacher: Teacher) -> float:
    c1, c2, gm = teacher.c1, teacher.c2, teacher.g_map

    def f(a):
        return a * (c1 - a) * (2 * c1 * c2 - a) - 2 * c1 * gm * (c1 * c2 - a)

    lo, hi = 1e-14, c2 * (1 - 1e-14)
    if f(lo) * f(hi) > 0:
        raise RootBracketFailure(f"no two-mode warm/cold root in (0, c2) at omega*={teacher.omega_star}")
    alpha = brentq(f, lo, hi, xtol=1e-15, rtol=1e-14)
    return alpha * alpha


def _eta_argmin(f, lo: float = 1e-3, hi: float = 1e3, n: int = 600) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Log-grid minimisation refined once around the best cell."""
    etas = np.logspace(math.log10(lo), math.log10(hi), n)
    vals = np.array([f(e) for e in etas])
    i = int(np.argmin(vals))
    a, b = etas[max(i - 1, 0)], etas[min(i + 1, n - 1)]
    fine = np.logspace(math.log10(a), math.log10(b), 41)
    fvals = np.array([f(e) for e in fine])
    j = int(np.argmin(fvals))
    if fvals[j] < vals[i]:
        return float(fine[j]), float(fvals[j]), etas, vals
    return float(etas[i]), float(vals[i]), etas, vals


def _minimise_over_eta(f, lo: float, hi: float) -> float:
    res = minimize_scalar(lambda le: f(math.exp(le)), bounds=(math.log(lo), math.log(hi)),
                          method="bounded", options={"xatol": 1e-10})
    return float(math.exp(res.x))


def tempered_reverse_phase(teacher: Teacher, gamma: float) -> TemperedPhase:
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    th = reverse_thresholds(teacher)
    if teacher.omega_star <= OMEGA_0:
        if gamma < teacher.c1:
            return TemperedPhase(TemperedLabel.WARM_DEG, (0.0, gamma / teacher.c1**2), th)
        return TemperedPhase(TemperedLabel.DEG, (0.0, math.inf), th)
    if gamma >= th["gamma_inf"]:
        return TemperedPhase(TemperedLabel.MAP, math.inf, th)

    def f(eta):
        return kl_reverse_pp(teacher, Hyper(gamma=gamma, eta=eta))

    label = TemperedLabel.WARM if gamma < th["gamma_wc"] else TemperedLabel.COLD
    eta0, _, _, _ = _eta_argmin(f)
    eta_opt = _minimise_over_eta(f, eta0 / 1.5, eta0 * 1.5)
    return TemperedPhase(label, eta_opt, th)


def forward_thresholds(teacher: Teacher) -> dict:
    w = teacher.omega_star
    c1, c2 = teacher.c1, teacher.c2
    return {
        "gamma_wc": c2 * c2,
        "gamma_flat": (math.sqrt(c1) - (c1 - c2) / math.sqrt(2)) ** 2,
        "gamma_inf": (3 * w - 2) * (4 * w - 3) / (w * w * (2 * w - 1) ** 2),
    }


def forward_eta0(teacher: Teacher, gamma: float) -> float:
    """Smooth-branch stationary point of the forward pp KL; inf past the MAP boundary."""
    c1, c2 = teacher.c1, teacher.c2
    g1 = (c2 + math.sqrt(c2 * c2 + 8 * gamma)) / 4
    den = c1 * (1 - g1) - 0.5 * (c1 - c2) ** 2
    if den <= 0:
        return math.inf
    return g1 * (1 - g1) / den


def forward_warm_interval(teacher: Teacher, gamma: float) -> tuple[float, float] | None:
    """Flat warm optimum set [eta_-, min(1, eta_+)], or None when it is empty."""
    c1, c2 = teacher.c1, teacher.c2
    b = gamma + c1 - 0.5 * (c1 - c2) ** 2
    disc = b * b - 4 * gamma * c1
    if disc < 0 or b <= 0:
        return None
    r = math.sqrt(disc)
    eta_minus = 4 * gamma / (b + r) ** 2
    eta_plus = 4 * gamma / (b - r) ** 2 if b > r else math.inf
    hi = min(1.0, eta_plus)
    if eta_minus > hi:
        return None
    return eta_minus, hi


def tempered_forward_phase(teacher: Teacher, gamma: float) -> TemperedPhase:
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    th = dict(forward_thresholds(teacher))
    eta0 = forward_eta0(teacher, gamma)
    interval = forward_warm_interval(teacher, gamma)
    th["eta0"] = eta0
    if interval is not None:
        th["eta_minus"], th["eta_plus_capped"] = interval
    if gamma >= th["gamma_inf"]:
        return TemperedPhase(TemperedLabel.MAP, math.inf, th)
    if gamma < th["gamma_wc"]:
        return TemperedPhase(TemperedLabel.WARM_FLAT, interval if interval else eta0, th)
    if gamma <= th["gamma_flat"]:
        return TemperedPhase(TemperedLabel.MIXED, interval if interval else eta0, th)
    return TemperedPhase(TemperedLabel.COLD_UNIQUE, eta0, th)


def brute_force_eta_label(f, flat_tol: float = 1e-9) -> str:
    """Label the eta-minimiser of f by grid search.

    Returns 'warm', 'cold', 'map', 'flat' (a degenerate optimum set bounded
    above) or 'flat_inf' (degenerate and reaching the top of the grid, so the
    infimum is also attained as eta -> inf).
    """
    eta, fmin, etas, vals = _eta_argmin(f)
    near = etas[vals <= fmin + flat_tol]
    if near.size > 1 and near[-1] / near[0] > 1.5:
        return "flat_inf" if near[-1] >= etas[-1] else "flat"
    if eta >= etas[-2]:
        return "map"
    return "warm" if eta < 1 else "cold"


# --- KLs along training ------------------------------------------------------------


@dataclass(frozen=True)
class DynamicKls:
    t: np.ndarray
    forward: np.ndarray
    reverse: np.ndarray
    theta1: np.ndarray
    approximate: np.ndarray


def _memory_integral(t: np.ndarray, f: np.ndarray, gamma: float) -> np.ndarray:
    """I(t_n) = int_0^{t_n} e^{-gamma (t_n - u)/2} f(u) du on a uniform grid, trapezoid."""
    n = len(t)
    out = np.zeros(f.shape[1:] + (n,)) if f.ndim > 1 else np.zeros(n)
    f = np.moveaxis(f, 0, -1) if f.ndim > 1 else f
    for m in range(1, n):
        dt = t[m] - t[m - 1]
        e = math.exp(-0.5 * gamma * dt)
        out[..., m] = e * out[..., m - 1] + 0.5 * dt * (e * f[..., m - 1] + f[..., m])
    return np.moveaxis(out, -1, 0) if out.ndim > 1 else out


def spike_strength(t, s, c, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Top eigenvalue theta_1(t) of Theta(t) restricted to the data directions,
    and the squared top-data component (t_1 . c_1)^2 / N^2 of its eigenvector.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    c = np.asarray(c, dtype=float)
    outer = s[:, :, None] * s[:, None, :]
    mem = _memory_integral(t, outer, gamma)
    drive = (1 - np.exp(-0.5 * gamma * t)) / gamma
    theta = np.empty(len(t))
    comp = np.empty(len(t))
    for i in range(len(t)):
        A = np.diag(drive[i] * c) - mem[i]
        vals, vecs = np.linalg.eigh(A)
        theta[i] = vals[-1]
        comp[i] = vecs[0, -1] ** 2
    return theta, comp


def dynamic_kls(t, s, teacher: Teacher, hyper: Hyper) -> DynamicKls:
    """Typical forward and reverse KLs along a training trajectory.

    ``s`` holds the data overlaps s_k(t), one column per data mode. The
    spike of the positive-minus-negative phase matrix is taken inside the
    data subspace. Times past the early-training regime are flagged.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    c = teacher.spectrum.c[: s.shape[1]]
    gamma, eta = hyper.gamma, hyper.eta
    w = teacher.omega_star
    ge = gamma * eta
    theta, comp = spike_strength(t, s, c, gamma)
    theta_c = max(1.0, 1 / math.sqrt(ge))
    g = np.where(theta <= theta_c, min(1.0, math.sqrt(ge)), 1 / np.maximum(theta, 1e-300))
    h_sq = np.clip(1 - g, 0.0, None)
    mu = g / ge + 1 / g
    with np.errstate(divide="ignore", over="ignore"):
        align = np.clip(1 - 1 / (ge * np.maximum(theta, 1e-300) ** 2), 0.0, None)
    o = teacher.overlap_sq

    spike_1 = (1 - np.exp(-0.5 * gamma * t)) / gamma * c[0] - _memory_integral(t, s[:, 0] ** 2, gamma)
    forward = (0.5 * math.log(w) - 0.5 + 0.5 * (mu + np.log(g) - g * g / (2 * ge))
               - 0.5 * (1 - 1 / w) * o * spike_1)
    reverse = (0.5 * (w - 1 - math.log(w)) - 0.5 * np.log(g) + g * g / (4 * ge)
               - 0.5 * w * h_sq * align * o * comp)
    approximate = s[:, 0] ** 2 > c[0] / gamma
    if np.any(approximate):
        warnings.warn("negative phase no longer weak; dynamic KLs are outside the early-training regime",
                      ApproximationDomain, stacklevel=2)
    return DynamicKls(t, forward, reverse, theta, approximate)


def dynamic_reverse_plateau(teacher: Teacher, hyper: Hyper) -> float:
    w = teacher.omega_star
    ge = hyper.gamma * hyper.eta
    g0 = min(1.0, math.sqrt(ge))
    return 0.5 * (w - 1 - math.log(w)) - 0.5 * math.log(g0) + g0 * g0 / (4 * ge)


def theta_star(teacher: Teacher, hyper: Hyper) -> float:
    a = teacher.omega_star * teacher.overlap_sq
    return 0.5 * (a + math.sqrt(a * a + 4 / (hyper.gamma * hyper.eta)))


def early_stopping_time(teacher: Teacher, hyper: Hyper) -> float:
    """nu-independent estimate of the reverse-KL optimal stopping time."""
    x = hyper.gamma * theta_star(teacher, hyper) / teacher.c1
    if x >= 1:
        raise NoFiniteTime(f"spike saturates below theta* (gamma theta*/c1 = {x:.4g})")
    return -2 / hyper.gamma * math.log1p(-x)


# --- reports ---------------------------------------------------------------------


@dataclass(frozen=True)
class KlReport:
    omega_star: float
    gamma: float
    eta: float
    phase: str
    reverse_typical: float
    reverse_pp: float
    forward_typical: float
    forward_pp: float
    pp_entropy: float
    typical_entropy: float
    truncation_tol: float = 1e-10

    def to_json(self) -> str:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        d["note"] = "intensive values, leading order in N; error 1e-10 + O(1/N)"
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "KlReport":
        d = json.loads(text)
        if d.pop("schema_version", None) != SCHEMA_VERSION:
            raise DomainError("unsupported KlReport schema version")
        d.pop("note", None)
        return cls(**d)


def kl_report(teacher: Teacher, hyper: Hyper) -> KlReport:
    sol = _solve(teacher, hyper)
    return KlReport(
        omega_star=teacher.omega_star,
        gamma=hyper.gamma,
        eta=hyper.eta,
        phase=sol.phase.value,
        reverse_typical=kl_reverse_typical(teacher, hyper),
        reverse_pp=kl_reverse_pp(teacher, hyper),
        forward_typical=kl_forward_typical(teacher, hyper),
        forward_pp=kl_forward_pp(teacher, hyper),
        pp_entropy=pp_entropy(teacher, hyper),
        typical_entropy=typical_entropy(teacher, hyper),
    )
