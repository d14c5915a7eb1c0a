"""Two-time dynamical mean-field theory of SBM training.

The closed equations for the signals s_k(t), the correlation Q(t,t') and the
response R(t,t') are marched row by row on a uniform grid. The stationary
regime is solved separately on a lag grid, which gives the bath response
chi_P and the dynamical condensation threshold nu_c.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import __version__
from .equilibrium import DataSpectrum, Hyper
from .errors import DomainError, NonConvergence, StepTooLarge

NU_DT_GUARD = 0.6
MAX_STEPS = 4096
CORRECTOR_TOL = 1e-10
CORRECTOR_CAP = 50
ANDERSON_DEPTH = 5
ONSET_THRESHOLD = 1e-2


@dataclass(frozen=True)
class TimeGrid:
    t_max: float
    dt: float

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise DomainError(f"dt must be positive, got {self.dt}")
        if not self.t_max > 0:
            raise DomainError(f"t_max must be positive, got {self.t_max}")

    @property
    def n(self) -> int:
        # tolerate t_max/dt landing a rounding error above an integer
        return int(math.ceil(self.t_max / self.dt - 1e-9))

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(self.n + 1)


@dataclass(frozen=True)
class DmftSolution:
    """Causal two-time solution; arrays are indexed by grid point."""

    grid: TimeGrid
    Q: np.ndarray
    R: np.ndarray
    s: np.ndarray
    kappa: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    def save(self, path) -> None:
        save_checkpoint(self, path)


def _kernel_coefs(hyper: Hyper, k_mult: float) -> tuple[float, float]:
    """(negative-phase weight K nu/2, learning-noise weight nu^2/(eta gamma))."""
    return 0.5 * k_mult * hyper.nu, hyper.nu**2 / (hyper.eta * hyper.gamma)


def _anderson_step(x, gx, hist_x, hist_f, depth: int = ANDERSON_DEPTH):
    """Anderson-mixed update for the fixed point x = g(x); histories are mutated."""
    f = gx - x
    hist_x.append(gx)
    hist_f.append(f)
    if len(hist_f) > depth + 1:
        del hist_x[0], hist_f[0]
    if len(hist_f) < 2:
        return gx
    dF = np.diff(np.array(hist_f), axis=0).T
    dG = np.diff(np.array(hist_x), axis=0).T
    coef = np.linalg.lstsq(dF, f, rcond=None)[0]
    return gx - dG @ coef


def solve_dmft(
    spectrum: DataSpectrum,
    hyper: Hyper,
    s0,
    grid: TimeGrid,
    *,
    k_mult: float | None = None,
    max_steps: int = MAX_STEPS,
    tol: float = CORRECTOR_TOL,
    max_iter: int = CORRECTOR_CAP,
) -> DmftSolution:
    """March the closed two-time equations from t=0 to grid.t_max.

    ``k_mult`` is the multiplicity of the negative-phase self-interaction in
    the memory kernel; it defaults to the number of data modes. Modes with a
    zero seed stay exactly zero and are not integrated.
    """
    c = spectrum.c
    s0 = np.asarray(s0, dtype=float).reshape(-1)
    if s0.shape != c.shape:
        raise DomainError(f"need one seed per mode: {s0.shape} vs {c.shape}")
    if np.any(np.abs(s0) >= 1):
        raise DomainError("seed overlaps must satisfy |s0| < 1")
    gamma, nu = hyper.gamma, hyper.nu
    dt, n = grid.dt, grid.n
    if nu * dt >= NU_DT_GUARD:
        raise StepTooLarge(f"nu*dt = {nu * dt:.3g} exceeds the guard {NU_DT_GUARD}")
    if n > max_steps:
        raise DomainError(f"{n} steps exceed max_steps={max_steps}; raise it explicitly")
    k_mult = spectrum.K if k_mult is None else k_mult
    a_neg, a_noise = _kernel_coefs(hyper, k_mult)

    t = grid.t
    decay = np.exp(-0.5 * gamma * t)  # e^{-gamma (t_n - t_u)/2} = decay[n-u]
    drive = nu / gamma * (1 - decay)

    active = np.flatnonzero(s0 != 0)
    ca = c[active]
    Q = np.zeros((n + 1, n + 1))
    R = np.zeros((n + 1, n + 1))
    S = np.zeros((len(active), n + 1))
    kappa = np.zeros(n + 1)
    Q[0, 0] = R[0, 0] = 1.0
    S[:, 0] = s0[active]
    kappa[0] = nu + drive[0] * np.sum(ca * S[:, 0] ** 2)

    # right-hand sides of the previous row without the -kappa X part
    fq_prev = np.array([drive[0] * np.sum(ca * S[:, 0] ** 2)])
    fr_prev = np.zeros(1)
    fs_prev = drive[0] * ca * S[:, 0]
    iters = np.zeros(n + 1, dtype=int)

    for m in range(1, n + 1):
        w = np.full(m + 1, dt)
        w[0] = w[-1] = 0.5 * dt
        ker = decay[m::-1]  # ker[u] = e^{-gamma (t_m - t_u)/2}
        Qb = Q[: m + 1, : m + 1]
        Rb = R[: m + 1, : m + 1]

        # explicit Euler predictor for the new row
        k_old = kappa[m - 1]
        Q[m, :m] = Q[m - 1, :m] + dt * (fq_prev - k_old * Q[m - 1, :m])
        R[m, :m] = R[m - 1, :m] + dt * (fr_prev - k_old * R[m - 1, :m])
        S[:, m] = S[:, m - 1] + dt * (fs_prev - k_old * S[:, m - 1])
        Q[m, m] = R[m, m] = 1.0
        kap = k_old
        cn_old = 1 - 0.5 * dt * k_old
        hist_x, hist_f = [], []

        for it in range(max_iter):
            Q[:m, m] = Q[m, :m]
            Mrow = ker * (-a_neg * Q[m, : m + 1] + a_noise * R[m, : m + 1])
            Drow = a_noise * ker * Q[m, : m + 1]

            sig = drive[m] * (S[:, m] * ca) @ S[:, : m + 1]
            I1 = (w * Mrow) @ Qb
            MR = dt * (Mrow @ Rb)
            J = MR - 0.5 * dt * Mrow - 0.5 * dt * Mrow[m] * R[m, : m + 1]
            RD = dt * (Rb @ Drow)
            I2 = RD - 0.5 * dt * Drow[0] * Rb[:, 0] - 0.5 * dt * Drow
            I2[0] = 0.0
            fq = sig + I1 + I2
            fr = J
            fs = drive[m] * ca * S[:, m] + (S[:, : m + 1] * (w * Mrow)).sum(axis=1)

            kap_new = nu + fq[m]
            den = 1 + 0.5 * dt * kap_new
            q_new = (cn_old * Q[m - 1, :m] + 0.5 * dt * (fq[:m] + fq_prev)) / den
            r_new = (cn_old * R[m - 1, :m] + 0.5 * dt * (fr[:m] + fr_prev)) / den
            s_new = (cn_old * S[:, m - 1] + 0.5 * dt * (fs + fs_prev)) / den

            # kappa enters scaled by dt so every component is O(1)
            x = np.concatenate((Q[m, :m], R[m, :m], S[:, m], [kap * dt]))
            gx = np.concatenate((q_new, r_new, s_new, [kap_new * dt]))
            f = gx - x
            delta = np.max(np.abs(f))
            scale = max(1.0, np.max(np.abs(gx)))
            if delta < tol * scale:
                x = gx
            else:
                x = _anderson_step(x, gx, hist_x, hist_f)
            Q[m, :m], R[m, :m] = x[:m], x[m : 2 * m]
            S[:, m], kap = x[2 * m : -1], x[-1] / dt
            if delta < tol * scale:
                break
        else:
            raise NonConvergence(
                f"corrector did not converge at step {m} (t={t[m]:.4g})",
                {"step": m, "residual": float(delta), "iterations": max_iter},
            )
        iters[m] = it + 1
        Q[:m, m] = Q[m, :m]
        kappa[m] = kap

        # refresh right-hand sides with the converged row
        Mrow = ker * (-a_neg * Q[m, : m + 1] + a_noise * R[m, : m + 1])
        Drow = a_noise * ker * Q[m, : m + 1]
        sig = drive[m] * (S[:, m] * ca) @ S[:, : m + 1]
        I1 = (w * Mrow) @ Qb
        MR = dt * (Mrow @ Rb)
        J = MR - 0.5 * dt * Mrow - 0.5 * dt * Mrow[m] * R[m, : m + 1]
        RD = dt * (Rb @ Drow)
        I2 = RD - 0.5 * dt * Drow[0] * Rb[:, 0] - 0.5 * dt * Drow
        I2[0] = 0.0
        fq_prev = sig + I1 + I2
        fr_prev = J
        fs_prev = drive[m] * ca * S[:, m] + (S[:, : m + 1] * (w * Mrow)).sum(axis=1)
        kappa[m] = nu + fq_prev[m]

    s_full = np.zeros((spectrum.K, n + 1))
    s_full[active] = S
    params = {
        "c": list(spectrum.eigenvalues),
        "gamma": gamma,
        "eta": hyper.eta,
        "nu": nu,
        "k_mult": k_mult,
        "s0": s0.tolist(),
        "max_corrector_iterations": int(iters.max()),
    }
    return DmftSolution(grid, Q, R, s_full, kappa, params)


def early_outlier_trajectory(k: int, t, spectrum: DataSpectrum, hyper: Hyper):
    """Outlier position of mode k (0-based) under pure spike growth.

    Returns the bulk edge before the detachment time and for modes that
    never detach.
    """
    gamma, eta = hyper.gamma, hyper.eta
    ck = spectrum.c[k]
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be nonnegative")
    edge = hyper.bulk.edge
    t_out = detachment_time(k, spectrum, hyper)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = gamma / (ck * (-np.expm1(-0.5 * gamma * t)))
        lam = 1 / g + g / (gamma * eta)
    out = np.where(t >= t_out, lam, edge)
    return float(out) if out.ndim == 0 else out


def detachment_time(k: int, spectrum: DataSpectrum, hyper: Hyper) -> float:
    """Time at which mode k leaves the bulk; math.inf if it never does."""
    gamma, eta = hyper.gamma, hyper.eta
    ck = spectrum.c[k]
    thr = math.sqrt(gamma / eta)
    if ck <= thr:
        return math.inf
    return -2 / gamma * math.log1p(-thr / ck)


def condensation_onset_time(solution: DmftSolution, threshold: float = ONSET_THRESHOLD):
    """Time of the minimum of |s_1| within its first excursion below ``threshold``.

    Returns None when |s_1| never dips below the threshold or never climbs
    back above it afterwards. A seed already below the threshold gives 0.
    """
    s1 = np.abs(solution.s[0])
    if s1[0] <= threshold:
        return 0.0
    below = np.flatnonzero(s1 <= threshold)
    if below.size == 0:
        return None
    i = below[0]
    above = np.flatnonzero(s1[i:] > threshold)
    if above.size == 0:
        return None
    j = i + above[0]
    return float(solution.t[i + np.argmin(s1[i:j])])


# --- stationary regime -----------------------------------------------------


@dataclass(frozen=True)
class StationaryState:
    tau: np.ndarray
    Q_st: np.ndarray
    R_st: np.ndarray
    s_st: np.ndarray
    kappa_st: float
    chi_P: float
    branch: str
    bath: "StationaryState | None" = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def q(self) -> float:
        return float(np.sum(self.s_st**2))


def _series_inverse(p: np.ndarray, L: int) -> np.ndarray:
    """First L coefficients of 1/p(z) by Newton doubling with FFT products."""
    f = np.array([1.0 / p[0]])
    k = 1
    while k < L:
        k2 = min(2 * k, L)
        nfft = 1 << int(math.ceil(math.log2(2 * k2)))
        P = np.fft.rfft(p[:k2], nfft)
        F = np.fft.rfft(f, nfft)
        e = np.fft.irfft(P * F, nfft)[:k2]
        e = -e
        e[0] += 2.0
        f = np.fft.irfft(F * np.fft.rfft(e, nfft), nfft)[:k2]
        k = k2
    return f


def _volterra_response(M: np.ndarray, kappa: float, h: float) -> np.ndarray:
    """Trapezoid solution of R' = -kappa R + int_0^tau M(tau-s) R(s) ds, R(0)=1.

    The discrete recursion is linear with constant coefficients, so its
    generating function is the ratio N(z)/P(z) of two known series.
    """
    L = len(M)
    one_z = np.zeros(L)
    one_z[0] = 1.0
    one_z[1] = 1.0
    Mz = np.convolve(one_z[:2], M)[:L]  # (1+z) M(z)
    P = -0.5 * h * h * (Mz - 0.5 * M[0] * one_z)
    P[0] += 1 + 0.5 * h * kappa
    P[1] += -1 + 0.5 * h * kappa
    N = -0.25 * h * h * Mz
    N[0] += 1 + 0.5 * h * kappa
    with np.errstate(over="ignore", invalid="ignore"):
        inv = _series_inverse(P, L)
    nfft = 1 << int(math.ceil(math.log2(2 * L)))
    with np.errstate(over="ignore", invalid="ignore"):
        return np.fft.irfft(np.fft.rfft(N, nfft) * np.fft.rfft(inv, nfft), nfft)[:L]


def _trap(f: np.ndarray, h: float) -> float:
    return h * (np.sum(f) - 0.5 * f[0] - 0.5 * f[-1])


def _fluctuation_correlation(R: np.ndarray, Ds: np.ndarray, nu: float, h: float) -> np.ndarray:
    """C(tau) = 2 nu A_R(tau) + int D_s(tau - v) A_R(v) dv with A_R the autocorrelation of R."""
    L = len(R)
    nfft = 1 << int(math.ceil(math.log2(4 * L)))
    FR = np.fft.rfft(R, nfft)
    A = h * np.fft.irfft(FR * np.conj(FR), nfft)[:L] - 0.5 * h * R[0] * R
    if not np.any(Ds):
        return 2 * nu * A
    a_sym = np.concatenate([A[:0:-1], A])
    d_sym = np.concatenate([Ds[:0:-1], Ds])
    conv = h * np.fft.irfft(np.fft.rfft(a_sym, nfft) * np.fft.rfft(d_sym, nfft), nfft)
    # lag tau_m sits at index m + 2(L-1) of the full linear convolution
    return 2 * nu * A + conv[2 * (L - 1) : 2 * (L - 1) + L]


def _stationary_core(
    gamma: float,
    nu: float,
    a_noise: float,
    k_mult: float,
    c1: float | None,
    h: float,
    L: int,
    *,
    init: tuple | None = None,
    tol: float = 1e-10,
    max_iter: int = 2000,
    mix: float = 0.5,
):
    """Fixed point of the stationary equations on the lag grid tau_m = m h.

    c1 None solves the uncondensed bath (q=0, kappa from C(0)=1); otherwise
    the condensed branch with kappa = nu c1/gamma + int M and q = 1 - C(0).
    Returns (C, R, kappa, q, iterations).
    """
    tau = h * np.arange(L)
    ker = np.exp(-0.5 * gamma * tau)
    a_neg = 0.5 * k_mult * nu
    if init is None:
        C = np.exp(-nu * tau)
        R = np.exp(-nu * tau)
        q = 0.0 if c1 is None else 0.5
    else:
        C, R, q = init[0].copy(), init[1].copy(), float(init[2])
    kappa = nu if init is None or len(init) < 4 else float(init[3])
    k_move = 0.0
    for it in range(max_iter):
        Qf = q + C
        M = ker * (-a_neg * Qf + a_noise * R)
        Ds = a_noise * ker * Qf
        if c1 is None:

            def c0(k):
                r = _volterra_response(M, k, h)
                if not (np.all(np.isfinite(r)) and np.max(np.abs(r[-max(2, L // 20) :])) < 1e-6):
                    return np.inf
                return _fluctuation_correlation(r, Ds, nu, h)[0] - 1.0

            # C(0) falls from +inf (response not decaying) to 0 as kappa grows;
            # bracket around the previous kappa with a width set by its last move
            step = 4 * k_move if k_move > 0 else 0.05 * max(1.0, abs(kappa))
            lo = hi = kappa
            f_lo = f_hi = c0(kappa)
            while f_lo < 0:
                hi, f_hi = lo, f_lo
                lo -= step
                step *= 2
                f_lo = c0(lo)
            while f_hi > 0:
                lo, f_lo = hi, f_hi
                hi += step
                step *= 2
                f_hi = c0(hi)
            if f_lo == 0 or f_hi == 0:
                lo = hi = lo if f_lo == 0 else hi
            k_new = lo if lo == hi else brentq(c0, lo, hi, xtol=1e-14, rtol=1e-13)
            k_move = abs(k_new - kappa)
            R_new = _volterra_response(M, k_new, h)
            C_new = _fluctuation_correlation(R_new, Ds, nu, h)
            q_new = 0.0
        else:
            k_new = nu * c1 / gamma + _trap(M, h)
            R_new = _volterra_response(M, k_new, h)
            C_new = _fluctuation_correlation(R_new, Ds, nu, h)
            q_new = 1.0 - C_new[0]
        if not (np.all(np.isfinite(R_new)) and np.max(np.abs(R_new[-max(2, L // 20):])) < 1e-6):
            raise NonConvergence(
                "stationary response does not decay on the lag window",
                {"iteration": it, "kappa": float(k_new), "q": float(q_new)},
            )
        delta = max(np.max(np.abs(C_new - C)), np.max(np.abs(R_new - R)), abs(q_new - q))
        C = (1 - mix) * C + mix * C_new
        R = (1 - mix) * R + mix * R_new
        q = (1 - mix) * q + mix * q_new
        kappa = k_new
        if delta < tol:
            return C_new, R_new, k_new, q_new, it + 1
    raise NonConvergence("stationary fixed point did not converge", {"iterations": max_iter, "residual": float(delta)})


def _lag_window(gamma: float, nu: float, dtau: float, t_tau: float | None) -> int:
    if t_tau is None:
        # memory kernel and bath decay below e^-30 inside the window
        t_tau = 30.0 * max(2.0 / gamma, 1.0 / nu, 1.0)
    return int(math.ceil(t_tau / dtau)) + 1


def stationary_solve(
    spectrum: DataSpectrum,
    hyper: Hyper,
    *,
    dtau: float = 1e-2,
    t_tau: float | None = None,
    k_mult: float | None = None,
    tol: float = 1e-10,
    refine: bool = False,
) -> StationaryState:
    """Solve the time-translation-invariant regime.

    The uncondensed bath is solved first. If it is unstable towards the top
    mode (nu c_1 chi_P > gamma) the condensed branch is then solved and
    returned, with the bath attached.

    With ``refine`` the solve is repeated at dtau/2 and the scalar outputs
    (q, kappa, chi_P) are Richardson-extrapolated for the second-order
    scheme; the arrays come from the finer grid.
    """
    coarse = _stationary_once(spectrum, hyper, dtau, t_tau, k_mult, tol)
    if not refine:
        return coarse
    fine = _stationary_once(spectrum, hyper, dtau / 2, t_tau, k_mult, tol)
    if fine.branch != coarse.branch:
        return fine

    def rich(a, b):
        return b + (b - a) / 3

    q = max(rich(coarse.q, fine.q), 0.0) if fine.branch == "condensed" else 0.0
    s = np.zeros_like(fine.s_st)
    s[0] = math.sqrt(q)
    bath = fine.bath
    if bath is not None:
        bath = replace(bath, chi_P=rich(coarse.bath.chi_P, bath.chi_P))
    diag = dict(fine.diagnostics, refined=True, dtau=dtau / 2)
    return replace(
        fine,
        s_st=s,
        kappa_st=rich(coarse.kappa_st, fine.kappa_st),
        chi_P=rich(coarse.chi_P, fine.chi_P),
        bath=bath,
        diagnostics=diag,
    )


def _stationary_once(spectrum, hyper, dtau, t_tau, k_mult, tol) -> StationaryState:
    gamma, nu = hyper.gamma, hyper.nu
    if nu * dtau >= NU_DT_GUARD:
        raise StepTooLarge(f"nu*dtau = {nu * dtau:.3g} exceeds the guard {NU_DT_GUARD}")
    k_mult = spectrum.K if k_mult is None else k_mult
    a_noise = nu**2 / (hyper.eta * gamma)
    L = _lag_window(gamma, nu, dtau, t_tau)
    tau = dtau * np.arange(L)
    C, R, kap, _, its = _stationary_core(gamma, nu, a_noise, k_mult, None, dtau, L, tol=tol)
    chi = _trap(R, dtau)
    bath = StationaryState(tau, C, R, np.zeros(spectrum.K), kap, chi, "uncondensed", None, {"iterations": its})
    c1 = spectrum.c[0]
    if nu * c1 * chi <= gamma:
        return bath
    Cc, Rc, kc, q, its_c = _condensed_continuation(gamma, nu, a_noise, k_mult, c1, dtau, L, (C, R), tol)
    s = np.zeros(spectrum.K)
    s[0] = math.sqrt(max(q, 0.0))
    return StationaryState(tau, q + Cc, Rc, s, kc, chi, "condensed", bath, {"iterations": its_c})


def _condensed_continuation(gamma, nu, a_noise, k_mult, c1, h, L, bath, tol):
    """Condensed branch, continued in q from the marginal bath when needed."""
    try:
        C, R, k, q, its = _stationary_core(gamma, nu, a_noise, k_mult, c1, h, L, init=(bath[0], bath[1], 0.5), tol=tol)
        if q > 0:
            return C, R, k, q, its
    except NonConvergence:
        pass
    for mix in (0.2, 0.05):
        for q0 in (0.9, 0.5, 0.1, 1e-3):
            try:
                C, R, k, q, its = _stationary_core(
                    gamma, nu, a_noise, k_mult, c1, h, L, init=(bath[0] * (1 - q0), bath[1], q0), tol=tol, mix=mix
                )
            except NonConvergence:
                continue
            if q > 0:
                return C, R, k, q, its
    raise NonConvergence("condensed stationary branch not found", {"nu": nu, "gamma": gamma})


def critical_nu(
    spectrum: DataSpectrum,
    hyper: Hyper,
    *,
    dtau: float = 1e-2,
    nu_min: float = 0.05,
    k_mult: float | None = None,
    check_refinement: bool = True,
) -> float:
    """Dynamical threshold nu_c solving nu c_1 chi_P(nu) = gamma.

    Returns 0.0 if the bath is unstable at every nu scanned and math.inf
    if no crossing exists below the guard nu dtau < 0.6. A crossing that
    moves like 1/dtau under refinement is rejected as a grid artefact.
    """
    c1 = spectrum.c[0]
    nu_max = 0.999 * NU_DT_GUARD / dtau

    def f(nu):
        st = stationary_solve(spectrum, hyper.with_(nu=float(nu)), dtau=dtau, k_mult=k_mult)
        return nu * c1 * st.chi_P - hyper.gamma

    grid = np.geomspace(nu_min, nu_max, 12)
    vals = [f(v) for v in grid]
    if all(v > 0 for v in vals):
        return 0.0
    # first upward crossing: uncondensed below, condensed above
    idx = [i for i in range(len(grid) - 1) if vals[i] <= 0 < vals[i + 1]]
    if not idx:
        return math.inf
    i = idx[0]
    nu_c = brentq(f, grid[i], grid[i + 1], xtol=1e-10, rtol=1e-8)
    if check_refinement:
        # the fine-grid crossing must lie below 1.5 nu_c, i.e. the fine bath is
        # already unstable there
        st = stationary_solve(spectrum, hyper.with_(nu=1.5 * nu_c), dtau=dtau / 2, k_mult=k_mult)
        if 1.5 * nu_c * c1 * st.chi_P <= hyper.gamma:
            return math.inf
    return nu_c


# --- MAP limit ---------------------------------------------------------------


def _map_bath_moment(eps: float, dtau: float = 1e-2) -> float:
    """eps * int e^{-eps tau} Q_P (1 - Q_P) dtau for the eta->inf bath at nu = 1."""
    gamma = 2 * eps
    L = _lag_window(gamma, 1.0, dtau, None)
    C, R, _, _, _ = _stationary_core(gamma, 1.0, 0.0, 1.0, None, dtau, L)
    tau = dtau * np.arange(L)
    return eps * _trap(np.exp(-eps * tau) * C * (1 - C), dtau)


def map_condensation_floor(dtau: float = 1e-2) -> float:
    """gamma_min = 1 - max_eps eps I(eps); below it no MAP boundary survives."""
    return _map_floor(float(dtau))


@lru_cache(maxsize=8)
def _map_floor(dtau: float) -> float:
    # eps I(eps) vanishes at both ends; the small-eps tail is costly and far below the peak
    grid = np.geomspace(0.1, 20, 16)
    vals = [_map_bath_moment(e, dtau) for e in grid]
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(
        lambda le: -_map_bath_moment(math.exp(le), dtau),
        bounds=(math.log(lo), math.log(hi)),
        method="bounded",
        options={"xatol": 1e-6},
    )
    return 1.0 + float(res.fun)


def map_condensation_boundary(gamma: float, dtau: float = 1e-2) -> bool:
    """Whether the MAP-limit threshold equation has a solution at this gamma."""
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    if gamma >= 1:
        return False
    return gamma >= map_condensation_floor(dtau)


# --- large-K rescaling -------------------------------------------------------


@dataclass(frozen=True)
class DynParams:
    """Time horizon and rates of one DMFT run, in either bare or invariant units."""

    gamma: float
    eta: float
    nu: float
    c: tuple
    t_max: float


def to_invariant(p: DynParams, K: int, K_prime: int = 1) -> DynParams:
    r = K / K_prime
    return DynParams(p.gamma / r, p.eta * r, p.nu / r, tuple(v / r for v in p.c), p.t_max * r)


def to_bare(p: DynParams, K: int, K_prime: int = 1) -> DynParams:
    r = K / K_prime
    return DynParams(p.gamma * r, p.eta / r, p.nu * r, tuple(v * r for v in p.c), p.t_max / r)


def rescale_invariant_large_k(p: DynParams, K: int, K_prime: int = 1, *, inverse: bool = False) -> DynParams:
    """Map bare parameters to invariant ones (or back with ``inverse``)."""
    return to_bare(p, K, K_prime) if inverse else to_invariant(p, K, K_prime)


def large_k_stationary(c_tilde_max: float, gamma: float) -> tuple[float, float]:
    """Closed-form (q, kappa_tilde) of the bare large-K stationary state."""
    if not (c_tilde_max > 0 and gamma > 0):
        raise DomainError("c_tilde_max and gamma must be positive")
    return min(1.0, c_tilde_max), max(c_tilde_max - 1.0, 0.0) / gamma


# --- checkpoints ---------------------------------------------------------------

_MAGIC = b"SBMDMFT1"


def save_checkpoint(sol: DmftSolution, path) -> None:
    """Binary blob: magic, 8-byte header length, JSON header, raw float64 arrays."""
    arrays = {"Q": sol.Q, "R": sol.R, "s": sol.s, "kappa": sol.kappa}
    header = {
        "version": __version__,
        "grid": {"t_max": sol.grid.t_max, "dt": sol.grid.dt},
        "params": sol.params,
        "arrays": {k: list(v.shape) for k, v in arrays.items()},
        "dtype": "<f8",
    }
    raw = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(raw).to_bytes(8, "little"))
        fh.write(raw)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> DmftSolution:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise DomainError(f"{path} is not a DMFT checkpoint")
    nh = int.from_bytes(data[8:16], "little")
    header = json.loads(data[16 : 16 + nh])
    off = 16 + nh
    out = {}
    for name, shape in header["arrays"].items():
        size = int(np.prod(shape)) * 8
        out[name] = np.frombuffer(data[off : off + size], dtype="<f8").reshape(shape).copy()
        off += size
    grid = TimeGrid(**header["grid"])
    return DmftSolution(grid, out["Q"], out["R"], out["s"], out["kappa"], header["params"])
