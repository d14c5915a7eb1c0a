"""Command-line harness: parameter sweeps, figure data and the acceptance suite.

Every command writes its table (CSV or JSON), a ``manifest.json`` with the
package version, a hash of the resolved configuration and the seed, and
unless ``--no-plots`` is given, PNG figures next to the data.

Parameters come from flags, then from an INI config file (``--config``),
then from built-in defaults. The config file has an optional ``[run]``
section (output_dir, seed, format, workers, plots) and one section per
command whose keys are that command's flag names.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import re
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .errors import ConfigError, DomainError, NoFiniteTime, SbmError, StepTooLarge

SCHEMA_VERSION = 1
OUTPUT_ENV = "SBMLAB_OUTPUT_DIR"
DEFAULT_OUTPUT = "sbmlab-out"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VALIDATION = 0, 2, 3, 4

RANGE_HELP = "a number, a comma list 'x,y,z', or 'a:b:n' for n evenly spaced points from a to b inclusive"


# --- value parsing ---------------------------------------------------------------


def parse_range(text: str) -> tuple[float, ...]:
    """Expand 'a:b:n' (inclusive linspace), 'x,y,z' or a single number."""
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range {text!r} must look like a:b:n")
        a, b = float(parts[0]), float(parts[1])
        n = int(parts[2])
        if n < 1:
            raise ValueError(f"range {text!r} needs n >= 1")
        if n == 1:
            return (a,)
        return tuple(float(v) for v in np.linspace(a, b, n))
    vals = tuple(float(v) for v in text.split(",") if v.strip())
    if not vals:
        raise ValueError("empty value list")
    return vals


def parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _choice(*options: str) -> Callable[[str], str]:
    def conv(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text

    conv.__name__ = "choice"
    return conv


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _argtype(conv):
    def wrapped(text):
        try:
            return conv(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    wrapped.__name__ = getattr(conv, "__name__", "value")
    return wrapped


@dataclass(frozen=True)
class Param:
    name: str
    conv: Callable[[str], object]
    default: object
    help: str

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


def _opt(conv):
    return lambda text: None if str(text).strip().lower() in ("", "none") else conv(text)


# --- commands --------------------------------------------------------------------


def _pmap(fn, items, workers: int) -> list:
    """Ordered map; worker threads only run pure functions, results are collected here."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(v) for v in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class Output:
    """Tables to write plus figure callbacks and summary values for the manifest."""

    tables: dict
    figures: list
    summary: dict


def _spectrum(values):
    from .equilibrium import DataSpectrum

    return DataSpectrum(tuple(values))


def cmd_phase_diagram(p: dict, ctx) -> Output:
    """Equilibrium phase labels and order parameters on a (gamma, eta) grid."""
    from .equilibrium import Hyper, classify_phase

    c = p["c"]
    if c is None:
        defaults = {1: (1.0,), 2: (1.5, 0.5)}
        k = p["k"] or 1
        if k not in defaults:
            raise ConfigError("give --c for K > 2")
        c = defaults[k]
    elif p["k"] is not None and p["k"] != len(c):
        raise ConfigError(f"--k {p['k']} does not match {len(c)} eigenvalues in --c")
    sp = _spectrum(c)
    K = sp.K
    grid = [(g, e) for g in p["gamma"] for e in p["eta"]]

    def row(ge):
        g, e = ge
        sol = classify_phase(sp, Hyper(g, e))
        return [g, e, sol.phase.value, sol.d, sol.a, sol.h_sq, sol.mu, *sol.lam, *sol.u_sq]

    rows = _pmap(row, grid, ctx.workers)
    cols = ["gamma", "eta", "phase", "d", "a", "h_sq", "mu"] + [f"lambda_{k + 1}" for k in range(K)] + [
        f"u_{k + 1}" for k in range(K)]

    def fig(out_dir):
        from .plotting import plot_label_map

        labels = np.array([r[2] for r in rows], dtype=object).reshape(len(p["gamma"]), len(p["eta"]))
        return [plot_label_map(p["gamma"], p["eta"], labels, out_dir / "phase-diagram.png",
                               xlabel="gamma", ylabel="eta", title=f"c = {tuple(sp.eigenvalues)}")]

    return Output({"phase-diagram": (cols, rows)}, [fig], {"K": K})


def cmd_dmft(p: dict, ctx) -> Output:
    """Integrate the two-time DMFT from seed overlaps."""
    from .dmft import TimeGrid, solve_dmft
    from .equilibrium import Hyper

    sp = _spectrum(p["c"])
    K = sp.K
    s0 = p["s0"] if p["s0"] is not None else (0.1,) * K
    if len(s0) == 1 and K > 1:
        s0 = s0 * K
    sol = solve_dmft(sp, Hyper(p["gamma"], p["eta"], nu=p["nu"]), list(s0), TimeGrid(p["t_max"], p["dt"]),
                     k_mult=p["k_mult"])
    cols = ["t"] + [f"s_{k + 1}" for k in range(K)] + ["kappa", "Q_t0", "R_t0"]
    rows = [[t, *sol.s[:, i], sol.kappa[i], sol.Q[i, 0], sol.R[i, 0]] for i, t in enumerate(sol.t)]
    if p["checkpoint"]:
        sol.save(ctx.out_dir / p["checkpoint"])
        ctx.extra_outputs.append(p["checkpoint"])

    def fig(out_dir):
        from .plotting import plot_panels

        panels = {"s_k": {f"s_{k + 1}": sol.s[k] for k in range(K)}, "kappa": {"kappa": sol.kappa}}
        return [plot_panels(sol.t, panels, out_dir / "dmft.png")]

    summary = {"final_s": sol.s[:, -1].tolist(), "final_kappa": float(sol.kappa[-1]),
               "max_corrector_iterations": sol.params["max_corrector_iterations"]}
    return Output({"dmft": (cols, rows)}, [fig], summary)


def cmd_langevin(p: dict, ctx) -> Output:
    """Finite-N simulation of the weight / persistent-chain dynamics."""
    from .equilibrium import Hyper
    from .langevin import SimConfig, ensemble_stats, simulate

    sp = _spectrum(p["c"])
    K = sp.K
    s0 = p["s0"] if p["s0"] is not None else (0.1,) * K
    if len(s0) == 1 and K > 1:
        s0 = s0 * K
    cfg = SimConfig(N=p["n"], hyper=Hyper(p["gamma"], p["eta"], nu=p["nu"]), spectrum=sp, t_max=p["t_max"],
                    s0=s0, dt=p["dt"], seed=ctx.seed, n_seeds=p["n_seeds"], record_every=p["record_every"],
                    eig_every=p["eig_every"], noise_every=p["noise_every"], w0=p["w0"], goe_dtype=p["goe_dtype"])
    runs = _pmap(lambda s: simulate(cfg.with_seed(s)), range(ctx.seed, ctx.seed + cfg.n_seeds), ctx.workers)
    traj_cols = (["t"] + [f"s_{k + 1}" for k in range(K)] + [f"lambda_{k + 1}" for k in range(K + 1)]
                 + [f"u_{k + 1}" for k in range(K)] + ["kappa", "outlier_count"])
    tables = {}
    for tr in runs:
        rows = [[t, *tr.s[i], *tr.lambda_top[i], *tr.u_sq[i], tr.kappa[i], int(tr.outlier_count[i])]
                for i, t in enumerate(tr.times)]
        tables[f"langevin_seed{tr.seed}"] = (traj_cols, rows)
    st = ensemble_stats(runs)
    cols = ["t"] + [f"s_{k + 1}_mean" for k in range(K)] + [f"s_{k + 1}_sem" for k in range(K)] + [
        "kappa_mean", "kappa_sem"]
    rows = [[t, *st.s_mean[i], *st.s_sem[i], st.kappa_mean[i], st.kappa_sem[i]] for i, t in enumerate(st.times)]
    tables["langevin"] = (cols, rows)

    def fig(out_dir):
        from .plotting import plot_panels

        panels = {"s_k": {f"s_{k + 1}": st.s_mean[:, k] for k in range(K)}, "kappa": {"kappa": st.kappa_mean}}
        bands = {f"s_{k + 1}": st.s_sem[:, k] for k in range(K)} | {"kappa": st.kappa_sem}
        m = runs[0].eig_mask
        lam_panel = {f"lambda_{k + 1}": runs[0].lambda_top[:, k] for k in range(K + 1)}
        out = [plot_panels(st.times, panels, out_dir / "langevin.png", bands=bands)]
        if m.sum() > 1:
            out.append(plot_panels(st.times[m], {"lambda (first seed)": {k: v[m] for k, v in lam_panel.items()}},
                                   out_dir / "langevin_eigenvalues.png"))
        return out

    summary = {"seeds": [tr.seed for tr in runs], "dt": cfg.dt,
               "max_outlier_count": int(max(tr.outlier_count.max() for tr in runs)),
               "max_sphere_error": float(max(tr.sphere_error for tr in runs))}
    return Output(tables, [fig], summary)


def cmd_kl_sweep(p: dict, ctx) -> Output:
    """The four teacher-student KLs and the tuned temperature over a grid."""
    from .equilibrium import Hyper
    from .metrics import Teacher, beta_tt, kl_report

    pts = [(w, g, e) for w in p["omega"] for g in p["gamma"] for e in p["eta"]]

    def row(pt):
        w, g, e = pt
        t, h = Teacher(w), Hyper(g, e)
        r = kl_report(t, h)
        b, ph = beta_tt(t, h)
        return [w, g, e, r.phase, r.reverse_typical, r.forward_typical, r.reverse_pp, r.forward_pp, b, ph.value]

    rows = _pmap(row, pts, ctx.workers)
    cols = ["omega_star", "gamma", "eta", "phase", "reverse_typical", "forward_typical", "reverse_pp",
            "forward_pp", "beta_opt", "beta_opt_phase"]

    def fig(out_dir):
        from .plotting import plot_lines

        w0 = p["omega"][0]
        series = {}
        for e in p["eta"]:
            sel = [r for r in rows if r[0] == w0 and r[2] == e]
            series[f"reverse typical, eta={e:g}"] = [r[4] for r in sel]
            series[f"reverse pp, eta={e:g}"] = [r[6] for r in sel]
        return [plot_lines(p["gamma"], series, out_dir / "kl-sweep.png", xlabel="gamma",
                           ylabel="KL / N", title=f"omega* = {w0:g}")]

    return Output({"kl-sweep": (cols, rows)}, [fig], {})


def _eta_fields(eta) -> tuple[float, float]:
    if isinstance(eta, tuple):
        return float(eta[0]), float(eta[1])
    return float(eta), float(eta)


def cmd_tempered(p: dict, ctx) -> Output:
    """Optimal posterior temperature classes for reverse and forward KL."""
    from .metrics import Teacher, tempered_forward_phase, tempered_reverse_phase

    pts = [(w, g) for w in p["omega"] for g in p["gamma"]]

    def classify(pt):
        w, g = pt
        t = Teacher(w)
        return w, g, tempered_reverse_phase(t, g), tempered_forward_phase(t, g)

    res = _pmap(classify, pts, ctx.workers)
    if ctx.fmt == "json":
        doc = [{"omega_star": w, "gamma": g, "reverse": r.to_dict(), "forward": f.to_dict()} for w, g, r, f in res]
        tables = {"tempered": doc}
    else:
        cols = ["omega_star", "gamma", "reverse_label", "reverse_eta_opt_lo", "reverse_eta_opt_hi",
                "forward_label", "forward_eta_opt_lo", "forward_eta_opt_hi"]
        rows = [[w, g, r.label.value, *_eta_fields(r.eta_opt), f.label.value, *_eta_fields(f.eta_opt)]
                for w, g, r, f in res]
        tables = {"tempered": (cols, rows)}

    def fig(out_dir):
        from .plotting import plot_lines

        w0 = p["omega"][0]
        sel = [v for v in res if v[0] == w0]
        cap = lambda e: min(_eta_fields(e)[0], 1e3)  # noqa: E731
        series = {"reverse eta_opt": [cap(r.eta_opt) for _, _, r, _ in sel],
                  "forward eta_opt": [cap(f.eta_opt) for _, _, _, f in sel]}
        return [plot_lines([v[1] for v in sel], series, out_dir / "tempered.png", xlabel="gamma",
                           ylabel="eta_opt (capped at 1e3)", title=f"omega* = {w0:g}")]

    return Output(tables, [fig], {})


def cmd_double_descent(p: dict, ctx) -> Output:
    """Reverse typical KL against gamma for several eta, with local minima."""
    from .equilibrium import Hyper
    from .metrics import Teacher, eta_dd, kl_reverse_typical

    w = p["omega"]
    t = Teacher(w)
    gammas = np.asarray(p["gamma"])

    def curve(e):
        return np.array([kl_reverse_typical(t, Hyper(float(g), e)) for g in gammas])

    curves = _pmap(curve, p["eta"], ctx.workers)
    rows = []
    minima = {}
    for e, y in zip(p["eta"], curves):
        is_min = np.zeros(len(y), dtype=int)
        is_min[1:-1] = (y[1:-1] < y[:-2]) & (y[1:-1] < y[2:])
        minima[e] = np.flatnonzero(is_min)
        rows += [[w, e, g, v, int(m)] for g, v, m in zip(gammas, y, is_min)]
    e_dd = eta_dd(w)

    def fig(out_dir):
        from .plotting import plot_lines

        series = {f"eta={e:g}": y for e, y in zip(p["eta"], curves)}
        mx = np.concatenate([gammas[minima[e]] for e in p["eta"]])
        my = np.concatenate([y[minima[e]] for e, y in zip(p["eta"], curves)])
        return [plot_lines(gammas, series, out_dir / "double-descent.png", xlabel="gamma",
                           ylabel="reverse KL / N", title=f"omega* = {w:g}, eta_DD = {e_dd:.4g}",
                           markers={"local minima": (mx, my)}, vlines={"gamma = c1": t.c1})]

    summary = {"eta_dd": e_dd, "local_minima": {f"{e:g}": gammas[minima[e]].tolist() for e in p["eta"]}}
    return Output({"double-descent": (["omega_star", "eta", "gamma", "reverse_typical", "local_min"], rows)},
                  [fig], summary)


def cmd_dynamics_kl(p: dict, ctx) -> Output:
    """KLs along a DMFT training run and the early-stopping time."""
    from .dmft import TimeGrid, solve_dmft
    from .equilibrium import Hyper
    from .metrics import Teacher, dynamic_kls, early_stopping_time

    t = Teacher(p["omega"])
    h = Hyper(p["gamma"], p["eta"], nu=p["nu"])
    s0 = p["s0"] if len(p["s0"]) == 2 else p["s0"] * 2
    sol = solve_dmft(t.spectrum, h, list(s0), TimeGrid(p["t_max"], p["dt"]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = dynamic_kls(sol.t, sol.s.T, t, h)
    try:
        t_star = early_stopping_time(t, h)
    except NoFiniteTime:
        t_star = math.inf
    cols = ["t", "s_1", "s_2", "theta_1", "reverse", "forward", "approximate"]
    rows = [[v, sol.s[0, i], sol.s[1, i], d.theta1[i], d.reverse[i], d.forward[i], int(d.approximate[i])]
            for i, v in enumerate(sol.t)]
    t_min = float(sol.t[int(np.argmin(d.reverse))])

    def fig(out_dir):
        from .plotting import plot_lines

        vl = {"t* (closed form)": t_star} if math.isfinite(t_star) else {}
        return [plot_lines(sol.t, {"reverse": d.reverse, "forward": d.forward}, out_dir / "dynamics-kl.png",
                           xlabel="t", ylabel="KL / N", vlines=vl)]

    return Output({"dynamics-kl": (cols, rows)}, [fig], {"early_stopping_time": t_star, "reverse_argmin": t_min})


def cmd_validate(p: dict, ctx) -> Output:
    """Run the acceptance checks and print one PASS/FAIL line each."""
    from .validation import CRITERIA, run_all

    numbers = p["criteria"] or tuple(sorted(CRITERIA))
    bad = [n for n in numbers if n not in CRITERIA]
    if bad:
        raise ConfigError(f"unknown criteria {bad}; valid are 1..{len(CRITERIA)}")
    results = run_all(numbers, log=lambda line: print(line, flush=True))
    rows = [[r.number, r.name, int(r.passed), r.detail, round(r.seconds, 1)] for r in results]
    ctx.validation_failed = not all(r.passed for r in results)
    return Output({"validate": (["criterion", "name", "passed", "detail", "seconds"], rows)}, [],
                  {"passed": sum(r.passed for r in results), "total": len(results)})


_S = "CSV columns: "
COMMANDS: dict[str, tuple[Callable, list[Param], str]] = {
    "phase-diagram": (cmd_phase_diagram, [
        Param("k", _opt(int), None, "number of data modes (K=1 -> c=1, K=2 -> c=1.5,0.5)"),
        Param("c", _opt(parse_range), None, "data eigenvalues c_1 > ... > c_K"),
        Param("gamma", parse_range, "0.01:4:200", "weight decay values; " + RANGE_HELP),
        Param("eta", parse_range, "0.01:4:200", "inverse learning temperatures; " + RANGE_HELP),
    ], _S + "gamma, eta, phase, d, a, h_sq, mu, lambda_1..lambda_K, u_1..u_K (u_k is the squared overlap)"),
    "dmft": (cmd_dmft, [
        Param("c", parse_range, "1.5,0.5", "data eigenvalues"),
        Param("gamma", float, 0.5, "weight decay"),
        Param("eta", float, 3.0, "inverse learning temperature"),
        Param("nu", float, 0.3, "sampling rate"),
        Param("s0", _opt(parse_range), None, "seed overlaps (default 0.1 per mode)"),
        Param("t_max", float, 30.0, "horizon"),
        Param("dt", float, 0.05, "time step"),
        Param("k_mult", _opt(float), None, "multiplier of the negative-phase kernel (default K)"),
        Param("checkpoint", _opt(str), None, "also write a binary checkpoint with this file name"),
    ], _S + "t, s_1..s_K, kappa, Q_t0, R_t0 (Q(t,0) and R(t,0))"),
    "langevin": (cmd_langevin, [
        Param("n", int, 1000, "dimension N"),
        Param("c", parse_range, "1.5,0.5", "data eigenvalues"),
        Param("gamma", float, 0.5, "weight decay"),
        Param("eta", float, 3.0, "inverse learning temperature"),
        Param("nu", float, 0.3, "sampling rate"),
        Param("s0", _opt(parse_range), None, "seed overlaps (default 0.1 per mode)"),
        Param("t_max", float, 30.0, "horizon"),
        Param("dt", _opt(float), None, "time step (default 1e-2 min(1, 1/nu, 1/gamma))"),
        Param("n_seeds", int, 1, "number of consecutive seeds starting at --seed"),
        Param("noise_every", int, 1, "redraw the GOE noise every this many steps"),
        Param("eig_every", _opt(float), None, "time between eigen-decompositions (default 0.1)"),
        Param("record_every", float, 0.1, "time between records"),
        Param("goe_dtype", _choice("float64", "float32"), "float64", "precision of the dense noise matrix"),
        Param("w0", _choice("prior", "zero"), "prior", "initial weights"),
    ], _S + "langevin.csv: t, s_k_mean, s_k_sem, kappa_mean, kappa_sem; langevin_seed<S>.csv: t, s_1..s_K, "
           "lambda_1..lambda_K+1, u_1..u_K, kappa, outlier_count (eigen columns empty off the eigen cadence)"),
    "kl-sweep": (cmd_kl_sweep, [
        Param("omega", parse_range, "2.5", "teacher strengths omega*; " + RANGE_HELP),
        Param("gamma", parse_range, "0.02:3:50", "weight decay values"),
        Param("eta", parse_range, "0.3,1,3,10", "inverse learning temperatures"),
    ], _S + "omega_star, gamma, eta, phase, reverse_typical, forward_typical, reverse_pp, forward_pp, "
           "beta_opt, beta_opt_phase (KLs per dimension)"),
    "tempered": (cmd_tempered, [
        Param("omega", parse_range, "2.2", "teacher strengths"),
        Param("gamma", parse_range, "0.05:2:40", "weight decay values"),
    ], _S + "omega_star, gamma, reverse_label, reverse_eta_opt_lo, reverse_eta_opt_hi, forward_label, "
           "forward_eta_opt_lo, forward_eta_opt_hi (lo = hi for point optima, inf for MAP); "
           "--format json writes the nested reports"),
    "double-descent": (cmd_double_descent, [
        Param("omega", float, 2.5, "teacher strength"),
        Param("eta", parse_range, "0.1,0.2,0.4,0.7,1,1.5,2,3,5", "one curve per value"),
        Param("gamma", parse_range, "0.02:3:300", "weight decay values"),
    ], _S + "omega_star, eta, gamma, reverse_typical, local_min (1 at interior local minima)"),
    "dynamics-kl": (cmd_dynamics_kl, [
        Param("omega", float, 2.5, "teacher strength"),
        Param("gamma", float, 0.4, "weight decay"),
        Param("eta", float, 10.0, "inverse learning temperature"),
        Param("nu", float, 20.0, "sampling rate of the DMFT run"),
        Param("s0", parse_range, "0.01,0.01", "seed overlaps"),
        Param("t_max", float, 8.0, "horizon"),
        Param("dt", float, 0.01, "time step"),
    ], _S + "t, s_1, s_2, theta_1, reverse, forward, approximate (1 where the early-training form is stretched)"),
    "validate": (cmd_validate, [
        Param("criteria", _opt(parse_int_list), None, "comma list of criteria to run (default all)"),
    ], _S + "criterion, name, passed, detail, seconds; exit status 4 if any criterion fails"),
}

RUN_KEYS = {"output_dir": _opt(str), "seed": int, "format": _choice("csv", "json"), "workers": int, "plots": _bool}
RUN_DEFAULTS = {"output_dir": None, "seed": 0, "format": "csv", "workers": 1, "plots": True}


# --- configuration ---------------------------------------------------------------


def _key_lines(path: Path) -> dict:
    """(section, key) -> line number, for diagnostics."""
    out, section = {}, None
    for i, line in enumerate(path.read_text().splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"\s*([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            out[(section, _norm(m.group(1)))] = i
    return out


def _norm(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def read_config(path, command: str) -> tuple[dict, dict]:
    """Parse an INI file into (run settings, command params), converted and checked."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    lines = _key_lines(path)
    params = {p.name: p for p in COMMANDS[command][1]}
    run, cmd = {}, {}
    for section in cp.sections():
        if section != "run" and section not in COMMANDS:
            raise ConfigError(f"{path}:{_section_line(path, section)}: unknown section [{section}]")
        if section not in ("run", command):
            continue
        known = RUN_KEYS if section == "run" else {k: v.conv for k, v in params.items()}
        target = run if section == "run" else cmd
        for key, raw in cp.items(section):
            name = _norm(key)
            where = f"{path}:{lines.get((section, name), '?')}"
            if name not in known:
                raise ConfigError(f"{where}: unknown key '{key}' in [{section}]; "
                                  f"valid keys: {', '.join(sorted(known))}")
            try:
                target[name] = known[name](raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: bad value for '{key}' in [{section}]: {exc}") from None
    return run, cmd


def _section_line(path: Path, section: str):
    for i, line in enumerate(path.read_text().splitlines(), 1):
        if re.match(rf"\s*\[{re.escape(section)}\]", line):
            return i
    return "?"


def _jsonable(v):
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else ("Infinity" if v > 0 else "-Infinity" if v < 0 else "NaN")
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def config_hash(command: str, params: dict, seed: int, fmt: str) -> str:
    canon = json.dumps(_jsonable({"command": command, "params": params, "seed": seed, "format": fmt}),
                       sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# --- output ----------------------------------------------------------------------


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return v


def write_table(path: Path, table, fmt: str) -> Path:
    if fmt == "json" or not isinstance(table, tuple):
        path = path.with_suffix(".json")
        if isinstance(table, tuple):
            cols, rows = table
            table = [dict(zip(cols, r)) for r in rows]
        path.write_text(json.dumps(_jsonable(table), indent=2, sort_keys=True) + "\n")
        return path
    path = path.with_suffix(".csv")
    cols, rows = table
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(v) for v in r])
    return path


@dataclass
class Context:
    out_dir: Path
    seed: int
    fmt: str
    workers: int
    extra_outputs: list
    validation_failed: bool = False


# --- parser and entry point ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbmlab",
        description="Spherical Boltzmann machine laboratory: theory sweeps, DMFT, finite-N simulation.",
        epilog=f"Ranges: {RANGE_HELP}. Output directory: --output-dir, else [run] output_dir in the config, "
               f"else ${OUTPUT_ENV}, else ./{DEFAULT_OUTPUT}. Exit status: 0 ok, 2 configuration or domain "
               f"error, 3 numerical failure, 4 validation failure.",
    )
    parser.add_argument("--version", action="version", version=f"sbmlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, params, schema) in COMMANDS.items():
        sp = sub.add_parser(name, help=(COMMANDS[name][0].__doc__ or name), epilog=schema + ". Ranges: " + RANGE_HELP + ".")
        for p in params:
            sp.add_argument(p.flag, dest=p.name, type=_argtype(p.conv), default=None,
                            help=f"{p.help} (default: {p.default})")
        sp.add_argument("--config", type=Path, help="INI config file; flags override its values")
        sp.add_argument("--output-dir", dest="output_dir", default=None)
        sp.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
        sp.add_argument("--format", choices=("csv", "json"), default=None, help="table format (default csv)")
        sp.add_argument("--workers", type=int, default=None, help="worker threads for sweeps and seeds (default 1)")
        sp.add_argument("--no-plots", dest="plots", action="store_const", const=False, default=None,
                        help="skip PNG figures")
    return parser


def resolve(ns: argparse.Namespace) -> tuple[dict, dict]:
    """Merge flags, config file and defaults; returns (run settings, params)."""
    run_cfg, cmd_cfg = read_config(ns.config, ns.command) if ns.config else ({}, {})
    run = {}
    for key, default in RUN_DEFAULTS.items():
        flag = getattr(ns, key)
        run[key] = flag if flag is not None else run_cfg.get(key, default)
    if run["output_dir"] is None:
        run["output_dir"] = os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
    if run["workers"] < 1:
        raise ConfigError("--workers must be at least 1")
    params = {}
    for p in COMMANDS[ns.command][1]:
        flag = getattr(ns, p.name)
        if flag is not None:
            params[p.name] = flag
        elif p.name in cmd_cfg:
            params[p.name] = cmd_cfg[p.name]
        else:
            params[p.name] = p.conv(p.default) if isinstance(p.default, str) else p.default
    return run, params


def run_command(ns: argparse.Namespace) -> int:
    run, params = resolve(ns)
    out_dir = Path(run["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = Context(out_dir, run["seed"], run["format"], run["workers"], [])
    handler = COMMANDS[ns.command][0]
    result = handler(params, ctx)
    outputs = [write_table(out_dir / name, table, ctx.fmt).name for name, table in result.tables.items()]
    outputs += ctx.extra_outputs
    if run["plots"]:
        for fig in result.figures:
            outputs += [Path(f).name for f in fig(out_dir)]
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": ns.command,
        "version": __version__,
        "seed": ctx.seed,
        "format": ctx.fmt,
        "params": params,
        "config_hash": config_hash(ns.command, params, ctx.seed, ctx.fmt),
        "outputs": sorted(outputs),
        "summary": result.summary,
    }
    (out_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return EXIT_VALIDATION if ctx.validation_failed else EXIT_OK


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, DomainError, StepTooLarge)):
        return EXIT_CONFIG
    return EXIT_NUMERIC


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return run_command(ns)
    except SbmError as exc:
        print(f"sbmlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
