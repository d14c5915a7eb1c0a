from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbmlab.dmft import (
    DynParams,
    TimeGrid,
    condensation_onset_time,
    critical_nu,
    detachment_time,
    early_outlier_trajectory,
    large_k_stationary,
    load_checkpoint,
    map_condensation_boundary,
    map_condensation_floor,
    rescale_invariant_large_k,
    save_checkpoint,
    solve_dmft,
    stationary_solve,
    to_bare,
    to_invariant,
)
from sbmlab.equilibrium import DataSpectrum, Hyper, classify_phase
from sbmlab.errors import DomainError, NonConvergence, StepTooLarge

VALIDATION = Hyper(0.5, 3.0, nu=0.3)


@pytest.fixture(scope="module")
def case_a():
    return solve_dmft(DataSpectrum((1.5, 0.5)), VALIDATION, [0.1, 0.1], TimeGrid(30, 0.05))


def test_equal_time_constraints(case_a) -> None:
    assert np.array_equal(np.diag(case_a.Q), np.ones(case_a.grid.n + 1))
    assert np.array_equal(np.diag(case_a.R), np.ones(case_a.grid.n + 1))


def test_symmetry_and_causality(case_a) -> None:
    Q, R = case_a.Q, case_a.R
    assert np.array_equal(Q, Q.T)
    assert np.all(np.abs(Q) <= 1 + 1e-12)
    assert np.all(np.triu(R, 1) == 0)


def test_prefix_is_independent_of_horizon(case_a) -> None:
    short = solve_dmft(DataSpectrum((1.5, 0.5)), VALIDATION, [0.1, 0.1], TimeGrid(10, 0.05))
    n = short.grid.n + 1
    assert np.array_equal(short.s, case_a.s[:, :n])
    assert np.array_equal(short.Q, case_a.Q[:n, :n])
    assert np.array_equal(short.kappa, case_a.kappa[:n])


def test_case_a_one_channel_condenses(case_a) -> None:
    assert case_a.s[0, -1] == pytest.approx(0.60, abs=5e-3)
    assert abs(case_a.s[1, -1]) < 1e-4


def test_case_b_plateau() -> None:
    sol = solve_dmft(DataSpectrum((1.8, 0.2)), VALIDATION, [0.1, 0.1], TimeGrid(30, 0.05))
    assert sol.s[0, -1] == pytest.approx(0.67, abs=5e-3)
    assert abs(sol.s[1, -1]) < 1e-4


def test_pure_paramagnet_decays() -> None:
    sol = solve_dmft(DataSpectrum((0.3,)), VALIDATION, [0.1], TimeGrid(30, 0.05))
    assert abs(sol.s[0, -1]) < 1e-4
    # only the thermal part nu + nu <x W x> survives, below the bare rate
    assert 0 < sol.kappa[-1] < VALIDATION.nu


def test_grid_convergence_of_plateau(case_a) -> None:
    fine = solve_dmft(DataSpectrum((1.5, 0.5)), VALIDATION, [0.1, 0.1], TimeGrid(30, 0.025))
    assert abs(fine.s[0, -1] - case_a.s[0, -1]) < 1e-3


def test_plateau_matches_stationary_branch(case_a) -> None:
    st_ = stationary_solve(DataSpectrum((1.5, 0.5)), VALIDATION)
    assert st_.branch == "condensed"
    assert st_.s_st[1] == 0
    assert st_.s_st[0] == pytest.approx(case_a.s[0, -1], abs=5e-3)


def test_corrector_iterations_bounded(case_a) -> None:
    assert case_a.params["max_corrector_iterations"] < 50


def test_step_guard() -> None:
    with pytest.raises(StepTooLarge):
        solve_dmft(DataSpectrum((1.0,)), Hyper(0.5, 3.0, nu=10.0), [0.1], TimeGrid(1, 0.1))


def test_seed_validation() -> None:
    with pytest.raises(DomainError):
        solve_dmft(DataSpectrum((1.0,)), VALIDATION, [1.0], TimeGrid(1, 0.1))
    with pytest.raises(DomainError):
        solve_dmft(DataSpectrum((1.5, 0.5)), VALIDATION, [0.1], TimeGrid(1, 0.1))


def test_step_cap_is_explicit() -> None:
    with pytest.raises(DomainError):
        solve_dmft(DataSpectrum((1.0,)), VALIDATION, [0.1], TimeGrid(10, 0.001))


def test_corrector_cap_reports_diagnostics() -> None:
    with pytest.raises(NonConvergence) as info:
        solve_dmft(DataSpectrum((1.5,)), VALIDATION, [0.1], TimeGrid(1, 0.05), max_iter=1)
    assert info.value.diagnostics["iterations"] == 1


def test_zero_seed_mode_stays_zero() -> None:
    sol = solve_dmft(DataSpectrum((1.5, 0.5)), VALIDATION, [0.1, 0.0], TimeGrid(5, 0.05))
    assert np.all(sol.s[1] == 0)


def test_checkpoint_round_trip(case_a, tmp_path) -> None:
    path = tmp_path / "run.ckpt"
    save_checkpoint(case_a, path)
    back = load_checkpoint(path)
    assert back.grid == case_a.grid
    for name in ("Q", "R", "s", "kappa"):
        assert np.array_equal(getattr(back, name), getattr(case_a, name))
    assert back.params == case_a.params


def test_checkpoint_rejects_foreign_file(tmp_path) -> None:
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(DomainError):
        load_checkpoint(path)


# early-time outliers


def test_detachment_time_example() -> None:
    spec = DataSpectrum((1.7, 0.3))
    hyper = Hyper(0.4, 10.0)
    expected = -5 * math.log(1 - 0.2 / 1.7)
    assert detachment_time(0, spec, hyper) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.6255, abs=5e-4)
    assert detachment_time(1, spec, hyper) == pytest.approx(-5 * math.log(1 - 0.2 / 0.3), rel=1e-12)
    assert detachment_time(0, DataSpectrum((0.15,)), hyper) == math.inf


def test_detachment_vanishes_for_strong_modes() -> None:
    hyper = Hyper(0.4, 10.0)
    times = [detachment_time(0, DataSpectrum((c,)), hyper) for c in (1.0, 10.0, 1e3, 1e6)]
    assert np.all(np.diff(times) < 0)
    assert times[-1] < 1e-5


def test_outlier_trajectory_limits() -> None:
    spec = DataSpectrum((1.7, 0.3))
    hyper = Hyper(0.4, 10.0)
    edge = hyper.bulk.edge
    assert early_outlier_trajectory(0, 0.5, spec, hyper) == edge
    c = 1.7
    assert early_outlier_trajectory(0, 200.0, spec, hyper) == pytest.approx(c / 0.4 + 1 / (10 * c), rel=1e-12)
    weak = DataSpectrum((0.15,))
    assert np.all(early_outlier_trajectory(0, np.linspace(0, 50, 11), weak, hyper) == edge)


def test_outlier_leaves_edge_continuously() -> None:
    spec = DataSpectrum((1.7,))
    hyper = Hyper(0.4, 10.0)
    t_out = detachment_time(0, spec, hyper)
    lam = early_outlier_trajectory(0, t_out * (1 + 1e-9), spec, hyper)
    assert lam == pytest.approx(hyper.bulk.edge, rel=1e-6)


def test_never_detaching_mode() -> None:
    hyper = Hyper(0.4, 10.0)
    spec = DataSpectrum((math.sqrt(0.04),))
    assert detachment_time(0, spec, hyper) == math.inf
    assert early_outlier_trajectory(0, 1e3, spec, hyper) == hyper.bulk.edge


def test_outlier_trajectory_rejects_negative_time() -> None:
    with pytest.raises(DomainError):
        early_outlier_trajectory(0, -1.0, DataSpectrum((1.7,)), Hyper(0.4, 10.0))


# onset time


@pytest.fixture(scope="module")
def fig_run():
    return solve_dmft(DataSpectrum((1.7, 0.3)), Hyper(0.4, 10.0, nu=0.7), [0.1, 0.1], TimeGrid(30, 0.02))


def test_onset_between_detachment_and_plateau(fig_run) -> None:
    sol = fig_run
    t_star = condensation_onset_time(sol, threshold=0.05)
    t_out = detachment_time(0, DataSpectrum((1.7, 0.3)), Hyper(0.4, 10.0))
    assert t_out < t_star < 10
    assert abs(sol.s[0, -1]) > 0.5


def test_onset_edge_cases(fig_run) -> None:
    sol = fig_run
    assert condensation_onset_time(sol, threshold=1e-3) is None
    assert condensation_onset_time(sol, threshold=0.2) == 0.0
    decay = solve_dmft(DataSpectrum((0.3,)), VALIDATION, [0.1], TimeGrid(30, 0.05))
    assert condensation_onset_time(decay, threshold=0.05) is None


# stationary regime


def test_stationary_uncondensed_below_threshold() -> None:
    st_ = stationary_solve(DataSpectrum((1.0,)), Hyper(0.9, 3.0, nu=1.0))
    assert st_.branch == "uncondensed"
    assert np.all(st_.s_st == 0)
    assert st_.Q_st[0] == pytest.approx(1.0, abs=1e-12)
    assert st_.R_st[0] == pytest.approx(1.0, abs=1e-12)
    assert 1.0 * st_.chi_P < 0.9


def test_stationary_signal_rises_towards_equilibrium() -> None:
    hyper = Hyper(0.9, 3.0)
    eq = classify_phase(DataSpectrum((1.0,)), hyper)
    asymptote = math.sqrt(eq.h_sq * eq.u_sq[0])
    s = [stationary_solve(DataSpectrum((1.0,)), hyper.with_(nu=nu)).s_st[0] for nu in (3.5, 5.0, 10.0, 20.0)]
    assert np.all(np.diff(s) > 0)
    assert 0 < s[0] and s[-1] < asymptote


def test_stationary_refinement_is_consistent() -> None:
    coarse = stationary_solve(DataSpectrum((1.5, 0.5)), VALIDATION)
    refined = stationary_solve(DataSpectrum((1.5, 0.5)), VALIDATION, refine=True)
    assert refined.diagnostics["refined"]
    assert abs(refined.q - coarse.q) < 1e-4


@pytest.fixture(scope="module")
def nu_c_09():
    return critical_nu(DataSpectrum((1.0,)), Hyper(0.9, 3.0))


def test_critical_nu_finite_and_guarded(nu_c_09) -> None:
    assert math.isfinite(nu_c_09)
    assert nu_c_09 * 1e-2 < 0.6
    st_ = stationary_solve(DataSpectrum((1.0,)), Hyper(0.9, 3.0, nu=nu_c_09))
    assert nu_c_09 * st_.chi_P == pytest.approx(0.9, rel=1e-6)


def test_condensed_branch_continuous_at_threshold(nu_c_09) -> None:
    hyper = Hyper(0.9, 3.0)
    s = [stationary_solve(DataSpectrum((1.0,)), hyper.with_(nu=nu_c_09 * f)).s_st[0] for f in (1.02, 1.1)]
    assert 0 < s[0] < s[1]
    assert s[0] < 0.05


def test_critical_nu_absent_for_strong_decay() -> None:
    assert critical_nu(DataSpectrum((1.0,)), Hyper(2.0, 3.0), check_refinement=False) == math.inf


# MAP limit


def test_map_floor_value() -> None:
    assert map_condensation_floor() == pytest.approx(0.8318, abs=5e-4)


@pytest.mark.parametrize("gamma, exists", [(2.0, False), (1.0, False), (0.9, True), (0.8, False)])
def test_map_boundary_examples(gamma, exists) -> None:
    assert map_condensation_boundary(gamma) is exists


def test_map_boundary_domain() -> None:
    with pytest.raises(DomainError):
        map_condensation_boundary(0.0)


# large K


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0.01, 10),
    st.floats(0.01, 10),
    st.floats(0.01, 10),
    st.floats(0.01, 10),
    st.integers(1, 4096),
    st.integers(1, 8),
)
def test_rescale_round_trip(gamma, eta, nu, c, K, Kp) -> None:
    p = DynParams(gamma, eta, nu, (c, c / 2), 3.0)
    back = to_bare(to_invariant(p, K, Kp), K, Kp)
    for a, b in zip((p.gamma, p.eta, p.nu, *p.c, p.t_max), (back.gamma, back.eta, back.nu, *back.c, back.t_max)):
        assert b == pytest.approx(a, rel=1e-14)


def test_rescale_identity_and_wrapper() -> None:
    p = DynParams(0.5, 3.0, 0.3, (1.5,), 30.0)
    assert to_invariant(p, 7, 7) == p
    assert rescale_invariant_large_k(p, 8) == to_invariant(p, 8)
    assert rescale_invariant_large_k(to_invariant(p, 8), 8, inverse=True) == p


def test_invariant_solve_reproduces_bare_solve() -> None:
    r = 8
    bare = DynParams(0.5, 1.0, 1.0, (1.5 * r,), 5.0)
    inv = to_invariant(bare, r)
    b = solve_dmft(DataSpectrum(bare.c), Hyper(bare.gamma, bare.eta, nu=bare.nu), [0.1], TimeGrid(bare.t_max, 0.01), k_mult=r)
    i = solve_dmft(DataSpectrum(inv.c), Hyper(inv.gamma, inv.eta, nu=inv.nu), [0.1], TimeGrid(inv.t_max, 0.01 * r), k_mult=1)
    np.testing.assert_allclose(i.s, b.s, atol=1e-12)
    np.testing.assert_allclose(i.kappa * r, b.kappa, rtol=1e-12)
    np.testing.assert_allclose(i.Q, b.Q, atol=1e-12)


@pytest.mark.parametrize(
    "ct, gamma, expected",
    [(0.7, 1.0, (0.7, 0.0)), (1.0, 1.0, (1.0, 0.0)), (1.5, 0.5, (1.0, 1.0))],
)
def test_large_k_closed_form(ct, gamma, expected) -> None:
    assert large_k_stationary(ct, gamma) == pytest.approx(expected, abs=1e-15)


def test_large_k_closed_form_domain() -> None:
    with pytest.raises(DomainError):
        large_k_stationary(-1.0, 1.0)
