from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbmlab.equilibrium import DataSpectrum, Hyper
from sbmlab.errors import ConfigError, DomainError, StabilityViolation
from sbmlab.langevin import (
    SimConfig,
    Simulator,
    _goe,
    align_signs,
    data_directions,
    default_dt,
    ensemble_stats,
    integrated_form_check,
    observables,
    simulate,
    simulate_ensemble,
)

HYPER = Hyper(0.5, 3.0, nu=0.3)
SPEC2 = DataSpectrum((1.5, 0.5))


def small(**kw) -> SimConfig:
    base = dict(N=200, hyper=HYPER, spectrum=SPEC2, t_max=1.0, s0=(0.1, 0.1), dt=0.02, seed=0)
    base.update(kw)
    return SimConfig(**base)


def test_default_dt() -> None:
    assert default_dt(Hyper(0.5, 3.0, nu=0.3)) == pytest.approx(1e-2)
    assert default_dt(Hyper(4.0, 3.0, nu=2.0)) == pytest.approx(2.5e-3)


def test_sphere_is_exact_every_step() -> None:
    tr = simulate(small(N=300, t_max=2.0))
    assert tr.sphere_error < 1e-13


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(5, 60), dt=st.floats(0.005, 0.05))
def test_sphere_property(seed, n, dt) -> None:
    tr = simulate(small(N=n, seed=seed, dt=dt, t_max=0.5, s0=(0.2, 0.0)))
    assert tr.sphere_error < 1e-13


def test_reproducible_given_seed() -> None:
    a = simulate(small())
    b = simulate(small())
    c = simulate(small(seed=1))
    np.testing.assert_array_equal(a.s, b.s)
    np.testing.assert_array_equal(a.kappa, b.kappa)
    assert not np.array_equal(a.s, c.s)


def test_ensemble_uses_consecutive_seeds() -> None:
    runs = simulate_ensemble(small(n_seeds=2, seed=5, t_max=0.2))
    assert [r.seed for r in runs] == [5, 6]
    np.testing.assert_array_equal(runs[1].s, simulate(small(seed=6, t_max=0.2)).s)


def test_data_directions_orthonormal_and_fixed() -> None:
    D = data_directions(300, 3)
    np.testing.assert_allclose(D.T @ D, np.eye(3), atol=1e-12)
    np.testing.assert_array_equal(D, data_directions(300, 3))


def test_initial_overlaps_match_seed() -> None:
    tr = simulate(small(t_max=0.1, s0=(0.3, -0.2)))
    np.testing.assert_allclose(tr.s[0], [0.3, -0.2], atol=1e-12)
    assert tr.times[0] == 0


def test_goe_entry_variances() -> None:
    rng = np.random.Generator(np.random.Philox(3))
    a = _goe(rng, 600)
    np.testing.assert_array_equal(a, a.T)
    off = a[np.triu_indices(600, 1)]
    assert off.var() == pytest.approx(1.0, abs=0.02)
    assert np.diag(a).var() == pytest.approx(2.0, abs=0.3)


def test_prior_start_has_no_alignment_or_outliers() -> None:
    N = 500
    for seed in range(3):
        tr = simulate(SimConfig(N=N, hyper=Hyper(1.5, 8.0, nu=1.0), spectrum=DataSpectrum((1.0,)), t_max=0.02,
                                dt=0.02, seed=seed))
        assert tr.outlier_count[0] == 0
        assert tr.u_sq[0, 0] < 20 / N


def test_stationary_prior_bulk_edge() -> None:
    N = 500
    tr = simulate(SimConfig(N=N, hyper=Hyper(1.0, 1.0, nu=0.5), spectrum=DataSpectrum((1.0,)), t_max=0.02,
                            dt=0.02, seed=4))
    assert tr.lambda_top[0, 0] == pytest.approx(2.0, abs=0.1)


def test_record_and_eigen_cadence() -> None:
    cfg = small(t_max=1.0, dt=0.02)
    assert cfg.record_stride == 5 and cfg.eig_stride == 5
    tr = simulate(cfg)
    np.testing.assert_allclose(tr.times, np.arange(11) * 0.1, atol=1e-12)
    assert tr.eig_mask.all()
    sparse = simulate(small(t_max=1.0, eig_every=0.5))
    assert list(np.flatnonzero(sparse.eig_mask)) == [0, 5, 10]
    assert np.isnan(sparse.lambda_top[1]).all() and sparse.outlier_count[1] == -1


def test_outlier_count_never_exceeds_k() -> None:
    tr = simulate(SimConfig(N=500, hyper=Hyper(0.4, 10.0, nu=0.7), spectrum=DataSpectrum((1.7, 0.3)),
                            t_max=12.0, s0=(0.1, 0.0), dt=0.02, eig_every=0.5, noise_every=5))
    m = tr.eig_mask
    assert tr.outlier_count[m].max() <= 2
    assert tr.outlier_count[m][-1] >= 1


# integrated form


def _paths_cfg(dt: float, **kw) -> SimConfig:
    base = dict(N=30, hyper=HYPER, spectrum=SPEC2, t_max=2.0, s0=(0.3, 0.1), dt=dt, seed=2,
                record_paths=True, record_every=0.5)
    base.update(kw)
    return SimConfig(**base)


def test_integrated_form_zero_noise_frozen_chain() -> None:
    cfg = _paths_cfg(0.02, weight_noise=False, frozen_chain=True)
    rep = integrated_form_check(simulate(cfg), cfg)
    assert rep["max_residual"] < 1e-8
    assert len(rep["times"]) == 5


def test_integrated_form_with_weight_noise_frozen_chain() -> None:
    cfg = _paths_cfg(0.02, frozen_chain=True)
    assert integrated_form_check(simulate(cfg), cfg)["max_residual"] < 1e-8


def test_integrated_form_refinement_order() -> None:
    res = []
    for dt in (0.02, 0.01, 0.005):
        cfg = _paths_cfg(dt)
        res.append(integrated_form_check(simulate(cfg), cfg)["max_residual"])
    assert res[0] > 1e-6
    assert res[1] / res[0] < 0.7 and res[2] / res[1] < 0.7


def test_integrated_form_needs_paths() -> None:
    cfg = small(t_max=0.1)
    with pytest.raises(ConfigError):
        integrated_form_check(simulate(cfg), cfg)


def test_spike_grows_linearly_at_small_gamma_t() -> None:
    cfg = SimConfig(N=100, hyper=Hyper(0.01, 3.0, nu=0.3), spectrum=SPEC2, t_max=2.0, dt=0.02,
                    w0="zero", weight_noise=False, frozen_chain=True)
    sim = Simulator(cfg)
    q1 = sim.D[:, 0]
    for t in (0.5, 1.0, 2.0):
        sim.run(t)
        val = q1 @ sim.W_dense() @ q1
        assert val == pytest.approx(1.5 * t / 2, rel=0.01)
        assert val == pytest.approx(1.5 * (1 - math.exp(-0.005 * t)) / 0.01, rel=1e-12)


def test_interpolated_goe_keeps_marginal_variance() -> None:
    sim = Simulator(small(noise_every=10))
    for n in range(10):
        a, b = sim._interp()
        assert a * a + b * b + 2 * a * b * sim.block_decay == pytest.approx(1.0, abs=1e-14)
        sim.step()


def test_interpolated_goe_from_zero_start() -> None:
    sim = Simulator(small(noise_every=4, w0="zero"))
    g = sim.cfg.hyper.gamma
    for _ in range(9):
        sim.step()
        a, b = sim._interp()
        t = sim.t
        th = sim._theta()
        t_a = t - th * sim.block
        va, vb = -math.expm1(-g * t_a), -math.expm1(-g * (t_a + sim.block))
        var = a * a * va + b * b * vb + 2 * a * b * sim.block_decay * va
        assert var == pytest.approx(-math.expm1(-g * t), rel=1e-12)


# checkpoints and export


def test_checkpoint_resume_is_bitwise(tmp_path) -> None:
    cfg = small(t_max=1.0, noise_every=3)
    full = simulate(cfg)
    sim = Simulator(cfg).run(0.46)
    sim.save(tmp_path / "ck.bin")
    resumed = Simulator.load(tmp_path / "ck.bin").run().trajectory()
    np.testing.assert_array_equal(resumed.s, full.s)
    np.testing.assert_array_equal(resumed.kappa, full.kappa)
    np.testing.assert_array_equal(resumed.lambda_top, full.lambda_top)


def test_checkpoint_rejects_foreign_file(tmp_path) -> None:
    p = tmp_path / "x.bin"
    p.write_bytes(b"not a checkpoint at all")
    with pytest.raises(DomainError):
        Simulator.load(p)


def test_config_dict_round_trip() -> None:
    cfg = small(noise_every=2, goe_dtype="float32")
    assert SimConfig.from_dict(cfg.to_dict()) == cfg


def test_csv_export(tmp_path) -> None:
    tr = simulate(small(t_max=0.2))
    tr.write_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["t", "s_1", "s_2", "lambda_1", "lambda_2", "lambda_3", "u_1", "u_2", "kappa", "outlier_count"]
    assert len(rows) == 1 + len(tr.times)
    assert float(rows[2][1]) == tr.s[1, 0]


# observables and ensembles


def test_observables_flip_sign_and_check_k() -> None:
    tr = simulate(small(t_max=0.2, s0=(-0.3, 0.1)))
    obs = observables(tr, SPEC2)
    assert obs.s[-1, 0] >= 0
    assert obs.outlier_count.min() >= 0
    with pytest.raises(DomainError):
        observables(tr, DataSpectrum((1.0,)))


def test_align_signs_and_stats() -> None:
    tr = simulate(small(t_max=0.2))
    flipped = simulate(small(t_max=0.2))
    flipped.s = -flipped.s
    signs = align_signs([tr, flipped])
    assert signs[0] == -signs[1]
    st_ = ensemble_stats([tr, flipped], reference=tr.s[:, 0])
    np.testing.assert_allclose(st_.s_mean, tr.s, atol=1e-15)
    np.testing.assert_allclose(st_.s_sem, 0, atol=1e-15)
    one = ensemble_stats([tr])
    assert np.all(one.kappa_sem == 0)


def test_config_errors() -> None:
    with pytest.raises(ConfigError):
        small(N=1)
    with pytest.raises(ConfigError):
        small(s0=(0.1,))
    with pytest.raises(ConfigError):
        small(s0=(0.8, 0.7))
    with pytest.raises(ConfigError):
        small(w0="cold")
    with pytest.raises(ConfigError):
        small(goe_dtype="float16")
    with pytest.raises(ConfigError):
        small(noise_every=0)
    with pytest.raises(ConfigError):
        small(N=500, record_paths=True)
    with pytest.raises(StabilityViolation):
        small(dt=2.0)
    with pytest.raises(ConfigError):
        Simulator(small(t_max=0.1, record_paths=True, N=20)).save("/dev/null")
