from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from sbmlab.errors import DomainError
from sbmlab.spectral import (
    SemicircleBulk,
    density,
    inverse_stieltjes,
    stieltjes_b,
    stieltjes_f,
    stieltjes_g,
)

UNIT = SemicircleBulk(1.0)


def test_density_values() -> None:
    assert density(UNIT, 0.0) == pytest.approx(1 / np.pi)
    assert density(UNIT, 2.0) == 0.0
    assert density(SemicircleBulk(0.5), 3.0) == 0.0


@pytest.mark.parametrize("sigma", [0.1, 1.0, 10.0])
def test_density_normalised(sigma: float) -> None:
    bulk = SemicircleBulk(sigma)
    total, _ = quad(lambda x: density(bulk, x), -2 * sigma, 2 * sigma, epsabs=1e-12, epsrel=1e-12)
    assert abs(total - 1) < 1e-8


def test_g_edge_and_tail() -> None:
    assert stieltjes_g(UNIT, 2.0) == pytest.approx(1.0)
    assert abs(stieltjes_g(UNIT, 100.0) - 0.01) < 1e-3


def test_g_round_trip_frozen_value() -> None:
    bulk = SemicircleBulk(1 / np.sqrt(1.5))
    z = inverse_stieltjes(bulk, 0.6404)
    assert stieltjes_g(bulk, z) == pytest.approx(0.6404, abs=1e-14)


def test_g_matches_quadrature() -> None:
    bulk = SemicircleBulk(0.7)
    z = 3.0
    ref, _ = quad(lambda x: density(bulk, x) / (z - x), -1.4, 1.4, epsabs=1e-13)
    assert stieltjes_g(bulk, z) == pytest.approx(ref, abs=1e-10)


def test_f_values() -> None:
    assert stieltjes_f(UNIT, 2.0) == pytest.approx(0.5)
    h = 1e-4
    fd = (stieltjes_f(UNIT, 3 + h) - stieltjes_f(UNIT, 3 - h)) / (2 * h)
    assert abs(fd - stieltjes_g(UNIT, 3.0)) < 1e-6


def test_f_is_log_potential() -> None:
    # F(z) = int rho(l) ln(z - l) dl, checked by quadrature
    z = 2.5
    ref, _ = quad(lambda x: density(UNIT, x) * np.log(z - x), -2, 2, epsabs=1e-13)
    assert stieltjes_f(UNIT, z) == pytest.approx(ref, abs=1e-9)
    assert stieltjes_f(UNIT, z) >= np.log(z) - 1


def test_b_values() -> None:
    assert stieltjes_b(UNIT, 2.0) == pytest.approx(1.0)
    assert abs(stieltjes_b(UNIT, 100.0)) < 3e-4
    bulk = SemicircleBulk(0.7)
    ref, _ = quad(lambda x: x * density(bulk, x) / (3.0 - x), -1.4, 1.4, epsabs=1e-13)
    assert abs(stieltjes_b(bulk, 3.0) - ref) < 1e-6


def test_inverse_values_and_domain() -> None:
    assert inverse_stieltjes(UNIT, 1.0) == pytest.approx(2.0)
    assert inverse_stieltjes(UNIT, 0.5) == pytest.approx(2.5)
    assert stieltjes_g(UNIT, 2.5) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        inverse_stieltjes(SemicircleBulk(2.0), 0.6)
    with pytest.raises(DomainError):
        stieltjes_g(UNIT, 1.5)


sigmas = st.floats(min_value=1e-2, max_value=1e2)


@settings(max_examples=200, deadline=None)
@given(sigma=sigmas, frac=st.floats(min_value=1e-6, max_value=1 - 1e-3))
def test_round_trip_property(sigma: float, frac: float) -> None:
    bulk = SemicircleBulk(sigma)
    a = frac / sigma
    back = stieltjes_g(bulk, inverse_stieltjes(bulk, a))
    assert abs(back - a) <= 1e-12 * max(1.0, a)


@settings(max_examples=200, deadline=None)
@given(sigma=sigmas, frac=st.floats(min_value=1 - 1e-3, max_value=1.0))
def test_round_trip_near_edge(sigma: float, frac: float) -> None:
    # G has a square-root branch point at the edge, so a rounding of z
    # by one ulp moves G by ~sqrt(eps); that is the achievable accuracy
    bulk = SemicircleBulk(sigma)
    a = frac / sigma
    back = stieltjes_g(bulk, inverse_stieltjes(bulk, a))
    assert abs(back - a) * sigma <= 1e-12 + 4 * np.sqrt(np.finfo(float).eps)


def test_round_trip_exact_edge() -> None:
    for sigma in np.geomspace(1e-2, 1e2, 41):
        bulk = SemicircleBulk(sigma)
        assert stieltjes_g(bulk, inverse_stieltjes(bulk, 1 / sigma)) == pytest.approx(1 / sigma, rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(sigma=sigmas, offset=st.floats(min_value=0.05, max_value=20.0))
def test_f_derivative_property(sigma: float, offset: float) -> None:
    bulk = SemicircleBulk(sigma)
    z = bulk.edge + offset * sigma
    h = 1e-5 * sigma
    fd = (stieltjes_f(bulk, z + h) - stieltjes_f(bulk, z - h)) / (2 * h)
    g = stieltjes_g(bulk, z)
    assert abs(fd - g) / g < 1e-5


@settings(max_examples=100, deadline=None)
@given(sigma=sigmas, offset=st.floats(min_value=0.0, max_value=50.0))
def test_b_identity_and_monotone_g(sigma: float, offset: float) -> None:
    bulk = SemicircleBulk(sigma)
    z = bulk.edge + offset * sigma
    assert stieltjes_b(bulk, z) == pytest.approx(z * stieltjes_g(bulk, z) - 1, abs=1e-12)
    assert stieltjes_g(bulk, z + 0.1 * sigma) < stieltjes_g(bulk, z)
