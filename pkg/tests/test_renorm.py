"""Tests for heat-regularized determinants and counterterm fits."""

import logging
import math

import numpy as np
import pytest

from specdet.core.determinants import zeta_det_monodromy
from specdet.core.execution import GridExecutor
from specdet.core.geometry import Geometry, ModeBasis, PerturbationField
from specdet.core.renorm import (
    counterterm_extract,
    regularized_fredholm,
    regularized_green,
    regularized_trace,
    renormalize_samples,
    renormalized_det,
)
from specdet.errors import CounterTermError, InsufficientDataError


def test_exact_log_sample_is_recovered():
    eps = np.geomspace(1e-3, 1e-1, 10)
    fit = counterterm_extract({e: math.log(e) for e in eps}, tags=("log_eps", "const", "eps"))
    assert fit.coefficients["log_eps"] == pytest.approx(1.0, abs=1e-10)
    assert fit.coefficients["const"] == 0.0
    assert fit.coefficients["eps"] == 0.0


def test_grid_requirements():
    with pytest.raises(InsufficientDataError):
        counterterm_extract({e: 0.0 for e in np.geomspace(1e-3, 1e-1, 5)})
    with pytest.raises(InsufficientDataError):
        counterterm_extract({e: 0.0 for e in np.geomspace(1e-2, 1e-1, 10)})
    with pytest.raises(InsufficientDataError):
        counterterm_extract({e: 0.0 for e in np.linspace(1e-3, 1e-1, 10)})
    with pytest.raises(ValueError):
        counterterm_extract({e: math.log(e) for e in np.geomspace(1e-3, 1e-1, 10)}, tags=("log_eps", "eps^3"))


def test_regularized_trace_and_free_case():
    torus = Geometry.torus()
    basis = ModeBasis.build(torus, 8)
    g = regularized_green(basis, 0.01)
    assert regularized_trace(PerturbationField.cosine((1, 0)), 0.01, basis) == 0
    constant = PerturbationField.constant(0.5, dimension=2)
    assert regularized_trace(constant, 0.01, basis) == pytest.approx(0.5 * g.sum())
    assert regularized_fredholm(None, 0.01, basis).value == 1
    with pytest.raises(ValueError):
        regularized_fredholm(constant, 0.0, basis)


@pytest.fixture(scope="module")
def fine_torus_basis():
    return ModeBasis.build(Geometry.torus(mass=1.0), 1024)


def _shifted(grid, fraction):
    return grid * (grid[-1] / grid[0]) ** (fraction / (len(grid) - 1))


def test_constant_field_log_coefficient_on_torus(fine_torus_basis):
    torus = Geometry.torus(mass=1.0)
    V = PerturbationField.constant(0.5, dimension=2)
    grid = np.geomspace(1e-5, 1e-3, 12)
    result = renormalized_det(V, torus, fine_torus_basis, grid, executor=GridExecutor(2))
    expected = -V.integral(torus).real / (4 * math.pi)
    assert result.fit.coefficients["log_eps"] == pytest.approx(expected, rel=1e-2)
    assert "eps^1/2" not in result.fit.coefficients
    assert result.counterterm.max_order == 1
    assert result.counterterm.orders[1].coefficients["log_eps"] == pytest.approx(-1 / (4 * math.pi), rel=1e-2)

    c = 0.7
    shifted = result.shifted(c, V.integral(torus))
    assert shifted.log_value.real == pytest.approx(result.det.log_value.real + c * V.integral(torus).real)


def test_renormalized_limit_is_stable_across_grids(fine_torus_basis):
    torus = Geometry.torus(mass=1.0)
    V = PerturbationField.constant(0.5, dimension=2)
    grid = np.geomspace(1e-5, 1e-3, 12)
    first = renormalized_det(V, torus, fine_torus_basis, grid)
    second = renormalized_det(V, torus, fine_torus_basis, _shifted(grid, 0.5))
    assert abs(first.det.log_value.real - second.det.log_value.real) < 1e-5


def _cosine_log_det(basis, eps, amplitude):
    """log det_F(Id + g V) for V = amplitude cos(x_1): one tridiagonal block per n_2."""
    side = basis.side
    g = regularized_green(basis, eps).reshape(side, side)
    coupling = (amplitude / 2) ** 2 * g[1:] * g[:-1]
    previous, current = np.ones(side), np.ones(side)
    for k in range(side - 1):
        previous, current = current, current - coupling[k] * previous
    return float(np.sum(np.log(current)))


def test_cosine_blocks_match_fredholm():
    torus = Geometry.torus(mass=1.0)
    basis = ModeBasis.build(torus, 8)
    V = PerturbationField.cosine((1, 0), 0.5)
    for eps in (0.01, 0.1):
        direct = regularized_fredholm(V, eps, basis, torus).log_value.real
        assert _cosine_log_det(basis, eps, 0.5) == pytest.approx(direct, rel=1e-10, abs=1e-12)


def test_mean_zero_field_on_torus_needs_no_counterterm(fine_torus_basis):
    torus = Geometry.torus(mass=1.0)
    V = PerturbationField.cosine((1, 0), 0.5)
    grid = np.geomspace(1e-5, 1e-3, 12)
    samples = {e: _cosine_log_det(fine_torus_basis, e, 0.5) for e in grid}
    result = renormalize_samples(samples, V, torus, cutoff=1024)
    assert abs(result.fit.coefficients["log_eps"]) < 1e-6
    assert result.counterterm.is_empty
    # with zero trace the limit is the unregularized det_2
    unregularized = _cosine_log_det(fine_torus_basis, 0.0, 0.5)
    assert result.det.log_value.real == pytest.approx(unregularized, abs=1e-5)


def test_mean_zero_field_on_circle_has_no_log_term():
    circle = Geometry.circle(mass=1.0)
    basis = ModeBasis.build(circle, 800)
    V = PerturbationField.cosine(1, 0.8)
    result = renormalized_det(V, circle, basis, np.geomspace(2e-5, 2e-3, 12))
    assert abs(result.fit.coefficients["log_eps"]) < 1e-6
    assert result.counterterm.is_empty
    # in one dimension the ε -> 0 limit is the plain determinant ratio
    oracle = zeta_det_monodromy(V, 1.0, circle)
    assert result.det.log_value.real == pytest.approx(oracle.log_value.real, abs=1e-4)


@pytest.mark.slow
def test_circle_limit_at_fine_cutoff():
    circle = Geometry.circle(mass=1.0)
    basis = ModeBasis.build(circle, 1024)
    V = PerturbationField.constant(0.3) + PerturbationField.cosine(1, 0.8)
    result = renormalized_det(V, circle, basis, np.geomspace(1e-5, 1e-3, 12), executor=GridExecutor(4))
    oracle = zeta_det_monodromy(V, 1.0, circle)
    assert result.det.log_value.real == pytest.approx(oracle.log_value.real, abs=1e-6)


def test_power_divergence_and_stray_logarithm_raise():
    torus, circle = Geometry.torus(), Geometry.circle()
    grid = np.geomspace(1e-5, 1e-3, 12)
    V2 = PerturbationField.constant(0.5, dimension=2)
    with pytest.raises(CounterTermError) as info:
        renormalize_samples({e: 0.3 / e + math.log(e) for e in grid}, V2, torus)
    assert "eps^-1" in info.value.coefficients

    with pytest.raises(CounterTermError):
        renormalize_samples({e: 0.01 * math.log(e) + 1.0 for e in grid}, PerturbationField.cosine(1), circle)


def test_small_cutoff_is_reported(caplog):
    circle = Geometry.circle(mass=1.0)
    basis = ModeBasis.build(circle, 32)
    with caplog.at_level(logging.WARNING, logger="specdet.core.renorm"):
        result = renormalized_det(PerturbationField.zero(1), circle, basis, np.geomspace(1e-4, 1e-2, 12))
    assert result.det.log_value == 0
    assert "too small" in caplog.text
