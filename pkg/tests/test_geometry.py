"""Tests for geometries, mode bases and perturbation fields."""

import math

import numpy as np
import pytest

from specdet.core.geometry import Geometry, GeometryKind, ModeBasis, PerturbationField
from specdet.errors import AliasingError, GeometryError


def test_geometry_validation():
    with pytest.raises(GeometryError):
        Geometry.circle(mass=-1.0)
    with pytest.raises(GeometryError):
        Geometry(GeometryKind.TORUS2, length=0.0)
    with pytest.raises(GeometryError):
        Geometry(GeometryKind.LATTICE_TORUS)

    lattice = Geometry.lattice(16)
    assert lattice.mesh == pytest.approx(2 * math.pi / 16)
    assert lattice.continuum() == Geometry.torus()
    assert Geometry.circle().wavenumber == pytest.approx(1.0)


def test_mode_basis_ordering():
    basis = ModeBasis.build(Geometry.circle(mass=0.5), 3)
    assert basis.count == 7
    assert basis.indices[:, 0].tolist() == [-3, -2, -1, 0, 1, 2, 3]
    assert np.allclose(basis.free_eigenvalues, basis.indices[:, 0] ** 2 + 0.25)
    assert basis.edge_eigenvalue == pytest.approx(16.25)
    assert basis.position((-3,)) == 0
    assert basis.negated()[basis.position((2,))] == basis.position((-2,))

    torus = ModeBasis.build(Geometry.torus(), 2)
    assert torus.count == 25
    assert torus.position((0, 0)) == 12
    assert tuple(torus.indices[torus.position((1, -2))]) == (1, -2)
    with pytest.raises(GeometryError):
        torus.position((3, 0))


def test_field_constructors():
    cosine = PerturbationField.cosine(1, 2.0)
    assert cosine.coefficients == {(1,): 1.0, (-1,): 1.0}
    assert cosine.is_real
    assert cosine.mean == 0
    assert PerturbationField.sine(2).is_real

    complex_field = PerturbationField(1, {(1,): 1.0})
    assert not complex_field.is_real

    combined = PerturbationField.constant(0.5) + cosine
    assert combined.mean == 0.5
    assert combined.max_mode == 1
    assert combined.integral(Geometry.circle()) == pytest.approx(math.pi)
    assert (cosine + cosine.scaled(-1)).is_zero


def test_field_evaluate_matches_trigonometry():
    circle = Geometry.circle()
    field_ = PerturbationField.constant(1.0) + PerturbationField.cosine(1) + PerturbationField.sine(2, 0.5)
    x = np.linspace(0, 2 * math.pi, 17)
    expected = 1 + np.cos(x) + 0.5 * np.sin(2 * x)
    assert np.allclose(field_.evaluate(circle, x), expected)

    torus = Geometry.torus()
    field2 = PerturbationField.cosine((1, 0)) + PerturbationField.cosine((0, 1))
    grid = field2.sample_grid(torus, 8)
    x = np.arange(8) * 2 * math.pi / 8
    assert np.allclose(grid.real, np.cos(x)[:, None] + np.cos(x)[None, :])


def test_from_samples_projection():
    x = np.arange(32) * 2 * math.pi / 32
    field_ = PerturbationField.from_samples(1 + np.cos(x), band=4)
    assert field_.coefficients[(0,)] == pytest.approx(1.0)
    assert field_.coefficients[(1,)] == pytest.approx(0.5)
    assert field_.coefficients[(-1,)] == pytest.approx(0.5)
    assert len(field_.coefficients) == 3

    with pytest.raises(AliasingError):
        PerturbationField.from_samples(np.cos(x), band=16)


def test_coefficient_grid_rejects_aliasing():
    field_ = PerturbationField.cosine(5)
    with pytest.raises(AliasingError):
        field_.coefficient_grid(4)
    grid = field_.coefficient_grid(5)
    assert grid.shape == (11,)
    assert grid[0] == 0.5 and grid[10] == 0.5


def test_bump_support_and_positivity():
    circle = Geometry.circle()
    bump = PerturbationField.bump(circle, (1.0, 2.0), band=48)
    assert bump.support == ((1.0, 2.0),)
    assert bump.is_real
    centre = bump.evaluate(circle, np.array([1.5])).real[0]
    far = bump.evaluate(circle, np.array([4.5])).real[0]
    assert centre == pytest.approx(1.0, abs=1e-2)
    assert abs(far) < 1e-2
    with pytest.raises(GeometryError):
        PerturbationField.bump(circle, (5.0, 7.0))
