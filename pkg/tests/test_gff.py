"""Tests for free-field sampling, Monte-Carlo partition functions and lattice limits."""

import math

import numpy as np
import pytest

from specdet.core.execution import GridExecutor
from specdet.core.geometry import Geometry, ModeBasis, PerturbationField
from specdet.core.gff import (
    dgff_ratio,
    energy_moments,
    mc_partition,
    mc_partition_renormalized,
    partition_reference,
    quadratic_energy,
    sample_gff,
    smear,
    wick_divergence_scan,
)
from specdet.errors import DivergentPartitionError, GeometryError, InsufficientDataError


@pytest.fixture
def circle():
    return Geometry.circle(mass=1.0)


def test_samples_are_reproducible_and_real(circle):
    basis = ModeBasis.build(circle, 6)
    first = sample_gff(basis, seed=7, index=3)
    again = sample_gff(basis, seed=7, index=3)
    other = sample_gff(basis, seed=7, index=4)
    assert np.array_equal(first.coefficients, again.coefficients)
    assert not np.array_equal(first.coefficients, other.coefficients)
    c = first.coefficients
    assert np.allclose(c[::-1], np.conj(c))

    x = np.linspace(0, 2 * math.pi, 9)
    expected = np.exp(1j * np.outer(x, basis.indices[:, 0])) @ first.modes / math.sqrt(2 * math.pi)
    assert np.allclose(first.values(circle, x), expected.real)
    assert np.allclose(expected.imag, 0, atol=1e-12)


def test_covariance_matches_green_function(circle):
    basis = ModeBasis.build(circle, 3)
    K = 10000
    modes = np.stack([sample_gff(basis, seed=1, index=i).modes for i in range(K)])
    second = np.abs(modes) ** 2
    mean = second.mean(axis=0)
    stderr = second.std(axis=0) / math.sqrt(K)
    assert np.all(np.abs(mean - 1 / basis.free_eigenvalues) < 5 * stderr)

    # modes n and m with n != ±m are independent
    n, m = basis.position((1,)), basis.position((2,))
    product = modes[:, n] * modes[:, m]
    assert abs(product.mean()) < 5 * np.abs(product).std() / math.sqrt(K)


def test_smear_damps_modes(circle):
    basis = ModeBasis.build(circle, 4)
    phi = sample_gff(basis, seed=0)
    assert np.array_equal(smear(phi, 0.0).modes, phi.modes)
    twice = smear(smear(phi, 0.1), 0.2)
    assert np.allclose(twice.modes, phi.modes * np.exp(-0.3 * basis.free_eigenvalues))
    assert np.allclose(smear(phi, 50.0).modes, 0)
    with pytest.raises(ValueError):
        smear(phi, -0.1)


def test_quadratic_energy_against_quadrature(circle):
    basis = ModeBasis.build(circle, 8)
    V = PerturbationField.constant(0.5) + PerturbationField.cosine(1, 0.4)
    phi = sample_gff(basis, seed=3)
    x = np.arange(64) * 2 * math.pi / 64
    values = phi.values(circle, x)
    quadrature = 2 * math.pi / 64 * np.sum(V.evaluate(circle, x).real * values ** 2)
    assert quadratic_energy(phi, V) == pytest.approx(quadrature, rel=1e-10)

    constant = PerturbationField.constant(2.0)
    assert quadratic_energy(phi, constant) == pytest.approx(2.0 * np.sum(np.abs(phi.modes) ** 2))
    batch = np.stack([phi.modes, 2 * phi.modes])
    energies = quadratic_energy(batch, V, basis)
    assert energies[1] == pytest.approx(4 * energies[0])
    with pytest.raises(ValueError):
        quadratic_energy(phi.modes, V)


def test_energy_variance_is_twice_trace_square(circle):
    basis = ModeBasis.build(circle, 16)
    V = PerturbationField.constant(0.5) + PerturbationField.cosine(1, 0.4)
    eps, K = 0.05, 4000
    energies = np.array([quadratic_energy(smear(sample_gff(basis, 11, i), eps), V) for i in range(K)])
    mean, variance = energy_moments(V, eps, basis)
    assert abs(energies.mean() - mean.real) < 5 * energies.std() / math.sqrt(K)
    centred = (energies - energies.mean()) ** 2
    assert abs(centred.mean() - variance.real) < 5 * centred.std() / math.sqrt(K)


def test_zero_field_partition_is_one(circle):
    basis = ModeBasis.build(circle, 8)
    check = mc_partition(PerturbationField.zero(1), 0.05, 200, 0, basis)
    assert check.estimate.mean == 1.0 and check.estimate.stderr == 0.0
    assert check.passed and check.deviation == 0.0


def test_divergent_partition_is_rejected(circle):
    basis = ModeBasis.build(circle, 8)
    with pytest.raises(DivergentPartitionError):
        partition_reference(PerturbationField.constant(-3.0), 0.0, basis)
    with pytest.raises(ValueError):
        mc_partition(PerturbationField(1, {(1,): 0.3}), 0.05, 200, 0, basis)


def test_mc_partition_in_one_dimension(circle):
    basis = ModeBasis.build(circle, 64)
    V = PerturbationField.constant(0.5) + PerturbationField.cosine(1, 0.4)
    check = mc_partition(V, 0.05, 10000, 2024, basis, executor=GridExecutor(4))
    assert check.passed, check.to_dict()
    assert check.estimate.samples == 10000

    serial = mc_partition(V, 0.05, 1000, 2024, basis)
    parallel = mc_partition(V, 0.05, 1000, 2024, basis, executor=GridExecutor(3))
    assert serial.estimate.mean == pytest.approx(parallel.estimate.mean, rel=1e-12)


def test_antithetic_pairs_share_weights(circle):
    basis = ModeBasis.build(circle, 16)
    V = PerturbationField.constant(0.5)
    check = mc_partition(V, 0.05, 2000, 5, basis, antithetic=True)
    # a mirror pair carries one weight, so only the pairs are independent
    assert check.estimate.samples == 1000
    assert check.passed, check.to_dict()
    plain = mc_partition(V, 0.05, 1000, 5, basis)
    assert check.estimate.mean == pytest.approx(plain.estimate.mean, rel=1e-12)
    assert check.estimate.stderr == pytest.approx(plain.estimate.stderr, rel=1e-12)
    full = mc_partition(V, 0.05, 2000, 5, basis)
    assert check.estimate.stderr > full.estimate.stderr

    with pytest.raises(InsufficientDataError):
        mc_partition(V, 0.05, 150, 5, basis, antithetic=True)


@pytest.mark.slow
def test_renormalized_mc_on_torus():
    torus = Geometry.torus(mass=1.0)
    basis = ModeBasis.build(torus, 16)
    V = PerturbationField.cosine((1, 0), 0.3)
    check = mc_partition_renormalized(V, 0.05, 10000, 17, basis, executor=GridExecutor(4))
    assert check.renormalized and check.passed, check.to_dict()


def test_only_unrenormalized_partition_diverges():
    torus = Geometry.torus(mass=1.0)
    basis = ModeBasis.build(torus, 1024)
    V = PerturbationField.constant(0.5, dimension=2)
    scan = wick_divergence_scan(V, basis, np.geomspace(1e-5, 1e-3, 12))
    expected = V.integral(torus).real / (8 * math.pi)
    plain = scan.unrenormalized.coefficients["log_eps"]
    assert plain == pytest.approx(expected, rel=1e-2)
    assert abs(scan.renormalized.coefficients["log_eps"]) < 1e-2 * abs(plain)


def test_dgff_free_and_invalid_inputs():
    torus = Geometry.torus(mass=1.0)
    free = dgff_ratio(PerturbationField.zero(2), [8, 16], torus)
    assert free.log_ratios == (0.0, 0.0)
    assert free.extrapolated == 0.0
    assert free.continuum is None and free.errors == []

    with pytest.raises(GeometryError):
        dgff_ratio(PerturbationField.constant(0.3, dimension=2), [8], torus)
    with pytest.raises(GeometryError):
        dgff_ratio(PerturbationField.zero(1), [8], Geometry.circle())
    with pytest.raises(ValueError):
        dgff_ratio(PerturbationField.zero(2), [], torus)


def test_dgff_accepts_grid_samples():
    torus = Geometry.torus(mass=1.0)
    V = PerturbationField.cosine((1, 0), 0.5)
    from_field = dgff_ratio(V, [8, 16], torus)
    grid = V.sample_grid(Geometry.lattice(32), 32).real
    from_grid = dgff_ratio(grid, [8, 16], torus)
    assert from_grid.log_ratios == pytest.approx(from_field.log_ratios, rel=1e-10)


@pytest.mark.slow
def test_dgff_converges_to_zeta_ratio():
    torus = Geometry.torus(mass=1.0)
    V = PerturbationField.cosine((1, 0), 0.5) + PerturbationField.cosine((0, 1), 0.5)
    result = dgff_ratio(V, [16, 32, 64, 128], torus, cutoff=16, executor=GridExecutor(4))
    assert result.extrapolation_error < 1e-2
    assert result.monotone
