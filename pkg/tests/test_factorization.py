"""Tests for Gateaux differentials, trace identities and the ambiguity polynomial."""

import math

import numpy as np
import pytest

from specdet.core.factorization import (
    DirectionSet,
    Sector,
    disjoint_support_check,
    factorization_profile,
    fit_ambiguity_polynomial,
    gateaux_diff,
    growth_bound_check,
    mode_trace,
    q_polynomial_fit,
    trace_identity_check,
    trace_power,
    weierstrass_representation_check,
)
from specdet.core.geometry import Geometry, ModeBasis, PerturbationField
from specdet.errors import AdmissibilityError, FactorizationError, GeometryError, SpectralCutError


@pytest.fixture
def circle():
    return Geometry.circle(mass=1.0)


def test_gateaux_diff_polynomials():
    mixed = gateaux_diff(lambda t: t[0] * t[1] + 3 * t[0] + 1, 2)
    assert mixed.value == pytest.approx(1.0, abs=1e-9)
    assert gateaux_diff(lambda t: 2 * t[0] - t[1], 2).value == pytest.approx(0.0, abs=1e-9)
    cubic = gateaux_diff(lambda t: math.exp(t[0] + t[1] + t[2]), 3)
    assert cubic.value == pytest.approx(1.0, rel=1e-6)
    assert set(cubic.raw) == {1e-2, 5e-3, 2.5e-3}
    with pytest.raises(ValueError):
        gateaux_diff(lambda t: 0.0, 5)


def test_gateaux_diff_reports_inadmissible_point():
    def logdet(t):
        if t[0] > 0:
            raise SpectralCutError("eigenvalue on the cut", -1.0)
        return 0.0

    with pytest.raises(AdmissibilityError) as info:
        gateaux_diff(logdet, 1, steps=(0.1,))
    assert tuple(info.value.point) == (0.1,)


def test_sector_parameters(circle):
    basis = ModeBasis.build(circle, 8)
    bosonic = Sector(circle, basis)
    assert (bosonic.p, bosonic.order_bound, bosonic.allowed_degree) == (1, 1, 0)
    fermionic = Sector(circle, basis, fermion_mass=0.5)
    assert (fermionic.p, fermionic.order_bound, fermionic.allowed_degree) == (2, 0, 1)
    torus = Geometry.torus()
    planar = Sector(torus, ModeBasis.build(torus, 2))
    assert (planar.p, planar.order_bound, planar.allowed_degree) == (2, 1, 1)
    with pytest.raises(GeometryError):
        Sector(torus, basis)


def test_mode_trace_matches_matrix_trace(circle):
    basis = ModeBasis.build(circle, 12)
    sector = Sector(circle, basis)
    V = PerturbationField.constant(0.3) + PerturbationField.cosine(1, 0.5)
    assert mode_trace(sector, [V], 12) == pytest.approx(trace_power(sector.green_matrix(V), 1))
    assert mode_trace(sector, [V, V], 12) == pytest.approx(trace_power(sector.green_matrix(V), 2))


@pytest.mark.parametrize("route,cutoff", [("gk", 16), ("zeta", 64)])
def test_second_trace_identity_on_circle(circle, route, cutoff):
    V = PerturbationField.cosine(1, 0.3) + PerturbationField.sine(2, 0.2)
    report = trace_identity_check(V, circle, ModeBasis.build(circle, cutoff), 2, route=route)
    assert report.passed, report.values
    assert report.values["trace"].real > 0


def test_trace_identity_fermionic(circle):
    V = PerturbationField.cosine(1, 0.2)
    report = trace_identity_check(V, circle, ModeBasis.build(circle, 16), 2, route="gk", fermion_mass=0.5)
    assert report.passed, report.values
    with pytest.raises(ValueError):
        trace_identity_check(V, circle, ModeBasis.build(circle, 16), 1)


def test_disjoint_support_check(circle):
    basis = ModeBasis.build(circle, 32)
    V1 = PerturbationField.bump(circle, (0.5, 1.5), amplitude=0.3, band=16)
    V2 = PerturbationField.bump(circle, (3.5, 4.5), amplitude=0.3, band=16)
    report = disjoint_support_check(PerturbationField.zero(1), V1, V2, circle, basis, route="gk")
    assert report.passed, report.values
    assert report.values["support_disjoint"]

    overlapping = PerturbationField.bump(circle, (1.0, 2.0), band=16)
    assert not DirectionSet((V1, overlapping)).support_disjoint
    assert not DirectionSet((V1, PerturbationField.cosine(1))).support_disjoint

    trivial = disjoint_support_check(PerturbationField.zero(1), V1, PerturbationField.zero(1), circle, basis)
    assert trivial.passed and trivial.values["second_derivative"] == 0


@pytest.mark.parametrize("p", [None, 2])
def test_weierstrass_representation(circle, p):
    V = PerturbationField.constant(0.2) + PerturbationField.cosine(1, 0.4)
    report = weierstrass_representation_check(V, circle, ModeBasis.build(circle, 16), p=p)
    assert report.passed, report.values
    assert report.values["factor_order"] == (p or 1) - 1


def test_growth_order(circle):
    V = PerturbationField.constant(1.0) + PerturbationField.cosine(1)
    report = growth_bound_check(V, circle, ModeBasis.build(circle, 16))
    assert report.passed, report.values
    assert report.values["p"] == 2
    assert report.values["window"] == [0.85, 1.15]
    assert report.values["order"] == pytest.approx(1.0, abs=0.15)

    # without the exponential the truncated determinant is a polynomial
    small = PerturbationField.constant(0.5) + PerturbationField.cosine(1, 0.3)
    polynomial = growth_bound_check(small, circle, ModeBasis.build(circle, 4), p=1,
                                    radii=np.geomspace(1e4, 1e8, 20))
    assert polynomial.values["order"] <= 0.2


def test_ratio_identity_has_no_polynomial_in_one_dimension(circle):
    V = PerturbationField.cosine(1, 0.5)
    fit = q_polynomial_fit(V, circle, ModeBasis.build(circle, 32))
    assert fit.degree <= 0
    assert abs(fit.coefficients[0]) < 1e-5
    assert fit.residual < 1e-4


def test_zero_field_profile(circle):
    sector = Sector(circle, ModeBasis.build(circle, 8))
    profile = factorization_profile(PerturbationField.zero(1), sector, np.linspace(-1, 1, 5))
    assert all(value == 0 for value in profile.values())
    fit = fit_ambiguity_polynomial(profile, 0)
    assert fit.degree == 0 and fit.coefficients == (0j,)


def test_ambiguity_fit_rejects_excess_degree():
    z = np.linspace(-1, 1, 11)
    quadratic = {float(x): complex(0.3 * x ** 2) for x in z}
    with pytest.raises(FactorizationError) as info:
        fit_ambiguity_polynomial(quadratic, 1)
    assert len(info.value.profile) == 11
    linear = fit_ambiguity_polynomial({float(x): complex(0.1 + 0.5 * x) for x in z}, 1)
    assert linear.degree == 1
    assert linear.coefficients[1] == pytest.approx(0.5)
    with pytest.raises(FactorizationError):
        fit_ambiguity_polynomial({0.0: 0j, 1.0: 0j}, 1)


@pytest.mark.slow
def test_torus_ambiguity_polynomial_is_at_most_linear():
    torus = Geometry.torus(mass=1.0)
    V = PerturbationField.cosine((1, 0)) + PerturbationField.cosine((0, 1))
    fit = q_polynomial_fit(V, torus, ModeBasis.build(torus, 32), p=2)
    assert fit.degree <= 1
    assert fit.residual < 1e-4


def test_growth_order_on_torus():
    torus = Geometry.torus(mass=1.0)
    V = PerturbationField.cosine((1, 0), 0.5) + PerturbationField.cosine((0, 1), 0.5)
    report = growth_bound_check(V, torus, ModeBasis.build(torus, 8))
    assert report.passed, report.values
    assert report.values["p"] == 3
    assert report.values["window"] == [1.8, 2.2]


@pytest.fixture
def torus():
    return Geometry.torus(mass=1.0)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("rg_shift", [0.0, 0.7])
def test_trace_identities_on_torus(torus, n, rg_shift):
    V = PerturbationField.constant(0.2, dimension=2) + PerturbationField.cosine((1, 0), 0.3) \
        + PerturbationField.cosine((0, 1), 0.2)
    report = trace_identity_check(V, torus, ModeBasis.build(torus, 8), n, route="gk", rg_shift=rg_shift)
    assert report.passed, report.values
    assert abs(report.values["trace"]) > 0
    with pytest.raises(ValueError):
        trace_identity_check(V, torus, ModeBasis.build(torus, 4), 1, route="gk")


@pytest.mark.parametrize("rg_shift", [0.0, 0.7])
def test_disjoint_support_check_through_zeta(circle, rg_shift):
    basis = ModeBasis.build(circle, 128)
    V1 = PerturbationField.bump(circle, (0.5, 1.5), band=48)
    V2 = PerturbationField.bump(circle, (3.5, 4.5), band=48)
    base = PerturbationField.cosine(1, 0.5)
    report = disjoint_support_check(base, V1, V2, circle, basis, route="zeta", rg_shift=rg_shift)
    assert report.passed, report.values
    assert report.name == "disjoint_support_zeta"
    assert report.values["rg_shift"] == rg_shift


def test_fermionic_ambiguity_polynomial_is_at_most_linear(circle):
    V = PerturbationField.cosine(1, 0.5)
    fit = q_polynomial_fit(V, circle, ModeBasis.build(circle, 128), fermion_mass=0.5)
    sector = Sector(circle, ModeBasis.build(circle, 4), fermion_mass=0.5)
    assert fit.degree <= sector.allowed_degree == 1
    assert fit.residual < 1e-4
