"""Factorization of zeta determinants and the trace identities behind it.

The checks here compare ``log det_ζ`` of perturbed operators with
Gohberg-Krein determinants and with matrix traces of ``P^{-1} V``. Bosonic
sectors use ``P = Δ + m²`` and ``p = [d/2] + 1``; the fermionic sector uses
``P = D = -i d/dx + m`` on the circle, ``det_ζ(D*(D + A))`` and ``p = d + 1``.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from ..errors import (
    AdmissibilityError,
    FactorizationError,
    GeometryError,
    SpecDetError,
    SpectralCutError,
)
from .cache import EigenCache
from .determinants import ZetaConfig, gk_det, zeta_log_det
from .entire import estimate_order, hadamard_eval, HadamardData, log_weierstrass_factor, ZeroSequence
from .execution import GridExecutor, default_executor
from .geometry import Geometry, ModeBasis, PerturbationField
from .operators import (
    TruncatedOperator,
    build_dirac,
    build_dirac_squared,
    build_laplace,
    dirac_spectrum,
    multiplication_matrix,
)
from .renorm import renormalized_det
from .results import CheckReport, PolynomialInZ, relative_error

logger = logging.getLogger(__name__)

GK_STEPS = (1e-2, 5e-3, 2.5e-3)
ZETA_STEPS = (1e-1, 5e-2, 2.5e-2)


class Sector:
    """Bosonic ``Δ + V`` or fermionic ``D + A`` problem on a fixed basis."""

    def __init__(self, geometry: Geometry, basis: ModeBasis, fermion_mass: Optional[float] = None):
        if basis.geometry != geometry:
            raise GeometryError("basis was built for a different geometry")
        self.geometry = geometry
        self.basis = basis
        self.fermion_mass = fermion_mass
        if self.fermionic:
            # validates the circle and the mass
            build_dirac(geometry, fermion_mass, None, basis)

    @property
    def fermionic(self) -> bool:
        return self.fermion_mass is not None

    @property
    def dimension(self) -> int:
        return self.geometry.dimension

    @property
    def p(self) -> int:
        d = self.dimension
        return d + 1 if self.fermionic else d // 2 + 1

    @property
    def order_bound(self) -> int:
        """``[d/p]``: highest order carrying counterterms."""
        return self.dimension // self.p

    @property
    def allowed_degree(self) -> int:
        return self.dimension if self.fermionic else self.dimension // 2

    def zero(self) -> PerturbationField:
        return PerturbationField.zero(self.dimension)

    def zeta_operator(self, V: PerturbationField) -> TruncatedOperator:
        if self.fermionic:
            return build_dirac_squared(self.geometry, self.fermion_mass, V, self.basis)
        return build_laplace(self.geometry, V, self.basis)

    def green(self) -> np.ndarray:
        """Diagonal of ``P^{-1}``."""
        if self.fermionic:
            return 1.0 / dirac_spectrum(self.geometry, self.fermion_mass, self.basis)
        return 1.0 / self.basis.free_eigenvalues

    def mode_green(self, modes: np.ndarray) -> np.ndarray:
        k0 = self.geometry.wavenumber
        if self.fermionic:
            return 1.0 / (modes[:, 0] * k0 + self.fermion_mass)
        return 1.0 / ((modes ** 2).sum(axis=1) * k0 ** 2 + self.geometry.mass ** 2)

    def green_matrix(self, V: PerturbationField) -> np.ndarray:
        return self.green()[:, None] * multiplication_matrix(V, self.basis)

    def green_spectrum(self, V: PerturbationField) -> np.ndarray:
        """Eigenvalues of ``P^{-1} V``; symmetrized when P > 0 and V is real."""
        if not self.fermionic and V.is_real:
            root = np.sqrt(self.green())
            sym = root[:, None] * multiplication_matrix(V, self.basis) * root[None, :]
            return sla.eigvalsh((sym + sym.conj().T) / 2).astype(complex)
        return sla.eigvals(self.green_matrix(V))

    def propagator(self, base: PerturbationField) -> np.ndarray:
        """Dense ``(P + V)^{-1}``."""
        if self.fermionic:
            op = build_dirac(self.geometry, self.fermion_mass, base, self.basis)
        else:
            op = build_laplace(self.geometry, base, self.basis)
        return sla.inv(op.matrix)

    def tail_exponent(self, n: int) -> int:
        """Decay power of the n-th trace tail beyond a box of size M."""
        return n - self.dimension if self.fermionic else 2 * n - self.dimension

    def log_det_zeta(
        self,
        V: PerturbationField,
        cfg: Optional[ZetaConfig] = None,
        cache: Optional[EigenCache] = None,
    ) -> complex:
        """``log det_ζ(P + V) - log det_ζ(P)`` (second order operators)."""
        if V.is_zero:
            return 0j
        log_value, _, _ = zeta_log_det(self.zeta_operator(V), cfg, cache, relative=True)
        return log_value


def _combine(base: PerturbationField, directions: Sequence[PerturbationField], t: Sequence[float]) -> PerturbationField:
    field_ = base
    for ti, h in zip(t, directions):
        if ti != 0:
            field_ = field_ + h.scaled(ti)
    return field_


# traces


def trace_power(A: np.ndarray, n: int) -> complex:
    return complex(np.trace(np.linalg.matrix_power(A, n)))


def mode_trace(sector: Sector, fields: Sequence[PerturbationField], box: int) -> complex:
    """``Tr(P^{-1} V_1 ... P^{-1} V_n)`` over the modes |n_i| <= box, n in {1, 2}."""
    d = sector.dimension
    axis = np.arange(-box, box + 1)
    modes = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    G = sector.mode_green(modes)
    if len(fields) == 1:
        return complex(fields[0].mean * G.sum())
    if len(fields) != 2:
        raise ValueError("mode traces are implemented for one or two insertions")
    first, second = fields
    total = 0j
    for k, c in first.coefficients.items():
        partner = second.coefficients.get(tuple(-n for n in k), 0j)
        if partner == 0:
            continue
        shifted = modes - np.array(k)
        inside = np.all(np.abs(shifted) <= box, axis=1)
        total += c * partner * np.sum(G[inside] * sector.mode_green(shifted[inside]))
    return complex(total)


def trace_tail(sector: Sector, fields: Sequence[PerturbationField]) -> complex:
    """Correction from the truncated trace to the full operator trace.

    Extended-box sums at 4N and 8N with a Richardson step in the known tail
    power ``M^{-q}``.
    """
    q = sector.tail_exponent(len(fields))
    if q <= 0:
        raise ValueError(f"trace with {len(fields)} insertions diverges in this sector")
    N = sector.basis.cutoff
    truncated = mode_trace(sector, fields, N)
    coarse = mode_trace(sector, fields, 4 * N)
    fine = mode_trace(sector, fields, 8 * N)
    full = fine + (fine - coarse) / (2 ** q - 1)
    return full - truncated


def _corrected_trace(sector: Sector, V: PerturbationField, n: int) -> complex:
    value = trace_power(sector.green_matrix(V), n)
    if n <= 2 and sector.tail_exponent(n) > 0:
        value += trace_tail(sector, [V] * n)
    return value


# finite differences


@dataclass(frozen=True)
class GateauxEstimate:
    value: complex
    error: float
    raw: Dict[float, complex]


def gateaux_diff(
    logdet: Callable[[Tuple[float, ...]], complex],
    order: int,
    steps: Sequence[float] = GK_STEPS,
) -> GateauxEstimate:
    """``D^n f(0; h_1..h_n)`` by tensor-product central differences.

    ``logdet`` takes the tuple ``(t_1, ..., t_n)``. Successive steps are
    combined by Richardson extrapolation in h².
    """
    if not 1 <= order <= 4:
        raise ValueError(f"Gateaux differentials are supported up to order 4, got {order}")
    steps = sorted((float(h) for h in steps), reverse=True)
    memo: Dict[Tuple[float, ...], complex] = {}

    def evaluate(point: Tuple[float, ...]) -> complex:
        if point not in memo:
            try:
                memo[point] = complex(logdet(point))
            except AdmissibilityError:
                raise
            except SpecDetError as e:
                raise AdmissibilityError(f"non-admissible evaluation ({e})", point) from e
        return memo[point]

    raw: Dict[float, complex] = {}
    for h in steps:
        total = 0j
        for signs in itertools.product((1, -1), repeat=order):
            point = tuple(s * h for s in signs)
            total += math.prod(signs) * evaluate(point)
        raw[h] = total / (2 * h) ** order

    table: List[complex] = [raw[h] for h in steps]
    previous = table[-1]
    level = 1
    while len(table) > 1:
        previous = table[-1]
        table = [
            (((steps[j] / steps[j + level]) ** (2 * level)) * table[j + 1] - table[j])
            / ((steps[j] / steps[j + level]) ** (2 * level) - 1)
            for j in range(len(table) - 1)
        ]
        level += 1
    value = table[0]
    error = abs(value - previous) if len(steps) > 1 else 0.0
    return GateauxEstimate(value, float(error), raw)


def zeta_logdet_along(
    sector: Sector,
    base: PerturbationField,
    directions: Sequence[PerturbationField],
    cfg: Optional[ZetaConfig] = None,
    cache: Optional[EigenCache] = None,
    rg_shift: float = 0.0,
) -> Callable[[Tuple[float, ...]], complex]:
    # repeated directions only see the sum of their parameters
    distinct = _distinct(directions)
    by_field: Dict[Tuple[float, ...], complex] = {}

    def logdet(t: Tuple[float, ...]) -> complex:
        key = tuple(
            round(sum(ti for ti, h in zip(t, directions) if h is d), 15) for d in distinct
        )
        if key not in by_field:
            field_ = _combine(base, directions, t)
            shift = rg_shift * field_.integral(sector.geometry)
            by_field[key] = sector.log_det_zeta(field_, cfg, cache) + shift
        return by_field[key]

    return logdet


def gk_logdet_along(
    sector: Sector,
    base: PerturbationField,
    directions: Sequence[PerturbationField],
    p: Optional[int] = None,
    rg_shift: float = 0.0,
) -> Callable[[Tuple[float, ...]], complex]:
    p = p or sector.p

    def logdet(t: Tuple[float, ...]) -> complex:
        field_ = _combine(base, directions, t)
        shift = rg_shift * field_.integral(sector.geometry)
        return gk_det(p, sector.green_matrix(field_), cross_check=False).log_value + shift

    return logdet


def renormalized_logdet_along(
    sector: Sector,
    base: PerturbationField,
    directions: Sequence[PerturbationField],
    eps_grid: Sequence[float],
    rg_shift: float = 0.0,
) -> Callable[[Tuple[float, ...]], complex]:
    if sector.fermionic:
        raise ValueError("heat renormalization is implemented for the bosonic sector")

    def logdet(t: Tuple[float, ...]) -> complex:
        field_ = _combine(base, directions, t)
        shift = rg_shift * field_.integral(sector.geometry)
        if field_.is_zero:
            return shift
        result = renormalized_det(field_, sector.geometry, sector.basis, eps_grid)
        return result.det.log_value + shift

    return logdet


def _distinct(directions: Sequence[PerturbationField]) -> List[PerturbationField]:
    seen: List[PerturbationField] = []
    for h in directions:
        if not any(h is s for s in seen):
            seen.append(h)
    return seen


# polynomial ambiguity


def _polyfit(z: np.ndarray, values: np.ndarray, degree: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    design = np.vander(z, degree + 1, increasing=True)
    coeffs, *_ = np.linalg.lstsq(design, values, rcond=None)
    residuals = values - design @ coeffs
    dof = len(z) - degree - 1
    sigma2 = float(np.sum(np.abs(residuals) ** 2)) / dof if dof > 0 else 0.0
    stderr = np.sqrt(np.abs(np.diag(sigma2 * np.linalg.pinv(design.T @ design))))
    return coeffs, stderr, residuals


def factorization_profile(
    V: PerturbationField,
    sector: Sector,
    z_grid: Sequence[float],
    p: Optional[int] = None,
    cfg: Optional[ZetaConfig] = None,
    cache: Optional[EigenCache] = None,
    rg_shift: float = 0.0,
    tail_correction: bool = True,
    executor: Optional[GridExecutor] = None,
) -> Dict[float, complex]:
    """``z -> log det_ζ(P + zV)/det_ζ(P) - log det_p(Id + z P^{-1} V)`` on admissible z."""
    p = p or sector.p
    mu = sector.green_spectrum(V)
    tails = {}
    if tail_correction:
        for n in range(p, 3):
            if sector.tail_exponent(n) > 0:
                tails[n] = trace_tail(sector, [V] * n)
    integral = V.integral(sector.geometry)

    def g(z: float) -> Optional[complex]:
        try:
            zeta = sector.log_det_zeta(V.scaled(z), cfg, cache)
        except SpectralCutError as e:
            logger.warning(f"z={z:.4g} dropped: {e}")
            return None
        gk = complex(np.sum(log_weierstrass_factor(p - 1, -z * mu)))
        gk += sum((-1) ** (n + 1) * z ** n * tail / n for n, tail in tails.items())
        return zeta + rg_shift * z * integral - gk

    profile: Dict[float, complex] = {}
    for result in default_executor(executor).run(g, [float(z) for z in z_grid]):
        if not result.success:
            raise FactorizationError(f"profile failed at z={result.point}: {result.error}", [])
        if result.value is not None:
            profile[result.point] = result.value
    return profile


def q_polynomial_fit(
    V: PerturbationField,
    geometry: Geometry,
    basis: ModeBasis,
    p: Optional[int] = None,
    z_grid: Sequence[float] = tuple(np.linspace(-1, 1, 11)),
    fermion_mass: Optional[float] = None,
    cfg: Optional[ZetaConfig] = None,
    cache: Optional[EigenCache] = None,
    tol: float = 1e-4,
    rg_shift: float = 0.0,
    tail_correction: bool = True,
    executor: Optional[GridExecutor] = None,
) -> PolynomialInZ:
    """Fit the ambiguity polynomial ``Q(zV)`` of the factorization formula.

    The returned degree is the highest coefficient above 3σ in an
    over-parameterized fit; coefficients come from the fit at the allowed
    degree, whose residual must stay below ``tol``.
    """
    sector = Sector(geometry, basis, fermion_mass)
    profile = factorization_profile(V, sector, z_grid, p, cfg, cache, rg_shift, tail_correction, executor)
    return fit_ambiguity_polynomial(profile, sector.allowed_degree, tol)


def fit_ambiguity_polynomial(profile: Dict[float, complex], allowed: int, tol: float = 1e-4) -> PolynomialInZ:
    z = np.array(list(profile))
    values = np.array(list(profile.values()))
    if len(z) < allowed + 3:
        raise FactorizationError(f"only {len(z)} admissible z points", [])

    trial_degree = min(allowed + 2, len(z) - 2)
    coeffs, stderr, _ = _polyfit(z, values, trial_degree)
    zmax = float(np.max(np.abs(z)))
    significant = [
        k for k in range(trial_degree + 1)
        if abs(coeffs[k]) > max(3 * stderr[k], 0.1 * tol / max(zmax, 1e-300) ** k)
    ]
    degree = max(significant) if significant else 0

    coeffs, stderr, residuals = _polyfit(z, values, allowed)
    rms = float(np.sqrt(np.mean(np.abs(residuals) ** 2)))
    logger.debug(f"factorization fit: degree {degree}, residual {rms:.2e}, coefficients {coeffs}")
    if rms > tol:
        raise FactorizationError(
            f"degree-{allowed} ambiguity fit residual {rms:.2e} exceeds {tol:.1e}",
            np.abs(residuals).tolist(),
        )
    return PolynomialInZ(
        tuple(complex(c) for c in coeffs),
        tuple(float(s) for s in stderr),
        rms,
        tuple(complex(v) for v in z),
        degree,
    )


# identity checks


def _logdet_route(
    route: str,
    sector: Sector,
    base: PerturbationField,
    directions: Sequence[PerturbationField],
    cfg: Optional[ZetaConfig],
    cache: Optional[EigenCache],
    rg_shift: float,
    eps_grid: Optional[Sequence[float]],
):
    if route == "zeta":
        return zeta_logdet_along(sector, base, directions, cfg, cache, rg_shift)
    if route == "gk":
        return gk_logdet_along(sector, base, directions, rg_shift=rg_shift)
    if route == "renormalized":
        if eps_grid is None:
            raise ValueError("the renormalized route needs an ε grid")
        return renormalized_logdet_along(sector, base, directions, eps_grid, rg_shift)
    raise ValueError(f"unknown route {route!r}")


def trace_identity_check(
    V: PerturbationField,
    geometry: Geometry,
    basis: ModeBasis,
    n: int,
    route: str = "zeta",
    fermion_mass: Optional[float] = None,
    steps: Optional[Sequence[float]] = None,
    cfg: Optional[ZetaConfig] = None,
    cache: Optional[EigenCache] = None,
    tol: float = 1e-3,
    rg_shift: float = 0.0,
    eps_grid: Optional[Sequence[float]] = None,
) -> CheckReport:
    """``(-1)^(n-1)/(n-1)! (d/dz)^n log det(P + zV)|_0 = Tr((P^{-1} V)^n)`` for n > [d/p]."""
    sector = Sector(geometry, basis, fermion_mass)
    if n <= sector.order_bound:
        raise ValueError(f"trace identity needs n > [d/p] = {sector.order_bound}, got {n}")
    steps = steps or (GK_STEPS if route == "gk" else ZETA_STEPS)
    logdet = _logdet_route(route, sector, sector.zero(), [V] * n, cfg, cache, rg_shift, eps_grid)
    estimate = gateaux_diff(logdet, n, steps)
    lhs = (-1) ** (n - 1) / math.factorial(n - 1) * estimate.value
    if route == "gk":
        rhs = trace_power(sector.green_matrix(V), n)
    else:
        rhs = _corrected_trace(sector, V, n)
    error = relative_error(lhs, rhs) if abs(rhs) > 0 else abs(lhs)
    return CheckReport(
        name=f"trace_identity_n{n}_{route}",
        passed=error < tol,
        values={
            "derivative": lhs,
            "trace": rhs,
            "fd_error": estimate.error,
            "steps": list(steps),
            "cutoff": basis.cutoff,
            "rg_shift": rg_shift,
        },
        relative_error=error,
        tolerance=tol,
    )


@dataclass(frozen=True)
class DirectionSet:
    """Perturbation directions, with disjointness certified from bump supports."""

    directions: Tuple[PerturbationField, ...]

    @property
    def support_disjoint(self) -> bool:
        supports = [h.support for h in self.directions]
        if any(s is None for s in supports):
            return False
        for a, b in itertools.combinations(supports, 2):
            if all(lo1 < hi2 and lo2 < hi1 for (lo1, hi1), (lo2, hi2) in zip(a, b)):
                return False
        return True


def disjoint_support_check(
    base: PerturbationField,
    V1: PerturbationField,
    V2: PerturbationField,
    geometry: Geometry,
    basis: ModeBasis,
    route: str = "zeta",
    fermion_mass: Optional[float] = None,
    steps: Optional[Sequence[float]] = None,
    cfg: Optional[ZetaConfig] = None,
    cache: Optional[EigenCache] = None,
    tol: float = 1e-4,
    rg_shift: float = 0.0,
    eps_grid: Optional[Sequence[float]] = None,
) -> CheckReport:
    """``D² log det(P + V; V1, V2) = -Tr((P+V)^{-1} V1 (P+V)^{-1} V2)``."""
    sector = Sector(geometry, basis, fermion_mass)
    directions = DirectionSet((V1, V2))
    steps = steps or (GK_STEPS if route == "gk" else ZETA_STEPS)
    if V1.is_zero or V2.is_zero:
        estimate_value, fd_error, trace = 0j, 0.0, 0j
    else:
        logdet = _logdet_route(route, sector, base, [V1, V2], cfg, cache, rg_shift, eps_grid)
        estimate = gateaux_diff(logdet, 2, steps)
        estimate_value, fd_error = estimate.value, estimate.error
        G = sector.propagator(base)
        M1 = multiplication_matrix(V1, basis)
        M2 = multiplication_matrix(V2, basis)
        trace = complex(np.trace(G @ M1 @ G @ M2))
        if base.is_zero and route != "gk":
            trace += trace_tail(sector, [V1, V2])
    expected = -trace
    error = relative_error(estimate_value, expected) if abs(expected) > 0 else abs(estimate_value)
    return CheckReport(
        name=f"disjoint_support_{route}",
        passed=error < tol,
        values={
            "second_derivative": estimate_value,
            "minus_trace": expected,
            "fd_error": fd_error,
            "support_disjoint": directions.support_disjoint,
            "rg_shift": rg_shift,
            "cutoff": basis.cutoff,
        },
        relative_error=error,
        tolerance=tol,
    )


def weierstrass_representation_check(
    V: PerturbationField,
    geometry: Geometry,
    basis: ModeBasis,
    p: Optional[int] = None,
    fermion_mass: Optional[float] = None,
    tol: Optional[float] = None,
) -> CheckReport:
    """``det_p(Id + P^{-1}V) = prod E_{p-1}(1/λ_n)`` over generalized eigenvalues λ_n = -1/μ_n."""
    sector = Sector(geometry, basis, fermion_mass)
    p = p or sector.p
    tol = tol if tol is not None else (1e-10 if p == 1 else 1e-8)
    A = sector.green_matrix(V)
    reference = gk_det(p, A, cross_check=False)
    if V.is_zero:
        mu = np.zeros(0, dtype=complex)
        condition = 1.0
    else:
        mu, vectors = sla.eig(A)
        condition = float(np.linalg.cond(vectors))
    scale = max(float(np.max(np.abs(mu), initial=0.0)), 1e-300)
    mu = mu[np.abs(mu) > 1e-14 * scale]
    zeros = ZeroSequence.from_values(-1.0 / mu)
    product = hadamard_eval(HadamardData(zeros, p - 1), 1.0, complete=True)
    error = abs(np.exp(product.log_value - reference.log_value) - 1) if not reference.is_zero else abs(product.value)
    degraded = condition > 1e8
    if degraded:
        logger.warning(f"P^-1 V is close to defective (eigenvector condition {condition:.2e})")
    return CheckReport(
        name="weierstrass_representation",
        passed=bool(error < tol),
        values={
            "product": product.value,
            "gk_det": reference.value,
            "factor_order": p - 1,
            "generalized_eigenvalues": len(zeros),
            "eigenvector_condition": condition,
            "degraded": degraded,
        },
        relative_error=float(error),
        tolerance=tol,
    )


def growth_bound_check(
    V: PerturbationField,
    geometry: Geometry,
    basis: ModeBasis,
    p: Optional[int] = None,
    fermion_mass: Optional[float] = None,
    angles: Optional[Sequence[float]] = None,
    radii: Optional[Sequence[float]] = None,
    window: Optional[Tuple[float, float]] = None,
) -> CheckReport:
    """Order of ``z -> det_p(Id + z P^{-1} V)`` against the theoretical window.

    The truncated function is a polynomial times ``exp(-z^{p-1} Tr(A^{p-1}) / (p-1) + ...)``
    with ``A = P^{-1} V``, so its measured order is p - 1 unless that trace
    vanishes or the radii reach the scale of the dropped eigenvalues. The
    default ``p = [d/2] + 2`` keeps the top term of the polynomial that
    relates ``det_ζ`` to ``det_p``, whose degree is the order ``[d/2] + 1``.
    """
    sector = Sector(geometry, basis, fermion_mass)
    p = p or sector.dimension // 2 + 2
    mu = sector.green_spectrum(V)
    angles = angles if angles is not None else np.linspace(0, 2 * math.pi, 8, endpoint=False) + 0.1
    radii = radii if radii is not None else np.geomspace(1e2, 1e6, 25)
    window = window or ((0.85, 1.15) if sector.dimension == 1 else (1.8, 2.2))

    def log_f(z: complex) -> complex:
        return complex(np.sum(log_weierstrass_factor(p - 1, -z * mu)))

    order = estimate_order(log_f, angles, radii, log_scale=True)
    lower = sector.dimension // 2 + 1
    upper = sector.order_bound + 1
    return CheckReport(
        name="growth_order",
        passed=window[0] <= order <= window[1],
        values={
            "order": order,
            "window": list(window),
            "optimal_order_lower_bound": lower,
            "growth_upper_bound": upper,
            "p": p,
            "cutoff": basis.cutoff,
        },
    )
