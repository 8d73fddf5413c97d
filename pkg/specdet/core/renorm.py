"""Heat-regularized determinants and counterterm extraction."""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..errors import CounterTermError, InsufficientDataError
from .determinants import fredholm_det
from .execution import GridExecutor, default_executor
from .geometry import Geometry, ModeBasis, PerturbationField
from .operators import multiplication_matrix
from .results import (
    BASIS_TAGS,
    CORE_TAGS,
    POWER_TAGS,
    SINGULAR_TAGS,
    AsymptoticFit,
    CounterTerm,
    DetResult,
    Method,
    basis_function,
    regular_tags,
)

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e10
ZEROING_SIGMAS = 3.0
DIVERGENCE_TOL = 1e-6
# 2 ε_min λ_edge below this leaves the truncation visible in the fit
MIN_EDGE_DAMPING = 20.0


def regularized_green(basis: ModeBasis, eps: float) -> np.ndarray:
    """Diagonal of ``e^{-2εΔ} Δ^{-1}`` in the mode basis."""
    if eps < 0:
        raise ValueError(f"ε must be non-negative, got {eps}")
    free = basis.free_eigenvalues
    return np.exp(-2 * eps * free) / free


def regularized_kernel(V: PerturbationField, eps: float, basis: ModeBasis) -> np.ndarray:
    return regularized_green(basis, eps)[:, None] * multiplication_matrix(V, basis)


def regularized_trace(V: PerturbationField, eps: float, basis: ModeBasis) -> complex:
    """``Tr(e^{-2εΔ} Δ^{-1} V) = V̂(0) sum_n g_n``."""
    return complex(V.mean * regularized_green(basis, eps).sum())


def regularized_fredholm(
    V: Optional[PerturbationField],
    eps: float,
    basis: ModeBasis,
    geometry: Optional[Geometry] = None,
) -> DetResult:
    """``det_F(Id + e^{-2εΔ} Δ^{-1} V)`` at cutoff N."""
    if not eps > 0:
        raise ValueError(f"ε must be positive, got {eps}")
    if geometry is not None and geometry.continuum() != basis.geometry:
        raise ValueError("basis was built for a different geometry")
    params = {"eps": eps}
    if V is None or V.is_zero:
        return DetResult(1 + 0j, 0j, Method.FREDHOLM, cutoff=basis.cutoff, params=params)
    if V.is_constant:
        # multiplication by a constant is diagonal in modes
        factors = 1 + V.mean * regularized_green(basis, eps)
        if np.any(np.abs(factors) < 1e-14):
            return DetResult(0j, complex(-math.inf, 0), Method.FREDHOLM, cutoff=basis.cutoff,
                             params=params)
        return DetResult.from_log(np.sum(np.log(factors.astype(complex))), Method.FREDHOLM,
                                  cutoff=basis.cutoff, params=params)
    if V.is_real:
        # √g V √g is Hermitian and has the spectrum of g V
        root = np.sqrt(regularized_green(basis, eps))
        kernel = root[:, None] * multiplication_matrix(V, basis) * root[None, :]
        inner = fredholm_det(kernel, hermitian=True)
    else:
        inner = fredholm_det(regularized_kernel(V, eps, basis))
    return DetResult(inner.value, inner.log_value, Method.FREDHOLM, inner.error,
                     cutoff=basis.cutoff, params=params)


def _check_grid(eps: np.ndarray) -> None:
    if len(eps) < 8:
        raise InsufficientDataError(f"need at least 8 ε samples, got {len(eps)}")
    if np.any(eps <= 0):
        raise InsufficientDataError("ε samples must be positive")
    if math.log10(eps[-1] / eps[0]) < 2 - 1e-9:
        raise InsufficientDataError("ε samples must span at least two decades")
    steps = np.diff(np.log(eps))
    if np.any(steps <= 0) or steps.max() > 1.01 * steps.min():
        raise InsufficientDataError("ε samples must be log-spaced")


def _least_squares(design: np.ndarray, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    scale = np.abs(design).max(axis=0)
    scaled = design / scale
    solution, *_ = np.linalg.lstsq(scaled, values, rcond=None)
    fitted = scaled @ solution
    rss = float(np.sum((fitted - values) ** 2))
    dof = len(values) - design.shape[1]
    sigma2 = rss / dof if dof > 0 else 0.0
    covariance = sigma2 * np.linalg.pinv(scaled.T @ scaled)
    stderr = np.sqrt(np.abs(np.diag(covariance))) / scale
    return solution / scale, stderr, math.sqrt(rss / len(values))


def counterterm_extract(
    samples: Mapping[float, complex],
    tags: Sequence[str] = CORE_TAGS,
) -> AsymptoticFit:
    """Least-squares expansion of ``ε -> log value`` in the counterterm ring.

    Coefficients within 3σ of zero (or below 1e-10 of the data scale) are
    dropped one at a time, least significant first, and the fit is redone.
    """
    eps = np.array(sorted(samples), dtype=float)
    values = np.array([complex(samples[e]).real for e in eps])
    _check_grid(eps)
    tags = list(tags)
    unknown = set(tags) - set(BASIS_TAGS)
    if unknown:
        raise ValueError(f"unknown basis tags {sorted(unknown)}")
    design = np.column_stack([basis_function(tag, eps) for tag in tags])
    condition = float(np.linalg.cond(design / np.abs(design).max(axis=0)))
    if condition > MAX_CONDITION:
        raise InsufficientDataError(
            f"design matrix condition {condition:.2e} too large; widen the ε span or drop tags"
        )
    floor = 1e-10 * max(float(np.max(np.abs(values))), 1e-300)
    active = list(range(len(tags)))
    while True:
        coeffs, stderr, residual = _least_squares(design[:, active], values)
        threshold = np.maximum(ZEROING_SIGMAS * stderr, floor)
        significance = np.abs(coeffs) / threshold
        weakest = int(np.argmin(significance))
        if significance[weakest] > 1 or len(active) == 1:
            break
        del active[weakest]
    coefficients = {tag: 0.0 for tag in tags}
    errors = {tag: 0.0 for tag in tags}
    for j, column in enumerate(active):
        coefficients[tags[column]] = float(coeffs[j])
        errors[tags[column]] = float(stderr[j])
    return AsymptoticFit(coefficients, errors, residual, tuple(float(e) for e in eps))


@dataclass(frozen=True)
class Renormalization:
    """Renormalized determinant with its counterterm and the data behind it."""

    det: DetResult
    counterterm: CounterTerm
    fit: AsymptoticFit
    samples: Dict[float, complex] = field(repr=False)
    richardson: float = 0.0

    def shifted(self, c: float, integral: complex) -> DetResult:
        """Renormalization group action ``det -> exp(c ∫V) det``."""
        return DetResult.from_log(
            self.det.log_value + c * integral,
            Method.RENORMALIZED,
            error=self.det.error,
            cutoff=self.det.cutoff,
            params={**self.det.params, "rg_shift": c},
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "det": self.det.to_dict(),
            "counterterm": self.counterterm.to_dict(),
            "fit": self.fit.to_dict(),
            "richardson": self.richardson,
        }


def _richardson(fit: AsymptoticFit, eps: np.ndarray, values: np.ndarray) -> float:
    """Two-point extrapolation of the subtracted log in its leading surviving power."""
    remainder = values - fit.singular_part(eps)
    q = 0.5 if fit.coefficients.get("eps^1/2", 0.0) != 0.0 else 1.0
    e1, e2 = eps[0], eps[1]
    r1, r2 = remainder[0], remainder[1]
    return float((r1 * e2 ** q - r2 * e1 ** q) / (e2 ** q - e1 ** q))


def _significant_terms(fit: AsymptoticFit, tags: Sequence[str], eps_min: float) -> Dict[str, float]:
    """Coefficients that survived pruning and move the data at the finest ε."""
    return {
        tag: fit.coefficients[tag]
        for tag in tags
        if fit.coefficients.get(tag, 0.0) != 0.0
        and abs(fit.coefficients[tag] * basis_function(tag, np.array([eps_min]))[0]) > DIVERGENCE_TOL
    }


def _power_divergences(samples: Mapping[float, complex], tags: Sequence[str], eps_min: float) -> Dict[str, float]:
    rest = [t for t in tags if t not in POWER_TAGS]
    while True:
        try:
            wide = counterterm_extract(samples, POWER_TAGS + tuple(rest))
        except InsufficientDataError:
            # drop the highest regular power until the design is usable
            if len(rest) <= 2:
                return {}
            rest.pop()
            continue
        return _significant_terms(wide, POWER_TAGS, eps_min)


def renormalize_samples(
    samples: Mapping[float, complex],
    V: PerturbationField,
    geometry: Geometry,
    cutoff: Optional[int] = None,
    tags: Optional[Sequence[str]] = None,
) -> Renormalization:
    """Counterterm fit and ε -> 0 limit of sampled regularized log-determinants.

    The samples are fitted in the regular expansion of the dimension; only
    ``log ε`` may be singular and only in d = 2. When that expansion leaves
    a residual, power divergences are looked for and raise CounterTermError.
    """
    d = geometry.dimension
    max_order = d // 2
    tags = tuple(tags) if tags is not None else regular_tags(d)
    eps_grid = sorted(float(e) for e in samples)
    eps = np.array(eps_grid)
    real = np.array([complex(samples[e]).real for e in eps_grid])
    imag = np.array([complex(samples[e]).imag for e in eps_grid])

    fit = counterterm_extract(samples, tags)
    if fit.residual > DIVERGENCE_TOL * max(1.0, float(np.max(np.abs(real)))):
        powers = _power_divergences(samples, tags, eps_grid[0])
        if powers:
            raise CounterTermError(f"power divergences in a d={d} bosonic determinant", powers)
        logger.warning(f"counterterm fit residual {fit.residual:.2e} on {len(eps_grid)} samples")
    if max_order == 0:
        logs = _significant_terms(fit, ("log_eps",), eps_grid[0])
        if logs:
            raise CounterTermError("logarithmic divergence where none is expected", logs)

    integral = V.integral(geometry)
    orders: Dict[int, AsymptoticFit] = {}
    if max_order >= 1 and any(fit.coefficients.get(tag, 0.0) for tag in SINGULAR_TAGS):
        if abs(integral) > 1e-14:
            per_unit = {
                tag: (fit.coefficients.get(tag, 0.0) / integral.real if tag in SINGULAR_TAGS else 0.0)
                for tag in fit.coefficients
            }
            orders[1] = AsymptoticFit(per_unit, {}, fit.residual, fit.grid)
        else:
            logger.warning(f"singular terms {fit.nonzero()} for a field with zero integral")
    counterterm = CounterTerm(orders, {1: integral} if max_order >= 1 else {}, max_order)

    limit = fit.coefficients.get("const", 0.0)
    richardson = _richardson(fit, eps, real)
    # imaginary parts carry no divergence for real fields; keep the finest sample
    phase = float(imag[0]) if np.ptp(imag) < 1e-10 else float(
        counterterm_extract(dict(zip(eps_grid, imag)), tags).coefficients.get("const", 0.0)
    )
    error = abs(richardson - limit) + fit.stderr.get("const", 0.0)
    logger.debug(f"renormalized limit {limit:.10f} (richardson {richardson:.10f}, fit {fit.nonzero()})")
    det = DetResult.from_log(
        complex(limit, phase),
        Method.RENORMALIZED,
        error=error,
        cutoff=cutoff,
        params={"eps_min": eps_grid[0], "eps_max": eps_grid[-1], "fit": fit.nonzero()},
    )
    return Renormalization(det, counterterm, fit, {e: complex(samples[e]) for e in eps_grid}, richardson)


def renormalized_det(
    V: PerturbationField,
    geometry: Geometry,
    basis: ModeBasis,
    eps_grid: Sequence[float],
    tags: Optional[Sequence[str]] = None,
    executor: Optional[GridExecutor] = None,
) -> Renormalization:
    """``lim exp(Q_ε(V)) det_F(Id + e^{-2εΔ} Δ^{-1} V)`` as ε -> 0.

    The singular part of the regularized log is fitted and removed; the
    regular part's constant term is the limit.
    """
    eps_grid = sorted(float(e) for e in eps_grid)
    damping = 2 * eps_grid[0] * basis.edge_eigenvalue
    if damping < MIN_EDGE_DAMPING:
        logger.warning(
            f"cutoff {basis.cutoff} too small for ε={eps_grid[0]:.2e}: "
            f"edge modes damped by only e^-{damping:.1f}"
        )
    executor = default_executor(executor)
    results = executor.map(lambda e: regularized_fredholm(V, e, basis, geometry), eps_grid)
    samples = {e: r.log_value for e, r in zip(eps_grid, results)}
    return renormalize_samples(samples, V, geometry, cutoff=basis.cutoff, tags=tags)
