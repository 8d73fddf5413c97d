"""Determinant engines.

Fredholm and Gohberg-Krein determinants of finite matrices, heat traces and
zeta determinants of truncated operators, the one dimensional monodromy
oracle and log-determinants of lattice operators.
"""

import cmath
import logging
import math
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import special
from scipy.integrate import solve_ivp

from ..errors import (
    HeatFitError,
    InvertibilityError,
    MonodromyError,
    NotPositiveDefiniteError,
    RouteDisagreementError,
    SeriesDivergenceError,
    SpectralCutError,
)
from .cache import EigenCache
from .entire import log_weierstrass_factor
from .geometry import Geometry, GeometryKind, PerturbationField
from .operators import INVERTIBILITY_TOL, OperatorKind, TruncatedOperator, eigenvalues
from .results import DetResult, Method

logger = logging.getLogger(__name__)

ZERO_FACTOR_TOL = 1e-14
ROUTE_TOL = 1e-8
CUT_MARGIN = 1e-3
# exp(-L^2 / 4t) below 1e-14 keeps winding corrections out of the fit window
WINDING_LOG = math.log(1e14)


def _spectrum(K: np.ndarray) -> np.ndarray:
    K = np.asarray(K, dtype=complex)
    if K.size == 0:
        return np.zeros(0, dtype=complex)
    return sla.eigvals(K)


def _log_product(factors: np.ndarray) -> Tuple[complex, bool]:
    if np.any(np.abs(factors) < ZERO_FACTOR_TOL):
        return complex(-math.inf, 0.0), True
    return complex(np.sum(np.log(factors))), False


def fredholm_det(K: np.ndarray, hermitian: bool = False) -> DetResult:
    """``det_F(Id + K) = prod (1 + λ_k(K))``."""
    K = np.asarray(K, dtype=complex)
    if hermitian and K.size:
        spectrum = sla.eigvalsh(K).astype(complex)
    else:
        spectrum = _spectrum(K)
    log_value, vanishes = _log_product(1 + spectrum)
    if vanishes:
        return DetResult(0j, log_value, Method.FREDHOLM, cutoff=None, params={"size": len(K)})
    error = len(K) * np.finfo(float).eps * (1 + float(np.max(np.abs(spectrum), initial=0.0)))
    return DetResult.from_log(log_value, Method.FREDHOLM, error=error, params={"size": len(K)})


def rp_transform(p: int, A: np.ndarray) -> np.ndarray:
    """``R_p(A) = (Id + A) exp(sum_{n<p} (-1)^n A^n / n) - Id``."""
    if p < 2:
        raise ValueError(f"R_p needs p >= 2, got {p}")
    A = np.asarray(A, dtype=complex)
    eye = np.eye(len(A), dtype=complex)
    exponent = np.zeros_like(A)
    power = eye
    for n in range(1, p):
        power = power @ A
        exponent = exponent + (-1) ** n * power / n
    return (eye + A) @ sla.expm(exponent) - eye


def gk_det(p: int, A: np.ndarray, cross_check: bool = True) -> DetResult:
    """Gohberg-Krein determinant ``det_p(Id + A) = prod E_{p-1}(-λ_k(A))``.

    For p >= 2 the product is cross-checked against ``det_F(Id + R_p(A))``.
    """
    if p < 1:
        raise ValueError(f"det_p needs p >= 1, got {p}")
    if p == 1:
        return fredholm_det(A)
    A = np.asarray(A, dtype=complex)
    spectrum = _spectrum(A)
    logs = log_weierstrass_factor(p - 1, -spectrum)
    if np.any(np.isneginf(logs.real)) or np.any(np.abs(1 + spectrum) < ZERO_FACTOR_TOL):
        return DetResult(0j, complex(-math.inf, 0.0), Method.GK_PRODUCT, params={"p": p})
    log_value = complex(np.sum(logs))
    error = len(A) * np.finfo(float).eps * (1 + float(np.max(np.abs(spectrum), initial=0.0)))
    params: Dict[str, Any] = {"p": p, "size": len(A)}
    if cross_check:
        other = fredholm_det(rp_transform(p, A))
        if not other.is_zero:
            gap = abs(cmath.exp(other.log_value - log_value) - 1)
            if gap > ROUTE_TOL:
                raise RouteDisagreementError(
                    "product and R_p routes for det_p disagree",
                    {"gk_product": cmath.exp(log_value), "gk_rp": other.value},
                )
            error = max(error, gap)
            params["rp_value"] = other.value
    return DetResult.from_log(log_value, Method.GK_PRODUCT, error=error, params=params)


def gk_det_rp(p: int, A: np.ndarray) -> DetResult:
    """``det_p`` through ``det_F(Id + R_p(A))`` only."""
    inner = fredholm_det(rp_transform(p, A))
    return DetResult(inner.value, inner.log_value, Method.GK_RP, inner.error, params={"p": p})


def gk_log_trace_series(p: int, A: np.ndarray, tol: float = 1e-14, max_terms: int = 20000) -> complex:
    """``log det_p(Id + A) = sum_{n>=p} (-1)^(n+1) Tr(A^n) / n`` for contractions."""
    A = np.asarray(A, dtype=complex)
    if A.size == 0:
        return 0j
    radius = float(np.max(np.abs(_spectrum(A))))
    if radius >= 1:
        raise SeriesDivergenceError("series route invalid; use product route", radius)
    if radius == 0 and not np.any(A):
        return 0j
    dim = len(A)
    power = np.linalg.matrix_power(A, p)
    total = 0j
    for n in range(p, p + max_terms):
        term = (-1) ** (n + 1) * np.trace(power) / n
        total += term
        tail = dim * radius ** (n + 1) / ((n + 1) * (1 - radius))
        if abs(term) < tol and tail < tol:
            return complex(total)
        power = power @ A
    logger.warning(f"trace series stopped after {max_terms} terms (radius {radius:.4f})")
    return complex(total)


def gk_det_series(p: int, A: np.ndarray, tol: float = 1e-14) -> DetResult:
    log_value = gk_log_trace_series(p, A, tol)
    return DetResult.from_log(log_value, Method.GK_TRACE_SERIES, error=tol, params={"p": p})


# heat traces


def heat_trace_bound(op: TruncatedOperator, t: float) -> float:
    """Bound on the heat trace carried by modes outside the truncation."""
    return op.size * math.exp(-t * op.edge_eigenvalue)


def heat_traces(spectrum: np.ndarray, times: np.ndarray) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    return np.exp(-np.outer(times, spectrum)).sum(axis=1)


def heat_trace(
    op: TruncatedOperator,
    t: float,
    tol: Optional[float] = None,
    cache: Optional[EigenCache] = None,
) -> complex:
    """``Tr exp(-t P)`` over the truncated spectrum."""
    if not t > 0:
        raise ValueError(f"heat time must be positive, got {t}")
    bound = heat_trace_bound(op, t)
    if tol is not None and bound > tol:
        logger.warning(f"heat trace at t={t:.3g}: truncation bound {bound:.2e} exceeds {tol:.1e}")
    return complex(heat_traces(eigenvalues(op, cache), np.array([t]))[0])


# zeta determinants


class ZetaConfig(BaseModel):
    """Spectral cut and Mellin regularization settings.

    ``split_point`` and ``window`` default to values derived from the
    truncation: the split sits where the dropped modes contribute less than
    ``truncation_tol`` and the window stays short of winding corrections.
    """

    model_config = ConfigDict(frozen=True)

    cut_angle: Optional[float] = None
    split_point: Optional[float] = Field(default=None, gt=0)
    coefficients: Optional[int] = Field(default=None, ge=1, le=12)
    window: Optional[Tuple[float, float]] = None
    samples: int = Field(default=64, ge=8)
    truncation_tol: float = Field(default=1e-12, gt=0)
    fit_tol: float = Field(default=1e-5, gt=0)

    @field_validator("cut_angle")
    @classmethod
    def _cut_inside(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not CUT_MARGIN <= value <= 2 * math.pi - CUT_MARGIN:
            raise ValueError("cut angle must lie in (0, 2π) at least 1e-3 from the ends")
        return value

    @property
    def theta(self) -> float:
        """The configured cut, or the negative real axis."""
        return math.pi if self.cut_angle is None else self.cut_angle

    @model_validator(mode="after")
    def _window_ordered(self) -> "ZetaConfig":
        if self.window is not None and not 0 < self.window[0] < self.window[1]:
            raise ValueError("fit window must satisfy 0 < start < end")
        return self


def cut_log(values: np.ndarray, theta: float) -> np.ndarray:
    """``log λ`` with ``arg λ`` taken in ``(θ - 2π, θ)``."""
    values = np.asarray(values, dtype=complex)
    arg = np.angle(values)
    distance = np.abs((arg - theta + math.pi) % (2 * math.pi) - math.pi)
    close = distance < CUT_MARGIN
    if np.any(close):
        raise SpectralCutError(f"eigenvalue within {CUT_MARGIN} rad of the cut θ={theta:.4f}",
                               complex(values[np.argmax(close)]))
    arg = np.where(arg >= theta, arg - 2 * math.pi, arg)
    arg = np.where(arg < theta - 2 * math.pi, arg + 2 * math.pi, arg)
    return np.log(np.abs(values)) + 1j * arg


def admissible_cut(spectrum: np.ndarray, preferred: float = math.pi) -> float:
    """A cut angle clear of every eigenvalue.

    ``preferred`` is kept when no eigenvalue lies within the margin of it;
    otherwise the ray bisecting the widest angular gap of the spectrum is
    returned (the smallest such angle on ties). The positive real axis is
    always treated as occupied.
    """
    values = np.asarray(spectrum, dtype=complex)
    values = values[np.abs(values) > 0]
    args = np.mod(np.angle(values), 2 * math.pi)
    distance = np.abs((args - preferred + math.pi) % (2 * math.pi) - math.pi)
    if not np.any(distance < CUT_MARGIN):
        return preferred
    occupied = np.unique(np.concatenate([[0.0], args, [2 * math.pi]]))
    gaps = np.diff(occupied)
    widest = int(np.argmax(gaps))
    if gaps[widest] < 2 * CUT_MARGIN:
        raise SpectralCutError("no ray clear of the spectrum", complex(values[0]))
    theta = float(occupied[widest] + gaps[widest] / 2)
    logger.info(f"cut θ={preferred:.4f} meets the spectrum; using θ={theta:.4f}")
    return theta


def _ein(x: np.ndarray, terms: int = 80) -> np.ndarray:
    """Entire exponential integral ``sum_{n>=1} (-1)^(n+1) x^n / (n n!)``."""
    total = np.zeros_like(x)
    power = np.ones_like(x)
    for n in range(1, terms + 1):
        power = power * (-x) / n
        total = total - power / n
    return total


def _large_time_terms(spectrum: np.ndarray, tau: float, theta: float) -> complex:
    """Derivative at s=0 of the Mellin integral over ``(τ, ∞)``, continued in λ.

    Near the origin (and off the right half plane) the entire combination
    ``Ein(τλ) - γ - log τ - log_θ λ`` is used; elsewhere it equals
    ``E1(τλ)`` up to the branch shift between principal and cut logs.
    """
    x = tau * spectrum
    logs = cut_log(spectrum, theta)
    near = (np.abs(x) <= 2) | (spectrum.real <= 0)
    total = 0j
    if np.any(near):
        xs = x[near]
        total += np.sum(_ein(xs) - np.euler_gamma - math.log(tau) - logs[near])
    far = ~near
    if np.any(far):
        shift = np.log(spectrum[far]) - logs[far]
        total += np.sum(special.exp1(x[far]) + shift)
    return complex(total)


def _small_time_term(coefficient: complex, alpha2: int, tau: float) -> complex:
    """Derivative at s=0 of ``Γ(s)^-1 ∫_0^τ t^(s-1) c (t/τ)^(α) dt``, α = alpha2/2."""
    if alpha2 == 0:
        return coefficient * (math.log(tau) + np.euler_gamma)
    return coefficient / (alpha2 / 2)


def _free_small_time(op: TruncatedOperator, tau: float) -> complex:
    """Small-time Mellin part of the free operator from its exact heat expansion."""
    d = op.geometry.dimension
    weyl = op.geometry.volume / (4 * math.pi) ** (d / 2)
    total = 0j
    if op.kind is OperatorKind.DIRAC_SQUARED:
        return _small_time_term(weyl * tau ** (-d / 2), -d, tau)
    mass2 = op.geometry.mass ** 2
    term = 1.0
    for k in range(0, 200):
        if k:
            term *= -mass2 * tau / k
        total += _small_time_term(weyl * term * tau ** (-d / 2), 2 * k - d, tau)
        if abs(term) < 1e-18:
            break
    return total


def _default_coefficients(dimension: int) -> int:
    return 5 if dimension == 1 else 7


def _split_and_window(op: TruncatedOperator, cfg: ZetaConfig) -> Tuple[float, float, float]:
    tau = cfg.split_point or (
        (math.log(op.size) + math.log(1 / cfg.truncation_tol)) / op.edge_eigenvalue
    )
    if cfg.window is not None:
        return tau, cfg.window[0], cfg.window[1]
    cap = op.geometry.length ** 2 / (4 * WINDING_LOG)
    end = max(min(20 * tau, cap), 3 * tau)
    return tau, tau, end


def _fit_difference(
    spectrum: np.ndarray,
    free_spectrum: np.ndarray,
    tau: float,
    window: Tuple[float, float],
    dimension: int,
    count: int,
    samples: int,
) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """Fit ``H(t) - H_free(t) = sum_k c_k (t/τ)^(k - d/2)`` on the window."""
    times = np.geomspace(window[0], window[1], samples)
    difference = heat_traces(spectrum, times) - heat_traces(free_spectrum, times)
    alpha2 = np.array([2 * k - dimension for k in range(1, count + 1)])
    u = times / tau
    design = u[:, None] ** (alpha2[None, :] / 2)
    scale = np.abs(design).max(axis=0)
    solution, *_ = np.linalg.lstsq(design / scale, difference, rcond=None)
    coefficients = solution / scale
    peak = float(np.max(np.abs(difference)))
    residual = float(np.sqrt(np.mean(np.abs(design @ coefficients - difference) ** 2)))
    return coefficients, alpha2, residual / max(peak, 1e-300), peak


def zeta_log_det(
    op: TruncatedOperator,
    cfg: Optional[ZetaConfig] = None,
    cache: Optional[EigenCache] = None,
    relative: bool = False,
) -> Tuple[complex, float, Dict[str, Any]]:
    """``-ζ'(0)`` of a truncated second order operator.

    With ``relative=True`` the free operator's value is left out, giving
    ``log det_ζ(P) - log det_ζ(P_free)``.
    """
    cfg = cfg or ZetaConfig()
    if op.kind in (OperatorKind.DIRAC, OperatorKind.DIRAC_PERTURBED):
        raise ValueError("zeta determinants are taken of second order operators (use D*(D+A))")
    spectrum = eigenvalues(op, cache)
    free_spectrum = op.free_diagonal.astype(complex)
    smallest = float(np.min(np.abs(spectrum)))
    if smallest <= INVERTIBILITY_TOL * max(1.0, float(np.max(np.abs(spectrum)))):
        raise InvertibilityError("operator is not invertible", smallest)
    theta = cfg.theta
    tau, start, end = _split_and_window(op, cfg)
    d = op.geometry.dimension
    count = cfg.coefficients or _default_coefficients(d)

    derivative = _large_time_terms(spectrum, tau, theta)
    if relative:
        derivative -= _large_time_terms(free_spectrum, tau, theta)
    else:
        derivative += _free_small_time(op, tau)

    residual, peak = 0.0, 0.0
    fitted: Dict[str, complex] = {}
    if op.perturbation is not None and not op.perturbation.is_zero:
        coefficients, alpha2, residual, peak = _fit_difference(
            spectrum, free_spectrum, tau, (start, end), d, count, cfg.samples
        )
        logger.debug(
            f"zeta fit: tau={tau:.3e} window=[{start:.3e}, {end:.3e}] "
            f"J={count} residual={residual:.2e}"
        )
        if residual > cfg.fit_tol:
            raise HeatFitError("heat coefficient fit failed; increase N or shrink fit window", residual)
        for c, a2 in zip(coefficients, alpha2):
            derivative += _small_time_term(c, int(a2), tau)
            fitted[f"t^{a2}/2"] = complex(c)
    bound = heat_trace_bound(op, tau)
    error = bound / max(tau * op.edge_eigenvalue, 1.0) + residual * peak * 2 * count
    params = {
        "tau": tau,
        "window": [start, end],
        "fitted": fitted,
        "fit_residual": residual,
        "truncation_bound": bound,
        "cut_angle": theta,
    }
    return -derivative, error, params


def zeta_det_mellin(
    op: TruncatedOperator,
    cfg: Optional[ZetaConfig] = None,
    cache: Optional[EigenCache] = None,
) -> DetResult:
    """``det_ζ = exp(-ζ'(0))`` through the Mellin transform of the heat trace."""
    log_value, error, params = zeta_log_det(op, cfg, cache)
    return DetResult.from_log(
        log_value, Method.ZETA_MELLIN, error=error,
        cutoff=op.cutoff, params=params,
    )


def zeta_ratio_mellin(
    op: TruncatedOperator,
    cfg: Optional[ZetaConfig] = None,
    cache: Optional[EigenCache] = None,
) -> DetResult:
    """``det_ζ(P) / det_ζ(P_free)`` with the free small-time part cancelled."""
    log_value, error, params = zeta_log_det(op, cfg, cache, relative=True)
    params["ratio"] = True
    return DetResult.from_log(log_value, Method.ZETA_MELLIN, error=error, cutoff=op.cutoff,
                              params=params)


def free_circle_det(length: float, mass: float) -> float:
    """Closed form ``4 sinh²(mL/2)`` of ``-d²/dx² + m²`` on a circle of length L."""
    return 4 * math.sinh(mass * length / 2) ** 2


def monodromy_matrix(
    W: Optional[PerturbationField], mass: float, length: float, rtol: float = 1e-12
) -> np.ndarray:
    """Period map of ``y'' = (m² + W) y`` over one circumference."""
    k0 = 2 * math.pi / length
    if W is None or W.is_zero:
        modes, coeffs = np.zeros(0), np.zeros(0, dtype=complex)
    else:
        if W.dimension != 1:
            raise ValueError("the monodromy oracle is one dimensional")
        modes = np.array([mode[0] for mode in W.coefficients], dtype=float)
        coeffs = np.array(list(W.coefficients.values()), dtype=complex)
    mass2 = mass ** 2

    def rhs(x: float, y: np.ndarray) -> np.ndarray:
        potential = mass2 + float(np.real(np.sum(coeffs * np.exp(1j * k0 * modes * x))))
        # y holds the columns (y1, y1', y2, y2')
        return np.array([y[1], potential * y[0], y[3], potential * y[2]])

    solution = solve_ivp(
        rhs, (0.0, length), np.array([1.0, 0.0, 0.0, 1.0]),
        method="DOP853", rtol=rtol, atol=rtol * 1e-2,
    )
    if not solution.success:
        raise MonodromyError(f"monodromy integration failed: {solution.message}")
    y = solution.y[:, -1]
    return np.array([[y[0], y[2]], [y[1], y[3]]])


def zeta_det_monodromy(
    W: Optional[PerturbationField], mass: float, geometry: Optional[Geometry] = None
) -> DetResult:
    """Determinant ratio ``det(M_W - I) / det(M_0 - I)`` of the periodic problem.

    ``params['absolute']`` multiplies the ratio with the free closed form.
    """
    geometry = geometry or Geometry.circle(mass=mass)
    if geometry.kind is not GeometryKind.CIRCLE:
        raise ValueError("the monodromy oracle needs a circle")
    if W is not None and not W.is_real:
        raise ValueError("the monodromy oracle needs a real potential")
    L = geometry.length
    M = monodromy_matrix(W, mass, L)
    wronskian = float(np.linalg.det(M))
    if abs(wronskian - 1) > 1e-8:
        raise MonodromyError(f"monodromy lost unimodularity (det M = {wronskian:.12f})")
    free = 2 - 2 * math.cosh(mass * L)
    ratio = (2 - float(np.trace(M))) / free
    error = 1e-10 * (abs(float(np.trace(M))) + 2) / abs(free)
    absolute = ratio * free_circle_det(L, mass)
    log_value = cmath.log(ratio)
    return DetResult.from_log(
        log_value, Method.ZETA_MONODROMY, error=error,
        params={"absolute": absolute, "trace": float(np.trace(M)), "ratio": True},
    )


# lattice operators


def lattice_logdet(M: Union[np.ndarray, sp.spmatrix]) -> float:
    """``log det`` of a symmetric positive definite matrix from its pivots."""
    if sp.issparse(M):
        M = sp.csc_matrix(M, dtype=float)
        if M.shape[0] != M.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {M.shape}")
        asymmetry = abs(M - M.T).max() if M.nnz else 0.0
        if asymmetry > 1e-12 * max(1.0, abs(M).max()):
            raise NotPositiveDefiniteError("matrix is not symmetric", 0)
        try:
            lu = spla.splu(
                M,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as e:
            raise NotPositiveDefiniteError(f"factorization failed: {e}", 0) from e
        # pivots are leading minors only under a symmetric permutation
        moved = np.flatnonzero(lu.perm_r != lu.perm_c)
        if moved.size:
            raise NotPositiveDefiniteError("zero diagonal pivot", int(lu.perm_c[moved[0]]))
        pivots = lu.U.diagonal()
        bad = np.flatnonzero(pivots <= 0)
        if bad.size:
            raise NotPositiveDefiniteError("matrix is not positive definite", int(bad[0]))
        return float(np.sum(np.log(pivots)))
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.allclose(M, M.T, rtol=1e-12, atol=1e-12):
        raise NotPositiveDefiniteError("matrix is not symmetric", 0)
    factor, info = sla.lapack.dpotrf(M, lower=False, clean=True)
    if info > 0:
        raise NotPositiveDefiniteError("matrix is not positive definite", int(info - 1))
    if info < 0:
        raise ValueError(f"invalid argument {-info} to Cholesky factorization")
    return float(2 * np.sum(np.log(np.diag(factor))))
