"""Weierstrass factors, Hadamard products and growth estimates."""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from ..errors import InsufficientDataError, OrderEstimationError, TailBoundError

logger = logging.getLogger(__name__)

# |z|^(p+1+SERIES_TERMS) is below double precision for |z| < 1/2
SERIES_TERMS = 60
MIN_ZEROS = 100


def log_weierstrass_factor(p: int, z) -> np.ndarray:
    """Principal log of ``E_p(z) = (1 - z) exp(z + ... + z^p/p)``, vectorized."""
    if p < 0:
        raise ValueError(f"factor order must be non-negative, got {p}")
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    small = np.abs(z) < 0.5
    if np.any(small):
        zs = z[small]
        acc = np.zeros_like(zs)
        power = zs ** (p + 1)
        for k in range(p + 1, p + 1 + SERIES_TERMS):
            acc -= power / k
            power = power * zs
        out[small] = acc
    if np.any(~small):
        zl = z[~small]
        with np.errstate(divide="ignore"):
            acc = np.log(1 - zl)
        power = np.ones_like(zl)
        for k in range(1, p + 1):
            power = power * zl
            acc = acc + power / k
        out[~small] = acc
    return out


def weierstrass_factor(p: int, z: complex) -> complex:
    log_value = complex(log_weierstrass_factor(p, z))
    if log_value.real == -math.inf:
        return 0j
    return complex(np.exp(log_value))


@dataclass(frozen=True, eq=False)
class ZeroSequence:
    """Nonzero zeros ordered by modulus, multiplicities as repeats."""

    zeros: np.ndarray = field(repr=False)
    genus: int = 0

    def __post_init__(self) -> None:
        zeros = np.asarray(self.zeros, dtype=complex).ravel()
        if np.any(zeros == 0):
            raise ValueError("zeros at the origin belong in the genus, not the sequence")
        moduli = np.abs(zeros)
        if np.any(np.diff(moduli) < 0):
            raise ValueError("zeros must be ordered by nondecreasing modulus")
        if self.genus < 0:
            raise ValueError(f"genus must be non-negative, got {self.genus}")
        zeros.setflags(write=False)
        object.__setattr__(self, "zeros", zeros)

    @classmethod
    def from_values(cls, values: Iterable[complex], genus: int = 0) -> "ZeroSequence":
        values = np.asarray(list(values), dtype=complex)
        order = np.lexsort((np.angle(values), np.abs(values)))
        return cls(values[order], genus)

    def __len__(self) -> int:
        return len(self.zeros)

    @property
    def moduli(self) -> np.ndarray:
        return np.abs(self.zeros)

    def power_sum(self, exponent: float) -> float:
        return float(np.sum(self.moduli ** (-exponent)))


@dataclass(frozen=True, eq=False)
class HadamardData:
    """``z^m exp(P(z)) prod E_p(z/a_n)`` with ``P`` of degree at most p."""

    zeros: ZeroSequence
    order: int
    polynomial: Tuple[complex, ...] = ()

    def __post_init__(self) -> None:
        if self.order < 0:
            raise ValueError(f"factor order must be non-negative, got {self.order}")
        if len(self.polynomial) > self.order + 1:
            raise ValueError(f"exponential polynomial has degree above {self.order}")
        object.__setattr__(self, "polynomial", tuple(complex(c) for c in self.polynomial))

    def exponent(self, z: complex) -> complex:
        return complex(sum(c * z ** k for k, c in enumerate(self.polynomial)))

    def raise_order(self) -> "HadamardData":
        """Same function written with factors of order p+1.

        Exact for a complete (finite) zero sequence: the extra exponential of
        every factor is absorbed into P.
        """
        p = self.order + 1
        shift = -np.sum(self.zeros.zeros ** (-p)) / p
        coeffs = list(self.polynomial) + [0j] * (p + 1 - len(self.polynomial))
        coeffs[p] += shift
        return HadamardData(self.zeros, p, tuple(coeffs))


@dataclass(frozen=True)
class HadamardValue:
    value: complex
    log_value: complex
    tail_bound: float


def _power_law(moduli: np.ndarray) -> Tuple[float, float]:
    """Fit |a_n| ~ C n^beta on the upper half of the stored zeros."""
    n = np.arange(1, len(moduli) + 1)
    upper = slice(len(moduli) // 2, None)
    fit = stats.linregress(np.log(n[upper]), np.log(moduli[upper]))
    return math.exp(fit.intercept), fit.slope


def tail_bound(data: HadamardData, z: complex) -> float:
    """Bound on |log| of the dropped factors beyond the stored zeros."""
    moduli = data.zeros.moduli
    K = len(moduli)
    if K < 2:
        raise InsufficientDataError("need at least two stored zeros to extrapolate the tail")
    if abs(z) == 0:
        return 0.0
    if moduli[-1] < 2 * abs(z):
        raise TailBoundError(
            f"zeros with |a| < 2|z| = {2 * abs(z):.3g} must be stored; largest is {moduli[-1]:.3g}",
            math.inf,
        )
    C, beta = _power_law(moduli)
    q = data.order + 1
    if beta * q <= 1:
        raise TailBoundError(f"sum |a_n|^-{q} diverges for growth exponent {beta:.3f}", math.inf)
    return 2 * abs(z) ** q * C ** (-q) * K ** (1 - beta * q) / (beta * q - 1)


def hadamard_eval(
    data: HadamardData, z: complex, tol: float = 1e-8, complete: bool = False
) -> HadamardValue:
    """Evaluate the Hadamard product over the stored zeros.

    ``complete=True`` declares the zero list exhaustive (a polynomial times an
    exponential), so no tail is estimated.
    """
    z = complex(z)
    bound = 0.0 if complete else tail_bound(data, z)
    if bound > tol:
        raise TailBoundError(f"tail bound exceeds tol {tol:.1e} at |z| = {abs(z):.3g}", bound)
    logs = log_weierstrass_factor(data.order, z / data.zeros.zeros)
    log_value = complex(np.sum(logs)) + data.exponent(z)
    if data.zeros.genus:
        with np.errstate(divide="ignore"):
            log_value += data.zeros.genus * complex(np.log(z + 0j))
    if log_value.real == -math.inf or np.isnan(log_value):
        return HadamardValue(0j, complex(-math.inf, 0.0), bound)
    return HadamardValue(complex(np.exp(log_value)), log_value, bound)


@dataclass(frozen=True)
class ExponentEstimate:
    value: float
    uncertainty: float

    def contains(self, target: float, slack: float = 0.0) -> bool:
        return abs(self.value - target) <= max(self.uncertainty, slack)


def critical_exponent(zeros: ZeroSequence) -> ExponentEstimate:
    """Convergence exponent from the slope of log N(r) against log r."""
    if len(zeros) < MIN_ZEROS:
        raise InsufficientDataError(f"need at least {MIN_ZEROS} zeros, got {len(zeros)}")
    radii, counts = np.unique(np.round(zeros.moduli, 12), return_counts=True)
    log_r = np.log(radii)
    log_n = np.log(np.cumsum(counts))
    upper = log_r >= 0.5 * (log_r[0] + log_r[-1])
    if upper.sum() < 8:
        raise InsufficientDataError("too few distinct moduli in the upper range")
    x, y = log_r[upper], log_n[upper]
    fit = stats.linregress(x, y)
    half = len(x) // 2
    lower_slope = stats.linregress(x[:half], y[:half]).slope
    upper_slope = stats.linregress(x[half:], y[half:]).slope
    spread = abs(upper_slope - lower_slope) / 2
    return ExponentEstimate(float(fit.slope), float(fit.stderr + spread))


def estimate_order(
    f: Callable[[complex], complex],
    angles: Sequence[float],
    radii: Sequence[float],
    log_scale: bool = False,
) -> float:
    """Growth order from log log|f(r e^{iθ})| against log r, maximized over rays.

    With ``log_scale=True`` ``f`` returns ``log f`` (or ``log|f|``), which
    keeps large radii free of overflow.
    """
    radii = np.sort(np.asarray(radii, dtype=float))
    window = radii[radii >= radii[-1] / 100.0]
    best: Optional[float] = None
    for theta in angles:
        xs, ys = [], []
        for r in window:
            z = r * complex(math.cos(theta), math.sin(theta))
            try:
                with np.errstate(over="raise", invalid="raise"):
                    value = f(z)
                    growth = complex(value).real if log_scale else math.log(abs(value))
            except (OverflowError, FloatingPointError, ValueError):
                continue
            if math.isfinite(growth) and growth > 0:
                xs.append(math.log(r))
                ys.append(math.log(growth))
        if len(xs) < 3:
            logger.debug(f"ray {theta:.3f}: only {len(xs)} usable radii")
            continue
        slope = float(np.polyfit(xs, ys, 1)[0])
        logger.debug(f"ray {theta:.3f}: slope {slope:.4f}")
        best = slope if best is None else max(best, slope)
    if best is None:
        raise OrderEstimationError(
            "no ray produced a usable growth profile; try smaller radii or log_scale=True"
        )
    return best
