"""Result records shared by the determinant engines and the checks."""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..errors import InsufficientDataError


class Method(str, Enum):
    FREDHOLM = "fredholm"
    GK_PRODUCT = "gk_product"
    GK_RP = "gk_rp"
    GK_TRACE_SERIES = "gk_trace_series"
    ZETA_MELLIN = "zeta_mellin"
    ZETA_MONODROMY = "zeta_monodromy"
    LATTICE_LU = "lattice_lu"
    RENORMALIZED = "fredholm_renormalized"


def jsonable(value: Any) -> Any:
    """Convert results, numpy values and complex numbers to JSON-friendly data."""
    if hasattr(value, "to_dict"):
        return value.to_dict()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (complex, np.complexfloating)):
        if value.imag == 0:
            return jsonable(value.real)
        return {"re": jsonable(value.real), "im": jsonable(value.imag)}
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value) or math.isinf(value):
            return str(value)
        return value
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, Mapping):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    return value


@dataclass(frozen=True)
class DetResult:
    """A determinant value with its continuously tracked logarithm.

    ``error`` estimates the absolute error of ``log_value``.
    """

    value: complex
    log_value: complex
    method: Method
    error: float = 0.0
    cutoff: Optional[int] = None
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.error >= 0:
            raise ValueError(f"error estimate must be non-negative, got {self.error}")
        object.__setattr__(self, "method", Method(self.method))

    @classmethod
    def from_log(cls, log_value: complex, method: Method, **kwargs: Any) -> "DetResult":
        log_value = complex(log_value)
        value = 0j if log_value.real == -math.inf else complex(np.exp(log_value))
        return cls(value=value, log_value=log_value, method=method, **kwargs)

    @property
    def is_zero(self) -> bool:
        return self.log_value.real == -math.inf

    def relative_to(self, other: "DetResult") -> complex:
        return complex(np.exp(self.log_value - other.log_value))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": jsonable(self.value),
            "log_value": jsonable(self.log_value),
            "method": self.method.value,
            "error": self.error,
            "cutoff": self.cutoff,
            "params": jsonable(self.params),
        }


@dataclass(frozen=True)
class MCEstimate:
    """Monte-Carlo mean with standard error over K samples."""

    mean: float
    stderr: float
    samples: int
    seed: int

    def __post_init__(self) -> None:
        if self.samples < 100:
            raise InsufficientDataError(f"need at least 100 samples, got {self.samples}")

    def within(self, reference: float, sigmas: float = 3.0) -> bool:
        if self.stderr == 0:
            return math.isclose(self.mean, reference, rel_tol=1e-12, abs_tol=1e-12)
        return abs(self.mean - reference) <= sigmas * self.stderr

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean, "stderr": self.stderr, "samples": self.samples, "seed": self.seed}


BASIS_TAGS: Tuple[str, ...] = (
    "eps^-1",
    "eps^-1/2",
    "log_eps",
    "const",
    "eps^1/2",
    "eps",
    "eps_log_eps",
    "eps^3/2",
    "eps^2",
    "eps^2_log_eps",
)
SINGULAR_TAGS: Tuple[str, ...] = ("eps^-1", "eps^-1/2", "log_eps")
# the counterterm ring plus its first regular powers
CORE_TAGS: Tuple[str, ...] = BASIS_TAGS[:6]
POWER_TAGS: Tuple[str, ...] = ("eps^-1", "eps^-1/2")


def regular_tags(dimension: int) -> Tuple[str, ...]:
    """Small-ε expansion of a heat-regularized bosonic log-determinant.

    Odd dimensions expand in half-integer powers, even ones in integer
    powers with logarithms. ``log_eps`` is kept in both so that its
    absence can be tested.
    """
    if dimension % 2:
        return ("log_eps", "const", "eps^1/2", "eps", "eps^3/2", "eps^2")
    return ("log_eps", "const", "eps", "eps_log_eps", "eps^2", "eps^2_log_eps")


def basis_function(tag: str, eps: np.ndarray) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    return {
        "eps^-1": lambda: 1.0 / eps,
        "eps^-1/2": lambda: eps ** -0.5,
        "log_eps": lambda: np.log(eps),
        "const": lambda: np.ones_like(eps),
        "eps^1/2": lambda: np.sqrt(eps),
        "eps": lambda: eps,
        "eps_log_eps": lambda: eps * np.log(eps),
        "eps^3/2": lambda: eps ** 1.5,
        "eps^2": lambda: eps ** 2,
        "eps^2_log_eps": lambda: eps ** 2 * np.log(eps),
    }[tag]()


@dataclass(frozen=True)
class AsymptoticFit:
    """Expansion of a function of ε in the counterterm ring plus regular terms."""

    coefficients: Dict[str, float]
    stderr: Dict[str, float]
    residual: float
    grid: Tuple[float, ...]

    def evaluate(self, eps: np.ndarray, tags: Optional[Sequence[str]] = None) -> np.ndarray:
        tags = tags if tags is not None else list(self.coefficients)
        total = np.zeros_like(np.asarray(eps, dtype=float))
        for tag in tags:
            total = total + self.coefficients.get(tag, 0.0) * basis_function(tag, eps)
        return total

    def singular_part(self, eps: np.ndarray) -> np.ndarray:
        return self.evaluate(eps, SINGULAR_TAGS)

    def nonzero(self) -> Dict[str, float]:
        return {tag: c for tag, c in self.coefficients.items() if c != 0.0}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "coefficients": dict(self.coefficients),
            "stderr": dict(self.stderr),
            "residual": self.residual,
            "grid": list(self.grid),
        }


@dataclass(frozen=True)
class CounterTerm:
    """Local counterterms: order n -> fit multiplying ∫ V^n dv."""

    orders: Dict[int, AsymptoticFit]
    local_integrals: Dict[int, complex]
    max_order: int

    def __post_init__(self) -> None:
        bad = [n for n in self.orders if n > self.max_order or n < 1]
        if bad:
            raise ValueError(f"counterterm orders {bad} outside 1..{self.max_order}")

    @property
    def is_empty(self) -> bool:
        return not self.orders

    def value(self, eps: float) -> float:
        """``Q_ε``: singular parts times their local integrals."""
        total = 0.0
        for n, fit in self.orders.items():
            integral = complex(self.local_integrals.get(n, 0.0)).real
            total += float(fit.singular_part(np.array([eps]))[0]) * integral
        return total

    def to_dict(self) -> Dict[str, Any]:
        return {
            "max_order": self.max_order,
            "orders": {str(n): fit.to_dict() for n, fit in self.orders.items()},
            "local_integrals": jsonable(self.local_integrals),
        }


@dataclass(frozen=True)
class PolynomialInZ:
    """Least-squares polynomial in the scaling parameter z."""

    coefficients: Tuple[complex, ...]
    stderr: Tuple[float, ...]
    residual: float
    z_grid: Tuple[complex, ...]
    degree: int

    def __call__(self, z: complex) -> complex:
        return complex(sum(c * z ** k for k, c in enumerate(self.coefficients)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "coefficients": jsonable(list(self.coefficients)),
            "stderr": list(self.stderr),
            "residual": self.residual,
            "z_grid": jsonable(list(self.z_grid)),
            "degree": self.degree,
        }


@dataclass(frozen=True)
class CheckReport:
    """Outcome of a numerical identity check."""

    name: str
    passed: bool
    values: Dict[str, Any] = field(default_factory=dict)
    relative_error: Optional[float] = None
    tolerance: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "relative_error": self.relative_error,
            "tolerance": self.tolerance,
            "values": jsonable(self.values),
        }


def relative_error(estimate: complex, reference: complex, floor: float = 1e-300) -> float:
    return float(abs(estimate - reference) / max(abs(reference), floor))
