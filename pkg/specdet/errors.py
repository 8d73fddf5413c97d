"""Exception hierarchy for specdet."""

from typing import Any, Dict, List, Optional, Sequence


class SpecDetError(Exception):
    """Base class for all specdet errors."""


class GeometryError(SpecDetError, ValueError):
    """Invalid model geometry or mode basis."""


class AliasingError(SpecDetError, ValueError):
    """Perturbation carries modes beyond the representable band."""

    def __init__(self, message: str, max_mode: int, band: int):
        super().__init__(message)
        self.max_mode = max_mode
        self.band = band


class InvertibilityError(SpecDetError, ValueError):
    """Operator is singular within tolerance."""

    def __init__(self, message: str, smallest: float):
        super().__init__(f"{message} (smallest |eigenvalue| = {smallest:.3e})")
        self.smallest = smallest


class EigenSolverError(SpecDetError, RuntimeError):
    """Dense eigen-solver failed to converge."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition number {condition:.3e})")
        self.condition = condition


class SpectralCutError(SpecDetError, ValueError):
    """An eigenvalue lies on, or too close to, the spectral cut."""

    def __init__(self, message: str, eigenvalue: complex):
        super().__init__(f"{message}: offending eigenvalue {eigenvalue:.6g}")
        self.eigenvalue = eigenvalue


class HeatFitError(SpecDetError, RuntimeError):
    """Small-time heat coefficient fit is not accurate enough."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (fit residual {residual:.3e})")
        self.residual = residual


class SeriesDivergenceError(SpecDetError, ValueError):
    """Trace series route requested outside its radius of convergence."""

    def __init__(self, message: str, radius: float):
        super().__init__(f"{message} (spectral radius {radius:.6g})")
        self.radius = radius


class RouteDisagreementError(SpecDetError, RuntimeError):
    """Two determinant routes disagree beyond tolerance."""

    def __init__(self, message: str, values: Dict[str, complex]):
        super().__init__(f"{message}: {values}")
        self.values = values


class TailBoundError(SpecDetError, ValueError):
    """Stored zeros do not control the truncation tail of a product."""

    def __init__(self, message: str, bound: float):
        super().__init__(f"{message} (tail bound {bound:.3e})")
        self.bound = bound


class InsufficientDataError(SpecDetError, ValueError):
    """Not enough samples or zeros for a reliable estimate."""


class OrderEstimationError(SpecDetError, ValueError):
    """Order of growth could not be estimated on the requested grid."""


class MonodromyError(SpecDetError, RuntimeError):
    """ODE integration of the monodromy matrix failed."""


class NotPositiveDefiniteError(SpecDetError, ValueError):
    """Factorization hit a non-positive pivot."""

    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (failing pivot {index})")
        self.index = index


class DivergentPartitionError(SpecDetError, ValueError):
    """Gaussian partition function is not integrable for this V and epsilon."""

    def __init__(self, message: str, min_eigenvalue: float):
        super().__init__(f"{message} (min eigenvalue {min_eigenvalue:.4g})")
        self.min_eigenvalue = min_eigenvalue


class CounterTermError(SpecDetError, RuntimeError):
    """Unexpected singular powers in a counterterm fit."""

    def __init__(self, message: str, coefficients: Dict[str, float]):
        super().__init__(f"{message}: {coefficients}")
        self.coefficients = coefficients


class FactorizationError(SpecDetError, RuntimeError):
    """Polynomial ambiguity fit exceeded its residual tolerance."""

    def __init__(self, message: str, profile: Sequence[float]):
        super().__init__(message)
        self.profile = list(profile)


class ConfigError(SpecDetError, ValueError):
    """Experiment configuration failed validation."""

    def __init__(self, message: str, fields: Optional[List[str]] = None):
        super().__init__(message)
        self.fields = fields or []

    def to_dict(self) -> Dict[str, Any]:
        return {"message": str(self), "fields": self.fields}


class AdmissibilityError(SpecDetError, ValueError):
    """A finite-difference evaluation point left the admissible region."""

    def __init__(self, message: str, point: Sequence[float]):
        super().__init__(f"{message} at t = {tuple(point)}")
        self.point = tuple(point)
