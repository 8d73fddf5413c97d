"""Numerical core: operators, determinants, renormalization and sampling."""

from .cache import EigenCache
from .determinants import (
    ZetaConfig,
    fredholm_det,
    gk_det,
    gk_det_rp,
    gk_det_series,
    heat_trace,
    lattice_logdet,
    zeta_det_mellin,
    zeta_det_monodromy,
    zeta_ratio_mellin,
)
from .execution import GridExecutor, GridResult
from .geometry import Geometry, GeometryKind, ModeBasis, PerturbationField
from .operators import (
    OperatorKind,
    TruncatedOperator,
    build_dirac,
    build_dirac_squared,
    build_lattice_laplace,
    build_laplace,
    eigenvalues,
    green_compose,
)
from .results import CheckReport, DetResult, MCEstimate, Method

__all__ = [
    "CheckReport", "DetResult", "EigenCache", "Geometry", "GeometryKind", "GridExecutor",
    "GridResult", "MCEstimate", "Method", "ModeBasis", "OperatorKind", "PerturbationField",
    "TruncatedOperator", "ZetaConfig",
    "build_dirac", "build_dirac_squared", "build_lattice_laplace", "build_laplace",
    "eigenvalues", "fredholm_det", "gk_det", "gk_det_rp", "gk_det_series", "green_compose",
    "heat_trace", "lattice_logdet", "zeta_det_mellin", "zeta_det_monodromy", "zeta_ratio_mellin",
]
