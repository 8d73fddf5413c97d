"""Zeta, Fredholm and Gohberg-Krein determinants of perturbed Laplace and Dirac operators."""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config
from .core import (
    DetResult,
    Geometry,
    ModeBasis,
    PerturbationField,
    fredholm_det,
    gk_det,
    zeta_det_mellin,
    zeta_det_monodromy,
)
from .runner import ExperimentRunner

__all__ = [
    "DetResult",
    "ExperimentConfig",
    "ExperimentRunner",
    "Geometry",
    "ModeBasis",
    "PerturbationField",
    "fredholm_det",
    "gk_det",
    "load_config",
    "zeta_det_mellin",
    "zeta_det_monodromy",
]
