"""Experiment configuration: YAML documents validated into pydantic models."""

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .core.determinants import ZetaConfig
from .core.geometry import Geometry, GeometryKind, PerturbationField
from .errors import ConfigError

EXPERIMENTS = ("zeta", "gkdet", "factorize", "derivatives", "renormalize", "gff-mc", "dgff", "order")


class GeometrySpec(BaseModel):
    """Model space: circle, two-torus or lattice torus."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: GeometryKind = GeometryKind.CIRCLE
    length: float = Field(default=2 * math.pi, gt=0)
    mass: float = Field(default=1.0, gt=0)
    lattice_size: Optional[int] = Field(default=None, ge=4)

    def build(self) -> Geometry:
        return Geometry(self.kind, self.length, self.mass, self.lattice_size)


class TrigTerm(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["const", "cos", "sin"]
    mode: List[int] = Field(default_factory=list)
    amplitude: float = 1.0


class BumpSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    interval: Tuple[float, float]
    amplitude: float = 1.0
    band: int = Field(default=64, ge=1)

    @field_validator("interval")
    @classmethod
    def _ordered(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not 0 <= value[0] < value[1]:
            raise ValueError("bump interval must satisfy 0 <= start < end")
        return value


class PerturbationSpec(BaseModel):
    """A potential written as trigonometric terms plus smooth bumps."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    terms: List[TrigTerm] = Field(default_factory=list)
    bumps: List[BumpSpec] = Field(default_factory=list)
    subtract_mean: bool = False

    def build(self, geometry: Geometry) -> PerturbationField:
        d = geometry.dimension
        field_ = PerturbationField.zero(d)
        for term in self.terms:
            if term.kind == "const":
                field_ = field_ + PerturbationField.constant(term.amplitude, d)
                continue
            if len(term.mode) != d:
                raise ConfigError(f"mode {term.mode} does not match dimension {d}", ["perturbation.terms"])
            maker = PerturbationField.cosine if term.kind == "cos" else PerturbationField.sine
            field_ = field_ + maker(term.mode, term.amplitude)
        bumps = [PerturbationField.bump(geometry, b.interval, b.amplitude, b.band) for b in self.bumps]
        if len(bumps) == 1 and field_.is_zero and not self.subtract_mean:
            # keep the support so disjointness can be certified
            return bumps[0]
        for bump in bumps:
            field_ = field_ + bump
        if self.subtract_mean and field_.mean != 0:
            field_ = field_ + PerturbationField.constant(-field_.mean, d)
        return field_


class ExperimentConfig(BaseModel):
    """Everything one run needs; the dump of this model reproduces the run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    experiment: Literal["zeta", "gkdet", "factorize", "derivatives", "renormalize", "gff-mc", "dgff", "order"]
    geometry: GeometrySpec = Field(default_factory=GeometrySpec)
    perturbation: PerturbationSpec = Field(default_factory=PerturbationSpec)
    directions: List[PerturbationSpec] = Field(default_factory=list)
    cutoff: int = Field(default=32, ge=1)
    methods: List[str] = Field(default_factory=list)
    tolerances: Dict[str, float] = Field(default_factory=dict)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    output_dir: str = "results"
    workers: int = Field(default=1, ge=1)
    zeta: ZetaConfig = Field(default_factory=ZetaConfig)
    params: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _lattice_only_for_dgff(self) -> "ExperimentConfig":
        lattice = self.geometry.kind is GeometryKind.LATTICE_TORUS
        if lattice and self.experiment != "dgff":
            raise ValueError(f"experiment {self.experiment!r} does not run on a lattice torus")
        return self

    def tolerance(self, name: str, default: float) -> float:
        return float(self.tolerances.get(name, default))

    def param(self, name: str, default: Any = None) -> Any:
        return self.params.get(name, default)

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """Copy with CLI overrides applied (``None`` values are ignored)."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return config_from_dict({**self.model_dump(mode="json"), **changes})


def _field_paths(error: ValidationError) -> List[str]:
    return [".".join(str(part) for part in e["loc"]) for e in error.errors()]


def config_from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        paths = _field_paths(e)
        details = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"invalid configuration: {details}", paths) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Load configuration from a YAML file."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return config_from_dict(raw)


def dump_config(config: ExperimentConfig, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.model_dump(mode="json"), fh, sort_keys=True)


HASH_EXCLUDED = {"output_dir", "workers"}


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form, without fields that cannot change results."""
    payload = config.model_dump(mode="json", exclude=HASH_EXCLUDED)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
