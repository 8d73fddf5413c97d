"""Flat model geometries, Fourier mode bases and perturbation fields."""

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np

from ..errors import AliasingError, GeometryError

ORDERING_VERSION = 1

Mode = Tuple[int, ...]


def _as_mode(mode: Union[int, Iterable[int]]) -> Mode:
    if isinstance(mode, (int, np.integer)):
        return (int(mode),)
    return tuple(int(n) for n in mode)


def _neg(mode: Mode) -> Mode:
    return tuple(-n for n in mode)


def _merge(pairs: List[Tuple[Mode, complex]]) -> Dict[Mode, complex]:
    merged: Dict[Mode, complex] = {}
    for mode, value in pairs:
        merged[mode] = merged.get(mode, 0j) + value
    return merged


class GeometryKind(str, Enum):
    CIRCLE = "circle"
    TORUS2 = "torus2"
    LATTICE_TORUS = "lattice_torus"


@dataclass(frozen=True)
class Geometry:
    """A flat model space with a mass term keeping the Laplacian invertible."""

    kind: GeometryKind
    length: float = 2 * math.pi
    mass: float = 1.0
    lattice_size: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", GeometryKind(self.kind))
        if not self.length > 0:
            raise GeometryError(f"length must be positive, got {self.length}")
        if not self.mass > 0:
            raise GeometryError(f"mass must be positive, got {self.mass}")
        if self.kind is GeometryKind.LATTICE_TORUS:
            if self.lattice_size is None or self.lattice_size < 4:
                raise GeometryError("lattice torus needs lattice_size >= 4")
        elif self.lattice_size is not None:
            raise GeometryError("lattice_size only applies to lattice_torus")

    @classmethod
    def circle(cls, length: float = 2 * math.pi, mass: float = 1.0) -> "Geometry":
        return cls(GeometryKind.CIRCLE, length, mass)

    @classmethod
    def torus(cls, length: float = 2 * math.pi, mass: float = 1.0) -> "Geometry":
        return cls(GeometryKind.TORUS2, length, mass)

    @classmethod
    def lattice(
        cls, size: int, length: float = 2 * math.pi, mass: float = 1.0
    ) -> "Geometry":
        return cls(GeometryKind.LATTICE_TORUS, length, mass, size)

    @property
    def dimension(self) -> int:
        return 1 if self.kind is GeometryKind.CIRCLE else 2

    @property
    def volume(self) -> float:
        return self.length ** self.dimension

    @property
    def wavenumber(self) -> float:
        """Spacing 2π/L of the dual lattice."""
        return 2 * math.pi / self.length

    @property
    def mesh(self) -> float:
        if self.lattice_size is None:
            raise GeometryError("mesh is only defined on a lattice torus")
        return self.length / self.lattice_size

    def continuum(self) -> "Geometry":
        """The continuum torus a lattice torus discretizes."""
        if self.kind is GeometryKind.LATTICE_TORUS:
            return Geometry.torus(self.length, self.mass)
        return self

    def to_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind.value,
            "length": self.length,
            "mass": self.mass,
            "lattice_size": self.lattice_size,
        }


@dataclass(frozen=True, eq=False)
class ModeBasis:
    """Hard Fourier cutoff |n_i| <= N in lexicographic order."""

    geometry: Geometry
    cutoff: int
    indices: np.ndarray = field(repr=False)
    free_eigenvalues: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, geometry: Geometry, cutoff: int) -> "ModeBasis":
        if cutoff < 1:
            raise GeometryError(f"cutoff must be >= 1, got {cutoff}")
        geometry = geometry.continuum()
        d = geometry.dimension
        axis = np.arange(-cutoff, cutoff + 1, dtype=np.int64)
        grids = np.meshgrid(*([axis] * d), indexing="ij")
        indices = np.stack([g.ravel() for g in grids], axis=1)
        free = (indices ** 2).sum(axis=1) * geometry.wavenumber ** 2 + geometry.mass ** 2
        indices.setflags(write=False)
        free.setflags(write=False)
        return cls(geometry, cutoff, indices, free)

    @property
    def dimension(self) -> int:
        return self.geometry.dimension

    @property
    def count(self) -> int:
        return len(self.indices)

    @property
    def side(self) -> int:
        return 2 * self.cutoff + 1

    @property
    def edge_eigenvalue(self) -> float:
        """Smallest free eigenvalue outside the truncation."""
        return (self.cutoff + 1) ** 2 * self.geometry.wavenumber ** 2 + self.geometry.mass ** 2

    def negated(self) -> np.ndarray:
        """Position of -n for every mode n (the box is symmetric)."""
        return np.arange(self.count)[::-1]

    def position(self, mode: Mode) -> int:
        pos = 0
        for n in mode:
            if abs(n) > self.cutoff:
                raise GeometryError(f"mode {mode} outside cutoff {self.cutoff}")
            pos = pos * self.side + (n + self.cutoff)
        return pos


@dataclass(frozen=True, eq=False)
class PerturbationField:
    """A band-limited field given by its Fourier coefficients.

    ``V(x) = sum_k c_k exp(i k.x 2π/L)``. With the orthonormal basis
    ``e_n = exp(i n.x 2π/L)/sqrt(Vol)`` the multiplication operator has matrix
    elements ``<e_n, V e_m> = c_{n-m}``.
    """

    dimension: int
    coefficients: Mapping[Mode, complex]
    support: Optional[Tuple[Tuple[float, float], ...]] = None

    def __post_init__(self) -> None:
        clean = {}
        for mode, value in self.coefficients.items():
            mode = tuple(int(n) for n in np.atleast_1d(mode))
            if len(mode) != self.dimension:
                raise GeometryError(f"mode {mode} does not match dimension {self.dimension}")
            value = complex(value)
            if value != 0:
                clean[mode] = clean.get(mode, 0j) + value
        object.__setattr__(self, "coefficients", clean)

    @classmethod
    def zero(cls, dimension: int) -> "PerturbationField":
        return cls(dimension, {})

    @classmethod
    def constant(cls, value: complex, dimension: int = 1) -> "PerturbationField":
        return cls(dimension, {(0,) * dimension: value})

    @classmethod
    def cosine(cls, mode: Union[int, Iterable[int]], amplitude: complex = 1.0) -> "PerturbationField":
        """``amplitude * cos(k.x)``."""
        k = _as_mode(mode)
        return cls(len(k), _merge([(k, amplitude / 2), (_neg(k), amplitude / 2)]))

    @classmethod
    def sine(cls, mode: Union[int, Iterable[int]], amplitude: complex = 1.0) -> "PerturbationField":
        """``amplitude * sin(k.x)``."""
        k = _as_mode(mode)
        return cls(len(k), _merge([(k, amplitude / 2j), (_neg(k), -amplitude / 2j)]))

    @classmethod
    def from_samples(cls, values: np.ndarray, band: int) -> "PerturbationField":
        """Project uniform real-space samples onto modes with |k_i| <= band."""
        values = np.asarray(values)
        d = values.ndim
        m = values.shape[0]
        if any(s != m for s in values.shape):
            raise GeometryError(f"samples must be on a square grid, got {values.shape}")
        if 2 * band + 1 > m:
            raise AliasingError(f"{m} samples cannot resolve band {band}", band, m // 2)
        spectrum = np.fft.fftn(values) / m ** d
        floor = 1e-15 * max(1.0, float(np.abs(values).max()))
        coefficients = {}
        for mode in itertools.product(range(-band, band + 1), repeat=d):
            value = spectrum[tuple(n % m for n in mode)]
            if abs(value) > floor:
                coefficients[mode] = value
        return cls(d, coefficients)

    @classmethod
    def bump(
        cls,
        geometry: Geometry,
        interval: Tuple[float, float],
        amplitude: float = 1.0,
        band: int = 64,
        resolution: Optional[int] = None,
    ) -> "PerturbationField":
        """Smooth compactly supported bump on ``interval`` (per axis), band projected."""
        lo, hi = interval
        if not 0 <= lo < hi <= geometry.length:
            raise GeometryError(f"bump interval {interval} not inside [0, {geometry.length}]")
        m = resolution or max(1024, 8 * band)
        x = np.arange(m) * geometry.length / m
        centre, half = (lo + hi) / 2, (hi - lo) / 2
        u = (x - centre) / half
        profile = np.zeros(m)
        inside = np.abs(u) < 1
        profile[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
        values = profile
        for _ in range(geometry.dimension - 1):
            values = np.multiply.outer(values, profile)
        field_ = cls.from_samples(amplitude * values, band)
        support = ((lo, hi),) * geometry.dimension
        return cls(field_.dimension, field_.coefficients, support)

    def __add__(self, other: "PerturbationField") -> "PerturbationField":
        if other.dimension != self.dimension:
            raise GeometryError("cannot add fields of different dimension")
        merged: Dict[Mode, complex] = dict(self.coefficients)
        for mode, value in other.coefficients.items():
            merged[mode] = merged.get(mode, 0j) + value
        return PerturbationField(self.dimension, merged)

    def scaled(self, factor: complex) -> "PerturbationField":
        return PerturbationField(
            self.dimension,
            {mode: factor * value for mode, value in self.coefficients.items()},
            self.support,
        )

    @property
    def is_zero(self) -> bool:
        return not self.coefficients

    @property
    def is_real(self) -> bool:
        """Hermitian symmetry c_{-k} = conj(c_k)."""
        for mode, value in self.coefficients.items():
            partner = self.coefficients.get(_neg(mode), 0j)
            if abs(partner - value.conjugate()) > 1e-14 * max(1.0, abs(value)):
                return False
        return True

    @property
    def is_constant(self) -> bool:
        return all(not any(mode) for mode in self.coefficients)

    @property
    def max_mode(self) -> int:
        return max((max(abs(n) for n in mode) for mode in self.coefficients), default=0)

    @property
    def mean(self) -> complex:
        return self.coefficients.get((0,) * self.dimension, 0j)

    def integral(self, geometry: Geometry) -> complex:
        return self.mean * geometry.continuum().volume

    def coefficient_grid(self, band: int) -> np.ndarray:
        """Dense array of coefficients indexed by ``k + band`` per axis."""
        if self.max_mode > band:
            raise AliasingError(
                f"perturbation has modes up to {self.max_mode}, beyond band {band}",
                self.max_mode,
                band,
            )
        grid = np.zeros((2 * band + 1,) * self.dimension, dtype=complex)
        for mode, value in self.coefficients.items():
            grid[tuple(n + band for n in mode)] = value
        return grid

    def evaluate(self, geometry: Geometry, points: np.ndarray) -> np.ndarray:
        """Values at real-space points of shape (..., d) (or (...) for d=1)."""
        points = np.asarray(points, dtype=float)
        if self.dimension == 1:
            points = points[..., None]
        k0 = geometry.wavenumber
        out = np.zeros(points.shape[:-1], dtype=complex)
        for mode, value in self.coefficients.items():
            out += value * np.exp(1j * k0 * (points @ np.array(mode, dtype=float)))
        return out

    def sample_grid(self, geometry: Geometry, size: int) -> np.ndarray:
        """Values on the uniform ``size**d`` grid with spacing L/size."""
        x = np.arange(size) * geometry.length / size
        if self.dimension == 1:
            pts = x
        else:
            xx, yy = np.meshgrid(x, x, indexing="ij")
            pts = np.stack([xx, yy], axis=-1)
        return self.evaluate(geometry, pts)

    def to_dict(self) -> Dict[str, object]:
        return {
            "dimension": self.dimension,
            "coefficients": [
                [list(mode), value.real, value.imag]
                for mode, value in sorted(self.coefficients.items())
            ],
        }
