"""Truncated operators in the Fourier mode basis."""

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Any, Dict, Optional, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ..errors import EigenSolverError, GeometryError, InvertibilityError
from .geometry import ORDERING_VERSION, Geometry, GeometryKind, ModeBasis, PerturbationField

if TYPE_CHECKING:
    from .cache import EigenCache

logger = logging.getLogger(__name__)

BUILDER_VERSION = 1
HERMITIAN_TOL = 1e-14
INVERTIBILITY_TOL = 1e-12


class OperatorKind(str, Enum):
    LAPLACE = "laplace"
    DIRAC = "dirac"
    DIRAC_PERTURBED = "dirac_perturbed"
    DIRAC_SQUARED = "dirac_squared"


@dataclass(frozen=True, eq=False)
class TruncatedOperator:
    """Dense matrix of an operator restricted to a ModeBasis.

    ``free_diagonal`` holds the spectrum of the unperturbed operator in the
    same ordering, so every perturbed operator knows its reference.
    """

    matrix: np.ndarray = field(repr=False)
    geometry: Geometry
    basis: ModeBasis
    kind: OperatorKind
    free_diagonal: np.ndarray = field(repr=False)
    perturbation: Optional[PerturbationField] = None
    dirac_mass: Optional[float] = None

    def __post_init__(self) -> None:
        if self.matrix.shape != (self.basis.count, self.basis.count):
            raise GeometryError(
                f"matrix shape {self.matrix.shape} does not match basis count {self.basis.count}"
            )
        self.matrix.setflags(write=False)

    @property
    def size(self) -> int:
        return self.basis.count

    @property
    def cutoff(self) -> int:
        return self.basis.cutoff

    @property
    def edge_eigenvalue(self) -> float:
        """Smallest |free eigenvalue| among the modes cut off by the truncation."""
        if self.kind is OperatorKind.LAPLACE:
            return self.basis.edge_eigenvalue
        outer = (self.cutoff + 1) * self.geometry.wavenumber
        edge = min(abs(outer + self.dirac_mass), abs(-outer + self.dirac_mass))
        return edge ** 2 if self.kind is OperatorKind.DIRAC_SQUARED else edge

    @property
    def is_hermitian(self) -> bool:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0)) < HERMITIAN_TOL

    @property
    def is_diagonal(self) -> bool:
        off = self.matrix - np.diag(np.diag(self.matrix))
        return not np.any(off)

    @property
    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        header = f"v{ORDERING_VERSION}.{BUILDER_VERSION}:{self.kind.value}:{self.matrix.shape}"
        digest.update(header.encode())
        digest.update(np.ascontiguousarray(self.matrix, dtype=complex).tobytes())
        return digest.hexdigest()

    def free(self) -> "TruncatedOperator":
        """The unperturbed operator on the same basis."""
        kind = OperatorKind.DIRAC if self.kind is OperatorKind.DIRAC_PERTURBED else self.kind
        return replace(
            self,
            matrix=np.diag(self.free_diagonal).astype(complex),
            kind=kind,
            perturbation=None,
        )

    def provenance(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "geometry": self.geometry.to_dict(),
            "cutoff": self.cutoff,
            "ordering_version": ORDERING_VERSION,
            "builder_version": BUILDER_VERSION,
            "dirac_mass": self.dirac_mass,
            "perturbation": self.perturbation.to_dict() if self.perturbation else None,
        }


def _check_basis(geometry: Geometry, basis: ModeBasis) -> None:
    if geometry.kind is GeometryKind.LATTICE_TORUS:
        raise GeometryError("mode-basis operators live on the circle or the continuum torus")
    if basis.geometry != geometry:
        raise GeometryError("basis was built for a different geometry")


def multiplication_matrix(field_: Optional[PerturbationField], basis: ModeBasis) -> np.ndarray:
    """Matrix ``<e_n, V e_m> = c_{n-m}`` of multiplication by a band-limited field."""
    d, N, side = basis.dimension, basis.cutoff, basis.side
    if field_ is None or field_.is_zero:
        return np.zeros((basis.count, basis.count), dtype=complex)
    if field_.dimension != d:
        raise GeometryError(f"field of dimension {field_.dimension} on a {d}-dimensional basis")
    grid = field_.coefficient_grid(2 * N)
    r = np.arange(side)
    index = []
    for axis in range(d):
        rows = [1] * (2 * d)
        cols = [1] * (2 * d)
        rows[axis] = side
        cols[d + axis] = side
        index.append(r.reshape(rows) - r.reshape(cols) + 2 * N)
    return grid[tuple(index)].reshape(basis.count, basis.count)


def build_laplace(
    geometry: Geometry, V: Optional[PerturbationField], basis: ModeBasis
) -> TruncatedOperator:
    """Δ + m² + V on the truncated Fourier basis."""
    _check_basis(geometry, basis)
    free = basis.free_eigenvalues.astype(float)
    matrix = multiplication_matrix(V, basis)
    matrix[np.diag_indices_from(matrix)] += free
    return TruncatedOperator(matrix, geometry, basis, OperatorKind.LAPLACE, free, V)


def dirac_spectrum(geometry: Geometry, mass: float, basis: ModeBasis) -> np.ndarray:
    """Eigenvalues ``n·2π/L + m`` of ``-i d/dx + m`` in basis order."""
    return basis.indices[:, 0] * geometry.wavenumber + mass


def _check_dirac(geometry: Geometry, mass: float, basis: ModeBasis) -> None:
    if geometry.kind is not GeometryKind.CIRCLE:
        raise GeometryError("the Dirac operator is only modelled on the circle")
    _check_basis(geometry, basis)
    ratio = mass / geometry.wavenumber
    if abs(ratio - round(ratio)) < 1e-12:
        raise InvertibilityError(
            f"non-invertible base Dirac operator: mass {mass} puts n={-round(ratio)} in the kernel",
            0.0,
        )


def build_dirac(
    geometry: Geometry,
    mass: float,
    A: Optional[PerturbationField],
    basis: ModeBasis,
) -> TruncatedOperator:
    """D + A with ``D = -i d/dx + m`` on the circle."""
    _check_dirac(geometry, mass, basis)
    free = dirac_spectrum(geometry, mass, basis)
    matrix = multiplication_matrix(A, basis)
    matrix[np.diag_indices_from(matrix)] += free
    kind = OperatorKind.DIRAC if A is None or A.is_zero else OperatorKind.DIRAC_PERTURBED
    return TruncatedOperator(matrix, geometry, basis, kind, free, A, dirac_mass=mass)


def build_dirac_squared(
    geometry: Geometry,
    mass: float,
    A: Optional[PerturbationField],
    basis: ModeBasis,
) -> TruncatedOperator:
    """D*(D + A), the second order operator whose zeta determinant is taken."""
    _check_dirac(geometry, mass, basis)
    free = dirac_spectrum(geometry, mass, basis)
    matrix = free[:, None] * (np.diag(free) + multiplication_matrix(A, basis))
    return TruncatedOperator(
        matrix.astype(complex),
        geometry,
        basis,
        OperatorKind.DIRAC_SQUARED,
        free ** 2,
        A,
        dirac_mass=mass,
    )


def _sort_spectrum(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=complex)
    return values[np.lexsort((values.imag, values.real))]


def eigenvalues(op: TruncatedOperator, cache: Optional["EigenCache"] = None) -> np.ndarray:
    """Full spectrum sorted by (real part, imaginary part)."""
    if cache is not None:
        stored = cache.get(op.fingerprint)
        if stored is not None:
            return stored
    if op.is_diagonal:
        values = np.diag(op.matrix).copy()
    else:
        try:
            if op.is_hermitian:
                values = sla.eigvalsh(op.matrix, check_finite=True).astype(complex)
            else:
                values = sla.eigvals(op.matrix, check_finite=True)
        except (sla.LinAlgError, ValueError) as exc:
            try:
                condition = float(np.linalg.cond(op.matrix))
            except np.linalg.LinAlgError:
                condition = math.inf
            raise EigenSolverError(f"eigen-solver failed on {op.kind.value} operator: {exc}", condition)
    values = _sort_spectrum(values)
    if cache is not None:
        cache.put(op.fingerprint, values, op.provenance())
    return values


def green_compose(
    op: TruncatedOperator,
    V: Optional[PerturbationField],
    cache: Optional["EigenCache"] = None,
) -> np.ndarray:
    """Matrix of ``P^{-1} V`` in the mode basis."""
    spectrum = eigenvalues(op, cache)
    smallest = float(np.min(np.abs(spectrum)))
    scale = max(1.0, float(np.max(np.abs(spectrum))))
    if smallest <= INVERTIBILITY_TOL * scale:
        raise InvertibilityError(f"{op.kind.value} operator is singular", smallest)
    potential = multiplication_matrix(V, op.basis)
    if op.is_diagonal:
        return potential / np.diag(op.matrix)[:, None]
    return sla.solve(op.matrix, potential)


def lattice_laplacian(size: int, mesh: float = 1.0) -> sp.csr_matrix:
    """Periodic 5-point Laplacian (positive sign) on a size x size grid."""
    if size < 2:
        raise GeometryError(f"lattice needs at least 2 sites per side, got {size}")
    eye = sp.identity(size, format="csr")
    shift = sp.csr_matrix(
        (np.ones(size), (np.arange(size), (np.arange(size) + 1) % size)), shape=(size, size)
    )
    second = 2 * eye - shift - shift.T
    return ((sp.kron(second, eye) + sp.kron(eye, second)) / mesh ** 2).tocsr()


def build_lattice_laplace(
    geometry: Geometry,
    V: Union[None, np.ndarray, PerturbationField] = None,
) -> sp.csr_matrix:
    """Δ_h + m² + diag(V) on the lattice torus, sites flattened row-major."""
    if geometry.kind is not GeometryKind.LATTICE_TORUS:
        raise GeometryError("build_lattice_laplace needs a lattice torus geometry")
    size = geometry.lattice_size
    if V is None:
        samples = np.zeros((size, size))
    elif isinstance(V, PerturbationField):
        if not V.is_real:
            raise GeometryError("lattice potentials must be real")
        samples = V.sample_grid(geometry, size).real
    else:
        samples = np.asarray(V, dtype=float)
    if samples.shape != (size, size):
        raise GeometryError(f"potential samples have shape {samples.shape}, expected {(size, size)}")
    n = size * size
    diagonal = sp.diags(geometry.mass ** 2 + samples.ravel(), format="csr", shape=(n, n))
    return (lattice_laplacian(size, geometry.mesh) + diagonal).tocsr()
