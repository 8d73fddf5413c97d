"""Gaussian free field sampling and Monte-Carlo partition functions.

Samples live in the mode basis: ``φ = sum c_n λ_n^{-1/2} e_n`` with i.i.d.
standard normal real degrees of freedom in ``c`` and ``c_{-n} = conj(c_n)``.
Every sample draws from its own Philox stream keyed by ``(seed, index)``, so
estimates do not depend on batching or worker count.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as sla

from ..errors import DivergentPartitionError, GeometryError, NotPositiveDefiniteError
from .determinants import fredholm_det, gk_det, lattice_logdet, zeta_ratio_mellin
from .execution import GridExecutor, default_executor
from .geometry import Geometry, ModeBasis, PerturbationField
from .operators import build_lattice_laplace, build_laplace, multiplication_matrix
from .renorm import counterterm_extract
from .results import AsymptoticFit, DetResult, MCEstimate, Method, jsonable, regular_tags

logger = logging.getLogger(__name__)

PARTITION_MARGIN = 0.05
BATCH_SIZE = 512


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for sample ``index`` under the root ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def _standard_coefficients(count: int, rng: np.random.Generator) -> np.ndarray:
    """Hermitian-symmetric vector with E|c_n|^2 = 1 (mode -n sits at count-1-n)."""
    normals = rng.standard_normal((2, count))
    centre = count // 2
    c = np.empty(count, dtype=complex)
    upper = np.arange(centre + 1, count)
    c[upper] = (normals[0, upper] + 1j * normals[1, upper]) / math.sqrt(2)
    c[count - 1 - upper] = np.conj(c[upper])
    c[centre] = normals[0, centre]
    return c


@dataclass(frozen=True, eq=False)
class GFFSample:
    """One draw of the free field, optionally heat smeared."""

    coefficients: np.ndarray = field(repr=False)
    seed: int
    basis: ModeBasis = field(repr=False)
    index: int = 0
    smoothing: float = 0.0

    @property
    def modes(self) -> np.ndarray:
        """``<e_n, φ_ε> = c_n e^{-ελ_n} / sqrt(λ_n)``."""
        free = self.basis.free_eigenvalues
        return self.coefficients * np.exp(-self.smoothing * free) / np.sqrt(free)

    def values(self, geometry: Geometry, points: np.ndarray) -> np.ndarray:
        """Real-space values at points of shape (..., d) (or (...) for d=1)."""
        points = np.asarray(points, dtype=float)
        if self.basis.dimension == 1:
            points = points[..., None]
        phases = np.exp(1j * geometry.wavenumber * (points @ self.basis.indices.T.astype(float)))
        return (phases @ self.modes).real / math.sqrt(geometry.continuum().volume)


def sample_gff(basis: ModeBasis, seed: int, index: int = 0) -> GFFSample:
    coefficients = _standard_coefficients(basis.count, sample_stream(seed, index))
    return GFFSample(coefficients, seed, basis, index)


def smear(phi: GFFSample, eps: float) -> GFFSample:
    """Heat smoothing ``φ -> e^{-εΔ} φ``; smoothings compose additively."""
    if eps < 0:
        raise ValueError(f"ε must be non-negative, got {eps}")
    return replace(phi, smoothing=phi.smoothing + eps)


def _apply_multiplication(V: PerturbationField, modes: np.ndarray, basis: ModeBasis) -> np.ndarray:
    """``(V φ)_n = sum_k c_k φ_{n-k}`` on the truncated box, batched over rows."""
    d, side = basis.dimension, basis.side
    batch = modes.shape[0]
    grid = modes.reshape((batch,) + (side,) * d)
    out = np.zeros_like(grid, dtype=complex)
    for k, c in V.coefficients.items():
        if any(abs(n) >= side for n in k):
            continue
        target = [slice(None)]
        source = [slice(None)]
        for n in k:
            target.append(slice(n, None) if n >= 0 else slice(None, side + n))
            source.append(slice(None, side - n) if n >= 0 else slice(-n, None))
        out[tuple(target)] += c * grid[tuple(source)]
    return out.reshape(batch, -1)


def quadratic_energy(
    phi: Union[GFFSample, np.ndarray],
    V: PerturbationField,
    basis: Optional[ModeBasis] = None,
) -> Union[float, complex, np.ndarray]:
    """``∫ <φ, V φ> dv`` from the mode coefficients, exactly.

    Accepts a sample or an array of modes of shape (count,) or (K, count).
    Real fields give real energies.
    """
    if isinstance(phi, GFFSample):
        basis, modes = phi.basis, phi.modes
    else:
        if basis is None:
            raise ValueError("a basis is needed to interpret raw modes")
        modes = np.asarray(phi, dtype=complex)
    single = modes.ndim == 1
    modes = np.atleast_2d(modes)
    if V.is_zero:
        energies = np.zeros(modes.shape[0], dtype=complex)
    else:
        energies = np.einsum("ki,ki->k", modes.conj(), _apply_multiplication(V, modes, basis))
    if V.is_real:
        energies = energies.real
    return energies[0] if single else energies


def smeared_kernel(V: PerturbationField, eps: float, basis: ModeBasis) -> np.ndarray:
    """Symmetrized ``T = Δ^{-1/2} e^{-εΔ} V e^{-εΔ} Δ^{-1/2}``."""
    free = basis.free_eigenvalues
    s = np.exp(-eps * free) / np.sqrt(free)
    return s[:, None] * multiplication_matrix(V, basis) * s[None, :]


def _check_integrable(T: np.ndarray, hermitian: bool) -> None:
    values = sla.eigvalsh(T) if hermitian else sla.eigvals(T).real
    lowest = float(np.min(values, initial=math.inf))
    if lowest <= -1 + PARTITION_MARGIN:
        raise DivergentPartitionError("partition function divergent for this V, ε", lowest)


def energy_moments(V: PerturbationField, eps: float, basis: ModeBasis) -> Tuple[complex, complex]:
    """Mean ``Tr T`` and variance ``2 Tr T²`` of the smeared energy."""
    T = smeared_kernel(V, eps, basis)
    return complex(np.trace(T)), complex(2 * np.sum(T * T.T))


def partition_reference(
    V: PerturbationField, eps: float, basis: ModeBasis, renormalized: bool = False
) -> DetResult:
    """``det_F(Id + T)^{-1/2}``, or ``det_2(Id + T)^{-1/2}`` after Wick subtraction."""
    params = {"eps": eps, "renormalized": renormalized}
    method = Method.GK_PRODUCT if renormalized else Method.FREDHOLM
    if V.is_zero:
        return DetResult(1 + 0j, 0j, method, cutoff=basis.cutoff, params=params)
    if V.is_constant:
        # T is diagonal in modes
        free = basis.free_eigenvalues
        T = V.mean * np.exp(-2 * eps * free) / free
        lowest = float(np.min(T.real))
        if lowest <= -1 + PARTITION_MARGIN:
            raise DivergentPartitionError("partition function divergent for this V, ε", lowest)
        logs = np.log((1 + T).astype(complex)) - (T if renormalized else 0)
        return DetResult.from_log(-0.5 * np.sum(logs), method, cutoff=basis.cutoff, params=params)
    T = smeared_kernel(V, eps, basis)
    _check_integrable(T, V.is_real)
    inner = gk_det(2, T, cross_check=False) if renormalized else fredholm_det(T)
    return DetResult.from_log(
        -0.5 * inner.log_value,
        method,
        error=0.5 * inner.error,
        cutoff=basis.cutoff,
        params=params,
    )


@dataclass(frozen=True)
class PartitionCheck:
    estimate: MCEstimate
    reference: DetResult
    eps: float
    renormalized: bool = False

    @property
    def passed(self) -> bool:
        return self.estimate.within(self.reference.value.real)

    @property
    def deviation(self) -> float:
        """Distance to the reference in standard errors."""
        gap = abs(self.estimate.mean - self.reference.value.real)
        return gap / self.estimate.stderr if self.estimate.stderr else (0.0 if gap == 0 else math.inf)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "estimate": self.estimate.to_dict(),
            "reference": self.reference.to_dict(),
            "eps": self.eps,
            "renormalized": self.renormalized,
            "deviation": self.deviation,
            "passed": self.passed,
        }


def _sample_energies(
    V: PerturbationField,
    eps: float,
    basis: ModeBasis,
    seed: int,
    start: int,
    stop: int,
) -> np.ndarray:
    free = basis.free_eigenvalues
    scale = np.exp(-eps * free) / np.sqrt(free)
    coefficients = np.stack([_standard_coefficients(basis.count, sample_stream(seed, i))
                             for i in range(start, stop)])
    return np.atleast_1d(quadratic_energy(coefficients * scale, V, basis))


def _mc_weights(
    V: PerturbationField,
    eps: float,
    samples: int,
    seed: int,
    basis: ModeBasis,
    shift: float,
    antithetic: bool,
    executor: Optional[GridExecutor],
) -> MCEstimate:
    draws = samples // 2 if antithetic else samples
    bounds = [(lo, min(lo + BATCH_SIZE, draws)) for lo in range(0, draws, BATCH_SIZE)]
    batches = default_executor(executor).map(
        lambda b: _sample_energies(V, eps, basis, seed, b[0], b[1]), bounds
    )
    energies = np.concatenate(batches).real
    # the mirror -φ of an antithetic pair has the same energy: one weight per pair
    weights = np.exp(-0.5 * (energies - shift))
    mean = math.fsum(weights) / len(weights)
    spread = math.sqrt(math.fsum((weights - mean) ** 2) / (len(weights) - 1)) if len(weights) > 1 else 0.0
    return MCEstimate(mean=mean, stderr=spread / math.sqrt(len(weights)), samples=len(weights),
                      seed=seed)


def mc_partition(
    V: PerturbationField,
    eps: float,
    samples: int,
    seed: int,
    basis: ModeBasis,
    antithetic: bool = False,
    executor: Optional[GridExecutor] = None,
) -> PartitionCheck:
    """``E[exp(-½ ∫<φ_ε, V φ_ε>)]`` against ``det_F(Id + T)^{-1/2}``."""
    if not V.is_real:
        raise ValueError("Monte-Carlo partition functions need a real potential")
    reference = partition_reference(V, eps, basis)
    estimate = _mc_weights(V, eps, samples, seed, basis, 0.0, antithetic, executor)
    logger.debug(f"mc partition eps={eps}: {estimate.mean:.6f} ± {estimate.stderr:.2e} "
                 f"(reference {reference.value.real:.6f})")
    return PartitionCheck(estimate, reference, eps)


def mc_partition_renormalized(
    V: PerturbationField,
    eps: float,
    samples: int,
    seed: int,
    basis: ModeBasis,
    antithetic: bool = False,
    executor: Optional[GridExecutor] = None,
) -> PartitionCheck:
    """Wick-ordered partition function ``E[exp(-½ (E_ε - E[E_ε]))]`` against det_2.

    The subtracted mean ``Tr T`` is the local counterterm ``½ ∫ Λ_ε``; in two
    dimensions it is the only divergent order.
    """
    if not V.is_real:
        raise ValueError("Monte-Carlo partition functions need a real potential")
    if basis.dimension != 2:
        logger.warning(f"Wick subtraction requested in d={basis.dimension}; nothing diverges there")
    reference = partition_reference(V, eps, basis, renormalized=True)
    shift = energy_moments(V, eps, basis)[0].real
    estimate = _mc_weights(V, eps, samples, seed, basis, shift, antithetic, executor)
    return PartitionCheck(estimate, reference, eps, renormalized=True)


@dataclass(frozen=True)
class WickScan:
    """Exact log partition functions across ε with and without Wick subtraction."""

    unrenormalized: AsymptoticFit
    renormalized: AsymptoticFit
    samples: Dict[float, Tuple[float, float]] = field(repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "unrenormalized": self.unrenormalized.to_dict(),
            "renormalized": self.renormalized.to_dict(),
            "samples": jsonable({str(e): list(v) for e, v in self.samples.items()}),
        }


def wick_divergence_scan(
    V: PerturbationField,
    basis: ModeBasis,
    eps_grid: Sequence[float],
    executor: Optional[GridExecutor] = None,
) -> WickScan:
    """Fit ``log E[...]`` in the counterterm ring, before and after subtraction."""
    eps_grid = sorted(float(e) for e in eps_grid)

    def both(eps: float) -> Tuple[float, float]:
        plain = partition_reference(V, eps, basis).log_value.real
        wick = partition_reference(V, eps, basis, renormalized=True).log_value.real
        return plain, wick

    values = default_executor(executor).map(both, eps_grid)
    samples = dict(zip(eps_grid, values))
    tags = regular_tags(basis.dimension)
    plain = counterterm_extract({e: v[0] for e, v in samples.items()}, tags)
    wick = counterterm_extract({e: v[1] for e, v in samples.items()}, tags)
    return WickScan(plain, wick, samples)


# discrete GFF


@dataclass(frozen=True)
class DGFFResult:
    sizes: Tuple[int, ...]
    log_ratios: Tuple[float, ...]
    extrapolated: float
    continuum: Optional[DetResult] = None

    @property
    def errors(self) -> List[float]:
        if self.continuum is None:
            return []
        target = self.continuum.log_value.real
        return [abs(r - target) for r in self.log_ratios]

    @property
    def extrapolation_error(self) -> Optional[float]:
        if self.continuum is None:
            return None
        return abs(math.exp(self.extrapolated - self.continuum.log_value.real) - 1)

    @property
    def monotone(self) -> bool:
        errors = self.errors[1:]
        return all(b <= a for a, b in zip(errors, errors[1:]))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sizes": list(self.sizes),
            "log_ratios": list(self.log_ratios),
            "extrapolated": self.extrapolated,
            "continuum": self.continuum.to_dict() if self.continuum else None,
            "errors": self.errors,
            "extrapolation_error": self.extrapolation_error,
            "monotone": self.monotone,
        }


def _lattice_samples(V: Union[PerturbationField, np.ndarray], geometry: Geometry) -> np.ndarray:
    size = geometry.lattice_size
    if isinstance(V, PerturbationField):
        return V.sample_grid(geometry, size).real
    values = np.asarray(V, dtype=float)
    if values.shape == (size, size):
        return values
    band = min((values.shape[0] - 1) // 2, (size - 1) // 2)
    return PerturbationField.from_samples(values, band).sample_grid(geometry, size).real


def dgff_ratio(
    V: Union[PerturbationField, np.ndarray],
    sizes: Sequence[int],
    geometry: Geometry,
    cutoff: Optional[int] = None,
    executor: Optional[GridExecutor] = None,
) -> DGFFResult:
    """Lattice ratios ``log det(Δ_h + m² + V) - log det(Δ_h + m²)`` and their h -> 0 limit.

    ``geometry`` fixes the torus length and mass; ``cutoff`` enables the
    continuum zeta ratio for comparison. Grid samples resolve modes up to
    half their side, beyond which they are projected.
    """
    if geometry.dimension != 2:
        raise GeometryError("the discrete GFF limit is taken on the two-torus")
    sizes = sorted(int(s) for s in sizes)
    if not sizes:
        raise ValueError("need at least one lattice size")
    if isinstance(V, PerturbationField):
        mean, scale = V.mean, sum(abs(c) for c in V.coefficients.values())
    else:
        mean, scale = complex(np.mean(V)), float(np.max(np.abs(V)))
    if abs(mean) > 1e-10 * max(1.0, scale):
        raise GeometryError(f"the discrete GFF limit needs a mean-zero potential (mean {abs(mean):.3e})")

    def log_ratio(size: int) -> float:
        lattice = Geometry.lattice(size, geometry.length, geometry.mass)
        samples = _lattice_samples(V, lattice)
        try:
            perturbed = lattice_logdet(build_lattice_laplace(lattice, samples))
        except NotPositiveDefiniteError:
            logger.error(f"lattice operator at size {size} is not positive definite")
            raise
        return perturbed - lattice_logdet(build_lattice_laplace(lattice, None))

    ratios = default_executor(executor).map(log_ratio, sizes)
    if len(sizes) > 1:
        # error O(h²)
        q = (sizes[-1] / sizes[-2]) ** 2
        extrapolated = (q * ratios[-1] - ratios[-2]) / (q - 1)
    else:
        extrapolated = ratios[-1]
    continuum = None
    if cutoff is not None:
        torus = geometry.continuum()
        field_ = V if isinstance(V, PerturbationField) else PerturbationField.from_samples(
            np.asarray(V, dtype=float), min(cutoff, (np.shape(V)[0] - 1) // 2)
        )
        continuum = zeta_ratio_mellin(build_laplace(torus, field_, ModeBasis.build(torus, cutoff)))
    logger.debug(f"dgff ratios {dict(zip(sizes, ratios))}, extrapolated {extrapolated:.8f}")
    return DGFFResult(tuple(sizes), tuple(float(r) for r in ratios), float(extrapolated), continuum)
