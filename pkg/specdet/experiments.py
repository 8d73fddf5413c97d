"""One function per CLI experiment.

Each experiment turns an ``ExperimentContext`` into an ``Outcome``: the
tables written as CSV, the tolerance checks deciding the exit code, and a
results mapping echoed in the JSON summary.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from .config import ExperimentConfig
from .core.cache import EigenCache
from .core.determinants import (
    admissible_cut,
    fredholm_det,
    free_circle_det,
    gk_det,
    gk_det_rp,
    gk_det_series,
    zeta_det_mellin,
    zeta_det_monodromy,
    zeta_ratio_mellin,
)
from .core.entire import ZeroSequence, critical_exponent
from .core.execution import GridExecutor
from .core.factorization import (
    Sector,
    disjoint_support_check,
    factorization_profile,
    fit_ambiguity_polynomial,
    growth_bound_check,
    trace_identity_check,
    weierstrass_representation_check,
)
from .core.geometry import Geometry, GeometryKind, ModeBasis, PerturbationField
from .core.gff import dgff_ratio, mc_partition, mc_partition_renormalized, wick_divergence_scan
from .core.operators import build_dirac_squared, build_laplace, eigenvalues
from .core.renorm import renormalized_det
from .core.results import CheckReport, DetResult, relative_error
from .errors import FactorizationError, SeriesDivergenceError

logger = logging.getLogger(__name__)


@dataclass
class Table:
    """A CSV table with fixed columns."""

    name: str
    columns: List[str]
    rows: List[List[Any]] = field(default_factory=list)

    def add(self, *values: Any) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"table {self.name} expects {len(self.columns)} values, got {len(values)}")
        self.rows.append(list(values))


@dataclass
class Outcome:
    tables: List[Table] = field(default_factory=list)
    checks: List[CheckReport] = field(default_factory=list)
    results: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


@dataclass
class ExperimentContext:
    config: ExperimentConfig
    cache: Optional[EigenCache] = None
    executor: Optional[GridExecutor] = None

    @property
    def geometry(self) -> Geometry:
        return self.config.geometry.build()

    @property
    def perturbation(self) -> PerturbationField:
        return self.config.perturbation.build(self.geometry.continuum())

    @property
    def basis(self) -> ModeBasis:
        return ModeBasis.build(self.geometry, self.config.cutoff)

    @property
    def fermion_mass(self) -> Optional[float]:
        mass = self.config.param("fermion_mass")
        return None if mass is None else float(mass)


def _split(value: complex) -> List[float]:
    value = complex(value)
    return [value.real, value.imag]


def _det_row(table: Table, label: str, det: DetResult) -> None:
    table.add(label, *_split(det.value), *_split(det.log_value), det.error, det.cutoff)


def run_zeta(ctx: ExperimentContext) -> Outcome:
    """Zeta determinant of Δ + m² + V (or D*(D + A)) with its oracles."""
    cfg, geometry, V, basis = ctx.config, ctx.geometry, ctx.perturbation, ctx.basis
    outcome = Outcome()
    table = Table("zeta", ["method", "value_re", "value_im", "log_value_re", "log_value_im", "error", "cutoff"])
    if ctx.fermion_mass is not None:
        op = build_dirac_squared(geometry, ctx.fermion_mass, V, basis)
    else:
        op = build_laplace(geometry, V, basis)
    zeta_cfg = cfg.zeta
    if zeta_cfg.cut_angle is None:
        zeta_cfg = zeta_cfg.model_copy(update={"cut_angle": admissible_cut(eigenvalues(op, ctx.cache))})
    absolute = zeta_det_mellin(op, zeta_cfg, ctx.cache)
    ratio = zeta_ratio_mellin(op, zeta_cfg, ctx.cache)
    _det_row(table, "zeta_mellin", absolute)
    _det_row(table, "zeta_mellin_ratio", ratio)
    outcome.results.update(det=absolute, ratio=ratio)

    circle = geometry.kind is GeometryKind.CIRCLE and ctx.fermion_mass is None
    if circle and V.is_zero:
        closed = free_circle_det(geometry.length, geometry.mass)
        error = relative_error(absolute.value, closed)
        table.add("closed_form", closed, 0.0, math.log(closed), 0.0, 0.0, None)
        outcome.results["closed_form"] = closed
        outcome.checks.append(CheckReport(
            "closed_form", error < cfg.tolerance("closed_form", 1e-6),
            {"zeta": absolute.value, "closed_form": closed}, error, cfg.tolerance("closed_form", 1e-6),
        ))
    methods = cfg.methods or ["mellin", "monodromy"]
    if circle and "monodromy" in methods and V.is_real:
        oracle = zeta_det_monodromy(V, geometry.mass, geometry)
        _det_row(table, "zeta_monodromy_ratio", oracle)
        error = relative_error(ratio.value, oracle.value)
        tol = cfg.tolerance("monodromy", 1e-5)
        outcome.results["monodromy"] = oracle
        outcome.checks.append(CheckReport(
            "mellin_vs_monodromy", error < tol,
            {"mellin": ratio.value, "monodromy": oracle.value}, error, tol,
        ))
    outcome.tables.append(table)
    return outcome


def run_gkdet(ctx: ExperimentContext) -> Outcome:
    """``det_p(Id + z P^{-1} V)`` along every route, with the det_2 identity."""
    cfg = ctx.config
    sector = Sector(ctx.geometry, ctx.basis, ctx.fermion_mass)
    p = int(cfg.param("p", sector.p))
    z = complex(cfg.param("z", 1.0))
    A = z * sector.green_matrix(ctx.perturbation)
    outcome = Outcome()
    table = Table("gkdet", ["route", "value_re", "value_im", "log_value_re", "log_value_im", "error", "cutoff"])
    tol = cfg.tolerance("routes", 1e-8)

    product = gk_det(p, A, cross_check=False)
    _det_row(table, "gk_product", product)
    routes = {"gk_product": product}
    if p >= 2:
        routes["gk_rp"] = gk_det_rp(p, A)
    try:
        routes["gk_trace_series"] = gk_det_series(p, A)
    except SeriesDivergenceError as e:
        logger.info(f"trace series skipped: {e}")
    for name, det in routes.items():
        if name != "gk_product":
            _det_row(table, name, det)
            error = relative_error(det.value, product.value)
            outcome.checks.append(CheckReport(f"{name}_vs_product", error < tol,
                                              {"route": det.value, "product": product.value}, error, tol))
    if p == 2:
        fredholm = fredholm_det(A)
        expected = fredholm.value * np.exp(-np.trace(A))
        error = relative_error(product.value, expected)
        _det_row(table, "fredholm", fredholm)
        outcome.checks.append(CheckReport("det2_identity", error < cfg.tolerance("identity", 1e-12),
                                          {"det2": product.value, "detF_exp_trace": expected}, error,
                                          cfg.tolerance("identity", 1e-12)))
    outcome.tables.append(table)
    outcome.results["routes"] = routes
    return outcome


def run_factorize(ctx: ExperimentContext) -> Outcome:
    """Ambiguity polynomial ``log det_ζ - log det_p`` over a z grid, per RG shift."""
    cfg, V = ctx.config, ctx.perturbation
    sector = Sector(ctx.geometry, ctx.basis, ctx.fermion_mass)
    z_grid = np.linspace(float(cfg.param("z_min", -1.0)), float(cfg.param("z_max", 1.0)),
                         int(cfg.param("z_points", 11)))
    shifts = [float(c) for c in cfg.param("rg_shifts", [0.0])]
    tol = cfg.tolerance("residual", 1e-4)
    outcome = Outcome()
    table = Table("factorize", ["rg_shift", "z", "profile_re", "profile_im", "fit_re", "fit_im"])
    fits = {}
    for c in shifts:
        profile = factorization_profile(V, sector, z_grid, cfg=cfg.zeta, cache=ctx.cache, rg_shift=c,
                                        executor=ctx.executor)
        try:
            fit = fit_ambiguity_polynomial(profile, sector.allowed_degree, tol)
        except FactorizationError as e:
            logger.error(f"factorization failed for rg shift {c}: {e}")
            outcome.checks.append(CheckReport(f"factorization_c{c:g}", False, {"profile": e.profile},
                                              None, tol))
            continue
        fits[c] = fit
        for z, value in profile.items():
            table.add(c, z, *_split(value), *_split(fit(z)))
        outcome.checks.append(CheckReport(
            f"factorization_c{c:g}",
            fit.degree <= sector.allowed_degree and fit.residual < tol,
            {"degree": fit.degree, "allowed_degree": sector.allowed_degree, "coefficients": fit.coefficients},
            fit.residual, tol,
        ))
    if 0.0 in fits:
        integral = V.integral(ctx.geometry.continuum())
        for c, fit in fits.items():
            if c == 0.0 or len(fit.coefficients) < 2:
                continue
            shift = fit.coefficients[1] - fits[0.0].coefficients[1]
            outcome.results[f"linear_shift_c{c:g}"] = {"measured": shift, "expected": c * integral}
    outcome.checks.append(weierstrass_representation_check(V, ctx.geometry, ctx.basis,
                                                           fermion_mass=ctx.fermion_mass))
    outcome.tables.append(table)
    outcome.results["fits"] = {str(c): fit for c, fit in fits.items()}
    return outcome


def run_derivatives(ctx: ExperimentContext) -> Outcome:
    """Trace identities for n > [d/p] and the disjoint-support second derivative."""
    cfg, geometry, basis, V = ctx.config, ctx.geometry, ctx.basis, ctx.perturbation
    route = cfg.param("route", "zeta")
    rg_shift = float(cfg.param("rg_shift", 0.0))
    eps_grid = cfg.param("eps_grid")
    orders = cfg.param("orders", [2] if geometry.dimension == 1 else [2, 3])
    outcome = Outcome()
    table = Table("derivatives", ["check", "derivative_re", "derivative_im", "trace_re", "trace_im",
                                  "relative_error", "passed"])
    if not V.is_zero:
        for n in orders:
            report = trace_identity_check(
                V, geometry, basis, int(n), route=route, fermion_mass=ctx.fermion_mass, cfg=cfg.zeta,
                cache=ctx.cache, tol=cfg.tolerance("trace_identity", 1e-3), rg_shift=rg_shift,
                eps_grid=eps_grid,
            )
            outcome.checks.append(report)
            table.add(report.name, *_split(report.values["derivative"]), *_split(report.values["trace"]),
                      report.relative_error, report.passed)
    if len(cfg.directions) == 2:
        V1, V2 = (spec.build(geometry) for spec in cfg.directions)
        report = disjoint_support_check(
            V, V1, V2, geometry, basis, route=route, fermion_mass=ctx.fermion_mass, cfg=cfg.zeta,
            cache=ctx.cache, tol=cfg.tolerance("disjoint", 1e-4), rg_shift=rg_shift, eps_grid=eps_grid,
        )
        outcome.checks.append(report)
        table.add(report.name, *_split(report.values["second_derivative"]),
                  *_split(report.values["minus_trace"]), report.relative_error, report.passed)
    elif cfg.directions:
        logger.warning(f"ignoring {len(cfg.directions)} directions; the support check takes two")
    outcome.tables.append(table)
    return outcome


def _eps_grid(
    cfg: ExperimentConfig, basis: ModeBasis, offset: float = 0.0, prefix: str = "eps"
) -> np.ndarray:
    # by default the finest ε still damps the edge modes by e^-24
    lo = float(cfg.param(f"{prefix}_min", 12.0 / basis.edge_eigenvalue))
    hi = float(cfg.param(f"{prefix}_max", 100 * lo))
    points = int(cfg.param(f"{prefix}_points", 12))
    grid = np.geomspace(lo, hi, points)
    if offset:
        grid = grid * (hi / lo) ** (offset / (points - 1))
    return grid


def run_renormalize(ctx: ExperimentContext) -> Outcome:
    """Heat-regularized Fredholm determinants, counterterm fit and renormalized limit."""
    cfg, geometry, basis, V = ctx.config, ctx.geometry, ctx.basis, ctx.perturbation
    outcome = Outcome()
    grid = _eps_grid(cfg, basis)
    result = renormalized_det(V, geometry, basis, grid, executor=ctx.executor)
    fit = result.fit
    table = Table("renormalize", ["epsilon", "log_det_regularized", "fit_log_eps", "fit_const", "residual"])
    for eps, value in sorted(result.samples.items()):
        table.add(eps, complex(value).real, fit.coefficients.get("log_eps", 0.0),
                  fit.coefficients.get("const", 0.0), fit.residual)
    outcome.tables.append(table)
    outcome.results["renormalization"] = result

    integral = V.integral(geometry).real
    measured = fit.coefficients.get("log_eps", 0.0)
    sigma = fit.stderr.get("log_eps", 0.0)
    expected = -integral / (4 * math.pi) if geometry.dimension == 2 else 0.0
    tol = cfg.tolerance("log_coefficient", 1e-2)
    if abs(expected) > 1e-12:
        error = relative_error(measured, expected)
        passed = error < tol
    else:
        error = abs(measured)
        passed = error <= max(3 * sigma, 1e-10)
    outcome.checks.append(CheckReport("log_coefficient", passed,
                                      {"measured": measured, "expected": expected, "stderr": sigma},
                                      error, tol))

    offset_grid = _eps_grid(cfg, basis, offset=0.5)
    shifted = renormalized_det(V, geometry, basis, offset_grid, executor=ctx.executor)
    gap = abs(shifted.det.log_value.real - result.det.log_value.real)
    tol = cfg.tolerance("grid_stability", 1e-5)
    outcome.checks.append(CheckReport("grid_stability", gap < tol,
                                      {"limit": result.det.log_value.real,
                                       "limit_offset_grid": shifted.det.log_value.real,
                                       "richardson": result.richardson}, gap, tol))

    rg = Table("rg_action", ["rg_shift", "log_det_re", "log_det_im"])
    for c in cfg.param("rg_shifts", []):
        det = result.shifted(float(c), V.integral(geometry))
        rg.add(float(c), *_split(det.log_value))
    if rg.rows:
        outcome.tables.append(rg)
    return outcome


def run_gff_mc(ctx: ExperimentContext) -> Outcome:
    """Monte-Carlo partition functions against their determinant references."""
    cfg, geometry, basis, V = ctx.config, ctx.geometry, ctx.basis, ctx.perturbation
    renormalized = bool(cfg.param("renormalized", geometry.dimension == 2))
    samples = int(cfg.param("samples", 10000))
    antithetic = bool(cfg.param("antithetic", False))
    estimator = mc_partition_renormalized if renormalized else mc_partition
    outcome = Outcome()
    table = Table("gff_mc", ["epsilon", "mean", "stderr", "reference", "deviation", "passed"])
    for eps in cfg.param("eps", [0.05]):
        check = estimator(V, float(eps), samples, cfg.seed, basis, antithetic=antithetic, executor=ctx.executor)
        table.add(float(eps), check.estimate.mean, check.estimate.stderr, check.reference.value.real,
                  check.deviation, check.passed)
        outcome.checks.append(CheckReport(f"partition_eps{float(eps):g}", check.passed, check.to_dict(),
                                          relative_error(check.estimate.mean, check.reference.value.real)))
    outcome.tables.append(table)

    if bool(cfg.param("scan", geometry.dimension == 2)) and not V.is_zero:
        scan_grid = _eps_grid(cfg, basis, prefix="scan_eps")
        scan = wick_divergence_scan(V, basis, scan_grid, executor=ctx.executor)
        wick = Table("wick_scan", ["epsilon", "log_partition", "log_partition_wick"])
        for eps, (plain, ordered) in sorted(scan.samples.items()):
            wick.add(eps, plain, ordered)
        outcome.tables.append(wick)
        plain_log = scan.unrenormalized.coefficients.get("log_eps", 0.0)
        wick_log = scan.renormalized.coefficients.get("log_eps", 0.0)
        floor = cfg.tolerance("wick_log", 1e-2) * max(abs(plain_log), 1e-12)
        outcome.checks.append(CheckReport(
            "wick_divergence", abs(wick_log) <= floor,
            {"log_eps_unrenormalized": plain_log, "log_eps_renormalized": wick_log},
        ))
        outcome.results["wick_scan"] = scan
    return outcome


def run_dgff(ctx: ExperimentContext) -> Outcome:
    """Lattice determinant ratios extrapolated in the mesh against the zeta ratio."""
    cfg = ctx.config
    torus = ctx.geometry.continuum()
    V = ctx.perturbation
    sizes = [int(s) for s in cfg.param("sizes", [16, 32, 64, 128])]
    result = dgff_ratio(V, sizes, torus, cutoff=cfg.cutoff, executor=ctx.executor)
    outcome = Outcome()
    table = Table("dgff", ["size", "mesh", "log_ratio", "ratio", "error"])
    errors = result.errors or [None] * len(sizes)
    for size, value, error in zip(result.sizes, result.log_ratios, errors):
        table.add(size, torus.length / size, value, math.exp(value), error)
    table.add("extrapolated", 0.0, result.extrapolated, math.exp(result.extrapolated),
              result.extrapolation_error)
    outcome.tables.append(table)
    tol = cfg.tolerance("continuum", 1e-2)
    outcome.checks.append(CheckReport("continuum_limit", (result.extrapolation_error or 0.0) < tol,
                                      result.to_dict(), result.extrapolation_error, tol))
    outcome.results["dgff"] = result

    masses = cfg.param("masses", [])
    if masses:
        trend = Table("massless_trend", ["mass", "extrapolated_log_ratio"])
        for m in masses:
            lighter = Geometry.torus(torus.length, float(m))
            trend.add(float(m), dgff_ratio(V, sizes, lighter, executor=ctx.executor).extrapolated)
        outcome.tables.append(trend)
    return outcome


def run_order(ctx: ExperimentContext) -> Outcome:
    """Growth order of ``z -> det_p(Id + z P^{-1} V)`` and the spectrum's exponent."""
    cfg, geometry, basis, V = ctx.config, ctx.geometry, ctx.basis, ctx.perturbation
    window = cfg.param("window")
    report = growth_bound_check(V, geometry, basis, p=cfg.param("p"), fermion_mass=ctx.fermion_mass,
                                window=tuple(window) if window else None)
    outcome = Outcome(checks=[report])
    table = Table("order", ["quantity", "value", "expected"])
    table.add("growth_order", report.values["order"], "{}-{}".format(*report.values["window"]))

    spectrum = eigenvalues(build_laplace(geometry, V, basis), ctx.cache)
    zeros = ZeroSequence.from_values(spectrum[np.abs(spectrum) > 0])
    if len(zeros) >= 100:
        exponent = critical_exponent(zeros)
        target = geometry.dimension / 2
        tol = cfg.tolerance("exponent", 0.05)
        outcome.checks.append(CheckReport(
            "spectrum_exponent", exponent.contains(target, tol),
            {"exponent": exponent.value, "uncertainty": exponent.uncertainty, "expected": target},
            abs(exponent.value - target), tol,
        ))
        table.add("spectrum_exponent", exponent.value, target)
    outcome.tables.append(table)
    return outcome


EXPERIMENT_MAP: Dict[str, Callable[[ExperimentContext], Outcome]] = {
    "zeta": run_zeta,
    "gkdet": run_gkdet,
    "factorize": run_factorize,
    "derivatives": run_derivatives,
    "renormalize": run_renormalize,
    "gff-mc": run_gff_mc,
    "dgff": run_dgff,
    "order": run_order,
}
