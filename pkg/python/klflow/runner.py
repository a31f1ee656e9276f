"""
Experiment orchestration behind the CLI commands.

A run integrates one trajectory, evaluates the enforced checks and the
analysis, and writes artifacts. A sweep runs one such cell per point of the
configured grid, optionally in worker processes.
"""

import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pydantic

from . import analysis, monitors
from .artifacts import (
    AGGREGATE_COLUMNS,
    RATES_COLUMNS,
    aggregate_row,
    fmt,
    read_report,
    render_table,
    write_csv,
    write_gnuplot,
    write_report,
    write_trajectory_csv,
)
from .catalog import catalog_make
from .config import CHECK_DEFAULTS, CheckSpec, ExperimentConfig, default_checks, initial_points, parse_config
from .dynamics import Trajectory, integrate
from .exceptions import (
    CheckFailedError,
    ConfigError,
    DivergedError,
    InsufficientSamplesError,
    KLFlowError,
    exit_code_for,
)
from .objective import ObjectiveSpec, validate_oracles
from .types import (
    CheckResult,
    ConvexMode,
    DynamicsParams,
    KLCheckReport,
    LimitSetEstimate,
    OracleReport,
    RateRegime,
    RunReport,
    Termination,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def build_spec(config: ExperimentConfig) -> ObjectiveSpec:
    """Catalog objective with the config's mode and KL overrides applied."""
    problem = config.problem
    spec = catalog_make(problem.name, problem.dimension, problem.params, problem.mode)
    override = problem.kl_override
    if override is not None:
        if spec.kl_profile is None:
            raise ConfigError(f"{problem.name} has no KL profile to override")
        changes = {k: v for k, v in override.model_dump(exclude_none=True).items()}
        spec = spec.with_profile(replace(spec.kl_profile, **changes))
    return spec


def report_exit_code(report: RunReport) -> int:
    if report.termination is Termination.DIVERGED:
        return EXIT_DIVERGED
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


# ============================================================================
# Checks
# ============================================================================


def _tolerance(check: CheckSpec, traj: Trajectory) -> float:
    if check.tol is not None:
        return check.tol
    default = CHECK_DEFAULTS[check.name]
    if default is not None:
        return default
    h = traj.params.h
    if check.name == "cocoercivity":
        return 10.0 * h * h
    if check.name == "cross_term":
        return 10.0 * h * h if traj.spec.mode is ConvexMode.SMOOTH else 1e-12
    return traj.params.stop_grad_tol


def evaluate_check(check: CheckSpec, traj: Trajectory, limit: LimitSetEstimate) -> CheckResult:
    """Worst value of one monitor over the run; larger is worse."""
    name = check.name
    tol = _tolerance(check, traj)
    diags = traj.diagnostics
    spec = traj.spec
    worst: Optional[float] = None
    detail: Optional[str] = None

    if name == "energy_identity":
        worst = monitors.energy_residual_max(diags)
    elif name == "cocoercivity":
        slack = monitors.cocoercivity_min(diags)
        worst = None if slack is None else max(0.0, -slack)
        if slack is None:
            detail = "not applicable in prox mode"
    elif name == "cross_term":
        slack = monitors.cross_term_min(diags)
        worst = None if slack is None else max(0.0, -slack)
    elif name == "forcing":
        worst = monitors.forcing_inequality_check(diags, spec.smooth.lipschitz_grad, traj.params.lam)
    elif name == "monotonicity":
        worst = monitors.monotonicity_check(traj)
    elif name == "sigma_bound":
        worst = analysis.sigma_bound_violation(traj)
    elif name == "objective_limit":
        worst = analysis.objective_limit_check([traj]).max_oscillation
    elif name == "stationarity":
        worst = limit.stationarity
        if traj.termination is not Termination.GRAD_TOL:
            return CheckResult(
                name=name, passed=True, worst=worst, tolerance=tol,
                detail=f"enforced at GRAD_TOL only (termination {traj.termination.value})",
            )
    elif name == "prox_exactness":
        residual, violation = monitors.prox_exactness(diags)
        values = [v for v in (residual, violation) if v is not None]
        worst = max(values) if values else None
        if not values:
            detail = "not applicable in smooth mode"
    elif name == "vanishing":
        try:
            worst = max(monitors.vanishing_check(traj))
        except InsufficientSamplesError as e:
            detail = str(e)
    elif name == "kl_desingularizer":
        profile = spec.kl_profile
        if profile is None:
            detail = "no KL profile"
        else:
            xs = [s.x for s in traj.samples]
            vs = [s.v for s in traj.samples]
            value = monitors.kl_desingularizer_check(spec, profile, xs, vs)
            if value is None:
                detail = "no samples inside the KL neighbourhood"
            else:
                worst = max(0.0, 1.0 - value)

    passed = worst is None or worst <= tol
    return CheckResult(name=name, passed=passed, worst=worst, tolerance=tol, detail=detail)


def raise_for_checks(results: Sequence[CheckResult]) -> None:
    """
    Raises:
        CheckFailedError: Any result did not pass
    """
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CheckFailedError(
            f"{len(failed)} check(s) failed: {', '.join(failed)}", details={"failed": failed}
        )


def monitor_summary(traj: Trajectory) -> Dict[str, Optional[float]]:
    """Reported, not enforced, monitor values."""
    diags = traj.diagnostics
    spec = traj.spec
    residual, violation = monitors.prox_exactness(diags)
    summary: Dict[str, Optional[float]] = {
        "energy_residual_max": monitors.energy_residual_max(diags),
        "cocoercivity_min": monitors.cocoercivity_min(diags),
        "cross_term_min": monitors.cross_term_min(diags),
        "forcing_max": monitors.forcing_inequality_check(diags, spec.smooth.lipschitz_grad, traj.params.lam),
        "monotonicity": monitors.monotonicity_check(traj),
        "scheme_residual_max": residual,
        "certification_violation": violation,
        "observed_lipschitz": monitors.observed_lipschitz(traj),
        "declared_lipschitz": spec.smooth.lipschitz_grad,
        "alpha_estimate": analysis.alpha_estimate(traj),
        "alpha_bound": (
            analysis.alpha_bound(traj.params.lam, spec.convex.inv_lipschitz)
            if spec.mode is ConvexMode.SMOOTH and spec.convex.inv_lipschitz
            else None
        ),
    }
    try:
        tail_stat, tail_step = monitors.vanishing_check(traj)
        summary["tail_stationarity"] = tail_stat
        summary["tail_step"] = tail_step
    except InsufficientSamplesError:
        summary["tail_stationarity"] = summary["tail_step"] = None
    summary.update(monitors.integrability_summary(traj))
    if spec.kl_profile is not None:
        profile = spec.kl_profile
        summary["kl_desingularizer_min"] = monitors.kl_desingularizer_check(
            spec, profile, [s.x for s in traj.samples], [s.v for s in traj.samples]
        )
        summary["alpha_prime_estimate"] = analysis.alpha_prime_estimate(traj, profile.theta)
    return summary


# ============================================================================
# Single Run
# ============================================================================


def run_single(
    config: ExperimentConfig,
    spec: ObjectiveSpec,
    params: DynamicsParams,
    x0: np.ndarray,
    v0: Optional[Sequence[float]] = None,
) -> Tuple[Trajectory, RunReport]:
    """Integrate, analyse and check one trajectory. Divergence is reported, not raised."""
    started = time.perf_counter()
    traj = integrate(spec, params, x0, v0)
    profile = spec.kl_profile
    notes: List[str] = []

    report = RunReport(
        config=config.echo(),
        problem=spec.name,
        mode=spec.mode,
        termination=traj.termination,
        steps=traj.accepted_steps,
        rejected_steps=traj.rejected_steps,
        sample_count=len(traj.samples),
        v0_source=traj.v0_source,
        known_theta=profile.theta if profile else None,
    )
    if profile is not None:
        regime, exponent = analysis.predicted_regime(profile.theta)
        report.predicted_regime = regime
        report.predicted_exponent = exponent
        if regime is RateRegime.FINITE and spec.mode is ConvexMode.SMOOTH:
            notes.append("finite-time regime is only observable through the prox scheme")

    if traj.diverged:
        notes.append(f"diverged: {traj.failure}")
        report.notes = notes
        report.wall_clock_seconds = time.perf_counter() - started
        return traj, report

    acfg = config.analysis
    limit = analysis.estimate_limit(traj, acfg.window_fraction, acfg.snap_radius)
    report.limit = limit
    try:
        report.rate = analysis.classify_rate(
            traj, limit.x_ref, limit.v_ref, window=acfg.fit_window, min_points=acfg.min_points
        )
    except InsufficientSamplesError as e:
        report.rate_error = str(e)
        notes.append(f"rate not classified: {e}")

    checks = config.checks or default_checks(spec.mode)
    report.checks = [evaluate_check(check, traj, limit) for check in checks]
    report.monitors = monitor_summary(traj)
    report.notes = notes
    report.wall_clock_seconds = time.perf_counter() - started
    for check in report.checks:
        if not check.passed:
            logger.warning(f"check {check.name} failed: worst={check.worst} tol={check.tolerance}")
    return traj, report


def write_run_artifacts(
    config: ExperimentConfig, traj: Trajectory, report: RunReport, out_dir: Path
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    formats = config.outputs.formats
    if "csv" in formats:
        write_trajectory_csv(traj, out_dir / "trajectory.csv")
    if "json" in formats:
        write_report(report, out_dir / "report.json")
    if "gnuplot" in formats:
        write_gnuplot(out_dir / "plot.gp", traj.spec.n)


def run_experiment(config: ExperimentConfig) -> Tuple[RunReport, int]:
    """Single run from the config's first initial point; returns the report and exit code."""
    spec = build_spec(config)
    x0 = initial_points(config)[0]
    traj, report = run_single(config, spec, config.dynamics, x0, config.initial.v0)
    out_dir = Path(config.outputs.directory)
    write_run_artifacts(config, traj, report, out_dir)
    code = report_exit_code(report)
    logger.info(f"run {spec.name}: {report.termination.value}, exit {code}, artifacts in {out_dir}")
    return report, code


# ============================================================================
# Sweep
# ============================================================================


@dataclass
class SweepCell:
    index: int
    lam: float
    h: float
    start: int
    x0: List[float]


@dataclass
class CellOutcome:
    cell: SweepCell
    exit_code: int
    report: Optional[Dict[str, Any]] = None
    error: Optional[str] = None


def sweep_cells(config: ExperimentConfig) -> List[SweepCell]:
    """Cells in lam x h x start order."""
    sweep = config.sweep
    if sweep is None:
        raise ConfigError("config has no sweep section")
    lams = sweep.lam or [config.dynamics.lam]
    hs = sweep.h or [config.dynamics.h]
    starts = initial_points(config, sweep.starts)
    cells = []
    for index, (lam, h, (start, x0)) in enumerate(itertools.product(lams, hs, enumerate(starts))):
        cells.append(SweepCell(index=index, lam=lam, h=h, start=start, x0=x0.tolist()))
    return cells


def _run_cell(payload: Tuple[Dict[str, Any], SweepCell, str]) -> CellOutcome:
    """Worker entry point; rebuilds everything from plain data."""
    config_data, cell, out_root = payload
    try:
        config = parse_config(config_data)
        try:
            params = DynamicsParams.model_validate({**config.dynamics.model_dump(), "lam": cell.lam, "h": cell.h})
        except pydantic.ValidationError as e:
            raise ConfigError(f"cell {cell.index}: {e}") from e
        spec = build_spec(config)
        v0 = config.initial.v0 if config.initial.x0 is not None else None
        traj, report = run_single(config, spec, params, np.asarray(cell.x0), v0)
        write_run_artifacts(config, traj, report, Path(out_root) / f"cell_{cell.index:03d}")
        return CellOutcome(cell=cell, exit_code=report_exit_code(report), report=report.model_dump(mode="json"))
    except KLFlowError as e:
        return CellOutcome(cell=cell, exit_code=exit_code_for(e), error=str(e))
    except Exception as e:
        logger.exception(f"cell {cell.index} raised an unexpected error")
        return CellOutcome(cell=cell, exit_code=exit_code_for(e), error=f"{type(e).__name__}: {e}")


def run_sweep(config: ExperimentConfig) -> Tuple[List[CellOutcome], int]:
    """
    Run every sweep cell and write aggregate.csv.

    Cells are independent; results are gathered in cell order so the
    aggregate is reproducible for a fixed seed.
    """
    cells = sweep_cells(config)
    out_root = Path(config.outputs.directory)
    out_root.mkdir(parents=True, exist_ok=True)
    data = config.model_dump(mode="json", by_alias=True, exclude_none=True)
    payloads = [(data, cell, str(out_root)) for cell in cells]
    workers = config.sweep.workers if config.sweep else 1

    logger.info(f"sweep: {len(cells)} cells on {workers} worker(s)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell, payloads))
    else:
        outcomes = [_run_cell(p) for p in payloads]

    rows = []
    for outcome in outcomes:
        cell = outcome.cell
        if outcome.report is not None:
            report = RunReport.model_validate(outcome.report)
            rows.append(aggregate_row(cell.index, cell.lam, cell.h, cell.start, report))
        else:
            logger.warning(f"cell {cell.index} failed: {outcome.error}")
            rows.append(
                [str(cell.index), fmt(cell.lam), fmt(cell.h), str(cell.start), "ERROR"]
                + [""] * (len(AGGREGATE_COLUMNS) - 6)
                + ["false"]
            )
    write_csv(out_root / "aggregate.csv", AGGREGATE_COLUMNS, rows)

    codes = [o.exit_code for o in outcomes]
    if EXIT_CONFIG in codes:
        code = EXIT_CONFIG
    elif EXIT_DIVERGED in codes:
        code = EXIT_DIVERGED
    elif EXIT_CHECK_FAILED in codes:
        code = EXIT_CHECK_FAILED
    else:
        code = EXIT_OK
    return outcomes, code


# ============================================================================
# Oracle and KL Check
# ============================================================================


@dataclass
class ProblemCheck:
    oracle: OracleReport
    kl: Optional[KLCheckReport] = None
    results: List[CheckResult] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


def check_problem(config: ExperimentConfig) -> ProblemCheck:
    """Oracle validation plus, when a KL profile exists, the KL grid check."""
    spec = build_spec(config)
    vcfg = config.validation
    oracle = validate_oracles(spec, vcfg.samples, vcfg.seed)
    outcome = ProblemCheck(oracle=oracle)

    for key, value in sorted(oracle.violations.items()):
        tol = vcfg.fd_tol if key == "fd_gradient" else vcfg.oracle_tol
        outcome.results.append(CheckResult(name=key, passed=value <= tol, worst=value, tolerance=tol))
    if oracle.fd_order is not None:
        outcome.notes.append(f"finite-difference gradient order {oracle.fd_order:.3f}")

    profile = spec.kl_profile
    if profile is None:
        outcome.notes.append(f"no KL profile for {spec.name}")
        return outcome

    if spec.mode is ConvexMode.SMOOTH:
        kl = monitors.kl_inequality_check(spec, profile, points=vcfg.kl_points, seed=vcfg.seed)
    else:
        traj = integrate(spec, config.dynamics, initial_points(config)[0], config.initial.v0)
        if traj.diverged:
            raise DivergedError(f"trajectory for the prox-mode KL grid diverged: {traj.failure}")
        kl = monitors.kl_inequality_check(spec, profile, grid=traj.xs, velocities=traj.vs)
    outcome.kl = kl
    outcome.results.append(
        CheckResult(name="kl_inequality", passed=kl.max_violation <= vcfg.kl_tol, worst=kl.max_violation,
                    tolerance=vcfg.kl_tol, detail=f"minimal C {kl.minimal_constant:.6g}")
    )
    outcome.results.append(
        CheckResult(
            name="kl_sharpness",
            passed=kl.sharpness_gap <= vcfg.sharpness_tol,
            worst=kl.sharpness_gap,
            tolerance=vcfg.sharpness_tol,
            detail=None if kl.theta_empirical is None else f"empirical theta {kl.theta_empirical:.6g}",
        )
    )
    return outcome


# ============================================================================
# Rates Table
# ============================================================================


def rates_row(report: RunReport) -> List[str]:
    """Predicted against observed regime for one report."""
    rate = report.rate
    observed = rate.regime if rate else RateRegime.UNDETERMINED
    observed_exp = rate.exponent if rate else None
    predicted, predicted_exp = report.predicted_regime, report.predicted_exponent

    rel_err = None
    if observed_exp is not None and predicted_exp is not None and predicted_exp > 0:
        rel_err = abs(observed_exp - predicted_exp) / predicted_exp

    if observed is RateRegime.UNDETERMINED:
        flag = "undetermined"
    elif report.known_theta is None:
        flag = "no_theta"
    elif observed is not predicted:
        flag = "mismatch"
    else:
        flag = ""
    return [
        report.problem,
        fmt(report.known_theta),
        predicted.value if predicted else "",
        fmt(predicted_exp),
        observed.value,
        fmt(observed_exp),
        fmt(rel_err),
        flag,
    ]


def rates_table(paths: Sequence[Path], out_dir: Path) -> Tuple[List[List[str]], str]:
    """Write rates.csv and rates.txt for the given reports."""
    if not paths:
        raise ConfigError("rates needs at least one report")
    rows = [rates_row(read_report(p)) for p in paths]
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "rates.csv", RATES_COLUMNS, rows)
    text = render_table("Decay regimes", RATES_COLUMNS, rows)
    (out_dir / "rates.txt").write_text(text)
    return rows, text
