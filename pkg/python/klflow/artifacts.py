"""
Files written and read by the CLI: trajectory CSV, report JSON, gnuplot
script, sweep aggregate and rates table.

Floats are written with 17 significant digits so every value survives a
round trip exactly.
"""

import csv
import io
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import pydantic
from rich.console import Console
from rich.table import Table

from .dynamics import Trajectory
from .exceptions import ConfigError
from .objective import eval_objective, subgradient_residual
from .types import RunReport, Termination

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DIAGNOSTIC_COLUMNS = [
    "obj",
    "stationarity",
    "energy_residual",
    "descent",
    "cross_term",
    "cocoercivity_slack",
    "step_norm_x",
    "step_norm_v",
]

AGGREGATE_COLUMNS = [
    "cell",
    "lambda",
    "h",
    "start",
    "termination",
    "steps",
    "regime",
    "coef_a",
    "coef_b",
    "exponent",
    "theta_implied",
    "fit_r2",
    "limit_value",
    "stationarity",
    "passed",
]

RATES_COLUMNS = [
    "problem",
    "known_theta",
    "predicted_regime",
    "predicted_exponent",
    "observed_regime",
    "observed_exponent",
    "relative_error",
    "flag",
]


def fmt(value: Optional[float]) -> str:
    """17-significant-digit decimal; empty for missing values."""
    if value is None:
        return ""
    return format(float(value), ".17g")


def trajectory_columns(n: int) -> List[str]:
    return ["t"] + [f"x_{i}" for i in range(n)] + [f"v_{i}" for i in range(n)] + DIAGNOSTIC_COLUMNS


# ============================================================================
# Trajectory CSV
# ============================================================================


def write_trajectory_csv(traj: Trajectory, path: PathLike) -> Path:
    """One row per sample; diagnostics of the step that produced it, empty at t=0."""
    path = Path(path)
    spec = traj.spec
    by_time = {d.t: d for d in traj.diagnostics}
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(trajectory_columns(spec.n))
        for s in traj.samples:
            diag = by_time.get(s.t)
            if diag is None:
                tail = [
                    fmt(eval_objective(spec, s.x)),
                    fmt(subgradient_residual(spec, s.x, s.v)),
                ] + [""] * (len(DIAGNOSTIC_COLUMNS) - 2)
            else:
                tail = [
                    fmt(diag.obj),
                    fmt(diag.stationarity),
                    fmt(diag.energy_residual),
                    fmt(diag.descent),
                    fmt(diag.cross_term),
                    fmt(diag.cocoercivity_slack),
                    fmt(diag.step_norm_x),
                    fmt(diag.step_norm_v),
                ]
            writer.writerow([fmt(s.t)] + [fmt(c) for c in s.x] + [fmt(c) for c in s.v] + tail)
    logger.debug(f"wrote {len(traj.samples)} samples to {path}")
    return path


def read_trajectory_csv(path: PathLike) -> Dict[str, List[Optional[float]]]:
    """Columns of a trajectory CSV; empty fields come back as None."""
    columns: Dict[str, List[Optional[float]]] = {}
    with Path(path).open(newline="") as f:
        reader = csv.DictReader(f)
        for name in reader.fieldnames or []:
            columns[name] = []
        for row in reader:
            for name, raw in row.items():
                columns[name].append(float(raw) if raw != "" else None)
    return columns


# ============================================================================
# Reports
# ============================================================================


def write_report(report: RunReport, path: PathLike) -> Path:
    path = Path(path)
    path.write_text(report.model_dump_json(indent=2) + "\n")
    return path


def read_report(path: PathLike) -> RunReport:
    """
    Raises:
        ConfigError: Missing or malformed report
    """
    path = Path(path)
    try:
        return RunReport.model_validate_json(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read report {path}: {e}") from e
    except pydantic.ValidationError as e:
        raise ConfigError(f"malformed report {path}: {e}") from e


def write_gnuplot(path: PathLike, n: int, csv_name: str = "trajectory.csv") -> Path:
    """Plot script for the trajectory CSV: components and log stationarity."""
    cols = trajectory_columns(n)
    stat_col = cols.index("stationarity") + 1
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set multiplot layout 2,1",
        "set xlabel 't'",
        "set ylabel 'x'",
        "plot " + ", ".join(f"'{csv_name}' using 1:{i + 2} with lines" for i in range(n)),
        "set logscale y",
        "set ylabel '||v + grad psi(x)||'",
        f"plot '{csv_name}' using 1:{stat_col} with lines",
        "unset multiplot",
    ]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


# ============================================================================
# Tables
# ============================================================================


def write_csv(path: PathLike, columns: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)
    return path


def aggregate_row(cell: int, lam: float, h: float, start: int, report: RunReport) -> List[str]:
    """Aggregate CSV row; no timing columns."""
    rate = report.rate
    limit = report.limit
    return [
        str(cell),
        fmt(lam),
        fmt(h),
        str(start),
        report.termination.value,
        str(report.steps),
        rate.regime.value if rate else "",
        fmt(rate.coefficients[0]) if rate else "",
        fmt(rate.coefficients[1]) if rate else "",
        fmt(rate.exponent) if rate else "",
        fmt(rate.theta_implied) if rate else "",
        fmt(rate.fit_r2) if rate else "",
        fmt(limit.objective_value) if limit else "",
        fmt(limit.stationarity) if limit else "",
        "true" if report.passed and report.termination is not Termination.DIVERGED else "false",
    ]


def render_table(title: str, columns: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Aligned plain-text rendering of a table."""
    table = Table(title=title)
    for name in columns:
        table.add_column(name)
    for row in rows:
        table.add_row(*row)
    buffer = io.StringIO()
    Console(file=buffer, width=200, color_system=None).print(table)
    return buffer.getvalue()
