"""
Command-line interface for klflow.

Provides the run, sweep, check and rates commands.
"""

import functools
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Optional, Tuple

import click
from rich.console import Console
from rich.logging import RichHandler

from . import __version__
from .artifacts import render_table
from .config import ExperimentConfig, load_config
from .exceptions import KLFlowError, exit_code_for
from .runner import (
    EXIT_CHECK_FAILED,
    check_problem,
    raise_for_checks,
    rates_table,
    run_experiment,
    run_sweep,
)

logger = logging.getLogger(__name__)

LOG_ENV = "KLFLOW_LOG"


def setup_logging() -> None:
    """Root handler at the level named by KLFLOW_LOG (default WARNING)."""
    name = os.environ.get(LOG_ENV, "WARNING").upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        click.echo(f"Warning: unknown {LOG_ENV} level '{name}', using WARNING", err=True)
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def config_options(f: Callable) -> Callable:
    """Shared --config/--out/--workers/--seed options."""
    f = click.option("--seed", type=int, help="Override random and validation seeds")(f)
    f = click.option("--workers", type=click.IntRange(min=1), help="Sweep worker processes")(f)
    f = click.option("--out", type=click.Path(file_okay=False), help="Output directory")(f)
    f = click.option(
        "--config", "config_path", required=True, type=click.Path(), help="Experiment config (YAML or JSON)"
    )(f)
    return f


def with_config(f: Callable) -> Callable:
    """Decorator to load the config with CLI overrides and map errors to exit codes."""

    @functools.wraps(f)
    def wrapper(
        config_path: str,
        out: Optional[str],
        workers: Optional[int],
        seed: Optional[int],
        **kwargs,
    ):
        try:
            config = load_config(config_path).with_overrides(out=out, workers=workers, seed=seed)
            code = f(config=config, **kwargs)
        except KLFlowError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(exit_code_for(e))
        sys.exit(code)

    return wrapper


@click.group()
@click.version_option(version=__version__)
def main() -> None:
    """klflow - Hessian-damped subgradient flows and their convergence regimes."""
    setup_logging()


@main.command()
@config_options
@with_config
def run(config: ExperimentConfig) -> int:
    """Integrate one trajectory and check it."""
    report, code = run_experiment(config)
    click.echo(f"Problem: {report.problem} ({report.mode.value})")
    click.echo(f"Termination: {report.termination.value} after {report.steps} steps")
    if report.limit is not None:
        click.echo(f"Limit value: {report.limit.objective_value:.12g}")
        click.echo(f"Stationarity: {report.limit.stationarity:.3e}")
    if report.rate is not None:
        exponent = "" if report.rate.exponent is None else f", exponent {report.rate.exponent:.4g}"
        click.echo(f"Regime: {report.rate.regime.value}{exponent}")
    for check in report.checks:
        if not check.passed:
            click.echo(f"FAILED {check.name}: worst {check.worst:.3e} > tol {check.tolerance:.3e}", err=True)
    for note in report.notes:
        click.echo(f"Note: {note}")
    click.echo(f"Artifacts: {config.outputs.directory}")
    if code == EXIT_CHECK_FAILED:
        raise_for_checks(report.checks)
    return code


@main.command()
@config_options
@with_config
def sweep(config: ExperimentConfig) -> int:
    """Run every cell of the configured sweep."""
    outcomes, code = run_sweep(config)
    failed = sum(1 for o in outcomes if o.exit_code != 0)
    click.echo(f"Cells: {len(outcomes)} ({failed} not passing)")
    click.echo(f"Aggregate: {Path(config.outputs.directory) / 'aggregate.csv'}")
    return code


@main.command()
@config_options
@with_config
def check(config: ExperimentConfig) -> int:
    """Validate oracles and the KL profile of the configured problem."""
    outcome = check_problem(config)
    rows = [
        [
            r.name,
            "" if r.worst is None else f"{r.worst:.3e}",
            f"{r.tolerance:.1e}",
            "ok" if r.passed else "FAIL",
            r.detail or "",
        ]
        for r in outcome.results
    ]
    click.echo(render_table(f"Checks: {config.problem.name}", ["check", "worst", "tol", "status", "detail"], rows))
    for note in outcome.notes:
        click.echo(f"Note: {note}")
    raise_for_checks(outcome.results)
    return 0


@main.command()
@click.argument("reports", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True, help="Output directory")
def rates(reports: Tuple[str, ...], out: str) -> None:
    """Compare predicted and observed decay regimes across reports."""
    try:
        _, text = rates_table([Path(p) for p in reports], Path(out))
    except KLFlowError as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(exit_code_for(e))
    click.echo(text)


if __name__ == "__main__":
    main()
