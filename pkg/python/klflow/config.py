"""
Experiment configuration.

Configs are YAML or JSON documents validated into ExperimentConfig. See
docs/CONFIG.md for the schema.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
import pydantic
import yaml
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, field_validator, model_validator

from .catalog import catalog_names
from .exceptions import ConfigError
from .types import ConvexMode, DynamicsParams

logger = logging.getLogger(__name__)


# ============================================================================
# Checks
# ============================================================================

# name -> default tolerance; None means derived from the run (10 h^2 or stop_grad_tol)
CHECK_DEFAULTS: Dict[str, Optional[float]] = {
    "energy_identity": 1e-4,
    "cocoercivity": None,
    "cross_term": None,
    "forcing": 1e-6,
    "monotonicity": 1e-10,
    "sigma_bound": 1e-10,
    "objective_limit": 1e-10,
    "stationarity": None,
    "prox_exactness": 1e-12,
    "vanishing": 1e-6,
    "kl_desingularizer": 1e-10,
}

SMOOTH_CHECKS = [
    "energy_identity",
    "cocoercivity",
    "cross_term",
    "forcing",
    "monotonicity",
    "sigma_bound",
    "objective_limit",
    "stationarity",
]
PROX_CHECKS = [
    "cross_term",
    "monotonicity",
    "prox_exactness",
    "sigma_bound",
    "objective_limit",
    "stationarity",
]


class CheckSpec(BaseModel):
    """One enforced monitor check."""

    model_config = ConfigDict(extra="forbid")

    name: str
    tol: Optional[float] = Field(default=None, ge=0)

    @field_validator("name")
    @classmethod
    def _known_check(cls, v: str) -> str:
        if v not in CHECK_DEFAULTS:
            raise ValueError(f"unknown check '{v}' (known: {', '.join(sorted(CHECK_DEFAULTS))})")
        return v


def default_checks(mode: ConvexMode) -> List[CheckSpec]:
    names = SMOOTH_CHECKS if mode is ConvexMode.SMOOTH else PROX_CHECKS
    return [CheckSpec(name=name) for name in names]


# ============================================================================
# Sections
# ============================================================================


class KLOverride(BaseModel):
    """Replace parts of the catalog KL profile (used to mis-set it on purpose)."""

    model_config = ConfigDict(extra="forbid")

    theta: Optional[float] = Field(default=None, gt=0, lt=1)
    constant: Optional[PositiveFloat] = None


class ProblemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    dimension: int = Field(default=1, ge=1)
    params: List[float] = Field(default_factory=list)
    mode: Optional[ConvexMode] = None
    kl_override: Optional[KLOverride] = None

    @field_validator("name")
    @classmethod
    def _known_problem(cls, v: str) -> str:
        if v not in catalog_names():
            raise ValueError(f"unknown catalog problem '{v}' (known: {', '.join(catalog_names())})")
        return v


class RandomStarts(BaseModel):
    """Uniform points in the ball of `radius` around `center`."""

    model_config = ConfigDict(extra="forbid")

    center: Optional[List[float]] = None
    radius: PositiveFloat = 1.0
    seed: int = 0
    count: int = Field(default=1, ge=1)


class InitialConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    x0: Optional[List[float]] = None
    v0: Optional[List[float]] = None
    random: Optional[RandomStarts] = None

    @model_validator(mode="after")
    def _exactly_one(self) -> "InitialConfig":
        if (self.x0 is None) == (self.random is None):
            raise ValueError("initial needs exactly one of 'x0' or 'random'")
        if self.v0 is not None and self.x0 is None:
            raise ValueError("'v0' is only allowed together with 'x0'")
        for label, vec in (("x0", self.x0), ("v0", self.v0)):
            if vec is not None and not all(math.isfinite(c) for c in vec):
                raise ValueError(f"{label} must be finite")
        return self


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: str = "results"
    formats: List[Literal["csv", "json", "gnuplot"]] = Field(default_factory=lambda: ["csv", "json"])


class SweepConfig(BaseModel):
    """Sweep axes; the cell grid is lam x h x starts in that order."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    lam: Optional[List[PositiveFloat]] = Field(default=None, alias="lambda")
    h: Optional[List[PositiveFloat]] = None
    starts: Optional[int] = Field(default=None, ge=1)
    workers: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _non_empty(self) -> "SweepConfig":
        for label, axis in (("lambda", self.lam), ("h", self.h)):
            if axis is not None and len(axis) == 0:
                raise ValueError(f"sweep axis '{label}' is empty")
        if self.lam is None and self.h is None and self.starts is None:
            raise ValueError("sweep needs at least one axis (lambda, h or starts)")
        return self


class AnalysisConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    window_fraction: float = Field(default=0.1, gt=0, le=1)
    fit_window: float = Field(default=0.6, gt=0, le=1)
    snap_radius: float = Field(default=0.1, ge=0)
    min_points: int = Field(default=50, ge=2)


class ValidationConfig(BaseModel):
    """Tolerances for the `check` command."""

    model_config = ConfigDict(extra="forbid")

    samples: int = Field(default=100, ge=1)
    seed: int = 0
    oracle_tol: float = Field(default=1e-8, ge=0)
    fd_tol: float = Field(default=1e-6, ge=0)
    kl_points: int = Field(default=1000, ge=2)
    kl_tol: float = Field(default=1e-10, ge=0)
    sharpness_tol: float = Field(default=1e-6, ge=0)


class ExperimentConfig(BaseModel):
    """Top-level experiment document."""

    model_config = ConfigDict(extra="forbid")

    problem: ProblemConfig
    dynamics: DynamicsParams = Field(default_factory=DynamicsParams)
    initial: InitialConfig
    checks: List[CheckSpec] = Field(default_factory=list)
    outputs: OutputConfig = Field(default_factory=OutputConfig)
    sweep: Optional[SweepConfig] = None
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    validation: ValidationConfig = Field(default_factory=ValidationConfig)

    @model_validator(mode="after")
    def _dimensions(self) -> "ExperimentConfig":
        n = self.problem.dimension
        for label, vec in (("x0", self.initial.x0), ("v0", self.initial.v0)):
            if vec is not None and len(vec) != n:
                raise ValueError(f"{label} has dimension {len(vec)}, expected {n}")
        rnd = self.initial.random
        if rnd is not None and rnd.center is not None and len(rnd.center) != n:
            raise ValueError(f"random.center has dimension {len(rnd.center)}, expected {n}")
        if self.sweep is not None and self.sweep.starts is not None and rnd is None:
            raise ValueError("sweep.starts needs initial.random")
        return self

    def with_overrides(
        self,
        out: Optional[str] = None,
        workers: Optional[int] = None,
        seed: Optional[int] = None,
    ) -> "ExperimentConfig":
        """Apply CLI overrides; they take precedence over file values."""
        data = self.model_dump(by_alias=True, exclude_none=True)
        if out is not None:
            data["outputs"]["directory"] = out
        if workers is not None and "sweep" in data:
            data["sweep"]["workers"] = workers
        if seed is not None:
            if "random" in data["initial"]:
                data["initial"]["random"]["seed"] = seed
            data["validation"]["seed"] = seed
        return parse_config(data)

    def echo(self) -> Dict[str, Any]:
        """JSON-ready copy for reports."""
        return self.model_dump(mode="json", by_alias=True, exclude_none=True)


# ============================================================================
# Loading
# ============================================================================


def parse_config(data: Any) -> ExperimentConfig:
    """Validate a decoded document."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    try:
        return ExperimentConfig.model_validate(data)
    except pydantic.ValidationError as e:
        raise ConfigError(f"invalid config: {e}", details={"errors": e.errors()}) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Load an experiment config from YAML or JSON.

    Raises:
        ConfigError: Missing file, parse error or schema violation
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e
    config = parse_config(data)
    logger.debug(f"loaded config {path}: problem={config.problem.name}")
    return config


def initial_points(config: ExperimentConfig, count: Optional[int] = None) -> List[np.ndarray]:
    """
    Starting points in deterministic order.

    Random starts draw uniformly from the ball with a seeded generator, so the
    same seed always yields the same list.
    """
    n = config.problem.dimension
    init = config.initial
    if init.x0 is not None:
        return [np.asarray(init.x0, dtype=float)]
    rnd = init.random
    assert rnd is not None
    total = count if count is not None else rnd.count
    center = np.zeros(n) if rnd.center is None else np.asarray(rnd.center, dtype=float)
    rng = np.random.default_rng(rnd.seed)
    points = []
    for _ in range(total):
        direction = rng.standard_normal(n)
        direction /= np.linalg.norm(direction)
        radius = rnd.radius * rng.uniform() ** (1.0 / n)
        points.append(center + radius * direction)
    return points
