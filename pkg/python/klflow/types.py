"""
Type definitions for klflow.

Provides Pydantic models for dynamics parameters and for everything that is
serialized into run reports.
"""

from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator


# ============================================================================
# Enumerations
# ============================================================================


class ConvexMode(str, Enum):
    """How the convex term enters the dynamics."""

    SMOOTH = "smooth"
    PROX = "prox"


class Termination(str, Enum):
    """Why an integration stopped."""

    GRAD_TOL = "GRAD_TOL"
    STEP_TOL = "STEP_TOL"
    T_MAX = "T_MAX"
    DIVERGED = "DIVERGED"


class RateRegime(str, Enum):
    """Decay regimes of the distance to the limit."""

    FINITE = "FINITE"
    EXPONENTIAL = "EXPONENTIAL"
    POLYNOMIAL = "POLYNOMIAL"
    UNDETERMINED = "UNDETERMINED"


# ============================================================================
# Dynamics Parameters
# ============================================================================


class FixedStep(BaseModel):
    """Constant step size (RK4 in smooth mode)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["fixed"] = "fixed"


class AdaptiveStep(BaseModel):
    """Embedded-pair step control (Dormand-Prince 5(4) in smooth mode)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["adaptive"] = "adaptive"
    rel_tol: float = Field(default=1e-8, gt=0)
    abs_tol: float = Field(default=1e-8, gt=0)
    h_min: float = Field(default=1e-10, gt=0)
    h_max: float = Field(default=1.0, gt=0)


StepPolicy = Union[FixedStep, AdaptiveStep]


class DynamicsParams(BaseModel):
    """Damping parameter, step policy and stopping tolerances."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    lam: float = Field(default=1.0, gt=0, alias="lambda")
    h: float = Field(default=1e-2, gt=0)
    step_policy: StepPolicy = Field(default_factory=FixedStep, discriminator="kind")
    t_max: float = Field(default=100.0, gt=0)
    stop_grad_tol: float = Field(default=1e-10, ge=0)
    stop_step_tol: float = Field(default=1e-12, ge=0)
    sample_stride: int = Field(default=1, ge=1)
    max_steps: int = Field(default=5_000_000, ge=1)

    @model_validator(mode="after")
    def _check_adaptive_bounds(self) -> "DynamicsParams":
        policy = self.step_policy
        if isinstance(policy, AdaptiveStep) and not (policy.h_min <= self.h <= policy.h_max):
            raise ValueError(
                f"adaptive policy requires h_min <= h <= h_max "
                f"(got {policy.h_min} <= {self.h} <= {policy.h_max})"
            )
        return self

    @property
    def adaptive(self) -> bool:
        return isinstance(self.step_policy, AdaptiveStep)


# ============================================================================
# Analysis Results
# ============================================================================


class LimitSetEstimate(BaseModel):
    """Final-window estimate of the limit of a trajectory."""

    x_bar: List[float]
    v_bar: List[float]
    stationarity: float
    objective_value: float
    cluster_radius: float
    # Point the rate fit is measured against (declared critical point or x_bar).
    x_ref: List[float]
    v_ref: List[float]
    snapped: bool = False


class RateEstimate(BaseModel):
    """Fitted decay regime of ||x_k - x_ref|| + ||v_k - v_ref||."""

    regime: RateRegime
    coefficients: Tuple[float, float] = (0.0, 0.0)
    fit_window: Tuple[float, float] = (0.0, 0.0)
    fit_r2: float = Field(default=0.0, ge=0.0, le=1.0)
    theta_implied: Optional[float] = None
    exponent: Optional[float] = None
    r2_exponential: Optional[float] = None
    r2_polynomial: Optional[float] = None
    arrival_time: Optional[float] = None
    sigma_samples: List[Tuple[float, float]] = Field(default_factory=list)


class ObjectiveLimitReport(BaseModel):
    """Tail behaviour of objective values over one or more runs."""

    limit_values: List[float]
    oscillations: List[float]
    max_oscillation: float
    cross_run_spread: float


# ============================================================================
# Check Reports
# ============================================================================


class OracleReport(BaseModel):
    """Worst violation per oracle invariant over random samples."""

    samples: int
    seed: int
    violations: Dict[str, float]
    fd_order: Optional[float] = None
    max_lipschitz_ratio: float = 0.0

    @property
    def worst(self) -> float:
        return max(self.violations.values(), default=0.0)


class KLCheckReport(BaseModel):
    """Grid check of the Lojasiewicz inequality at a critical point."""

    theta: float
    constant: float
    points_total: int
    points_used: int
    max_margin: float
    max_violation: float
    minimal_constant: float
    theta_empirical: Optional[float] = None
    sharpness_gap: float = 0.0

    @property
    def worst(self) -> float:
        return max(self.max_violation, self.sharpness_gap)


class CheckResult(BaseModel):
    """Outcome of one enforced monitor check."""

    name: str
    passed: bool
    worst: Optional[float]
    tolerance: float
    detail: Optional[str] = None


class RunReport(BaseModel):
    """Everything a single run produces apart from the trajectory itself."""

    config: Dict[str, Any]
    problem: str
    mode: ConvexMode
    termination: Termination
    steps: int
    rejected_steps: int = 0
    sample_count: int
    v0_source: str
    limit: Optional[LimitSetEstimate] = None
    rate: Optional[RateEstimate] = None
    rate_error: Optional[str] = None
    known_theta: Optional[float] = None
    predicted_regime: Optional[RateRegime] = None
    predicted_exponent: Optional[float] = None
    monitors: Dict[str, Optional[float]] = Field(default_factory=dict)
    checks: List[CheckResult] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)
    wall_clock_seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)
