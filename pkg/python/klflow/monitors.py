"""
Discrete residuals of the flow's energy identities and inequalities.

Per-step quantities are collected into StepDiagnostics while integrating;
the trajectory-level functions reduce them to worst values.
"""

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .exceptions import InsufficientSamplesError, ModeError
from .objective import KLProfile, ObjectiveSpec, eval_objective, subgradient_residual
from .types import ConvexMode, KLCheckReport

if TYPE_CHECKING:
    from .dynamics import Trajectory

logger = logging.getLogger(__name__)

KL_INNER_FRACTION = 0.2


@dataclass(frozen=True)
class StepDiagnostics:
    """Monitored quantities for one accepted step from t - h to t."""

    t: float
    h: float
    obj: float
    energy_residual: float
    descent: float
    cross_term: float
    cocoercivity_slack: Optional[float]
    forcing_slack: float
    stationarity: float
    prev_stationarity: float
    step_norm_x: float
    step_norm_v: float
    # prox scheme only
    scheme_residual: Optional[float] = None
    certification_slack: Optional[float] = None

    @property
    def step_norms(self) -> Tuple[float, float]:
        return (self.step_norm_x, self.step_norm_v)

    @property
    def dot_xv(self) -> float:
        """<dx, dv> recovered from the cross term."""
        return self.cross_term * self.h


# ============================================================================
# Per-Step Residuals
# ============================================================================


def energy_identity_residual(
    obj_next: float,
    obj: float,
    dx: np.ndarray,
    dv: np.ndarray,
    h: float,
    lam: float,
    dissipated: Optional[float] = None,
) -> float:
    """
    Discrete d/dt Phi + lam ||x'||^2 + <x', v'>.

    With `dissipated` (the integral of lam ||x'||^2 + <x', v'> over the step,
    carried by the integrator) the residual is accurate to the integrator's
    order; otherwise forward differences are used.
    """
    if dissipated is not None:
        return (obj_next - obj + dissipated) / h
    xdot = dx / h
    vdot = dv / h
    return (obj_next - obj) / h + lam * float(np.dot(xdot, xdot)) + float(np.dot(xdot, vdot))


def cocoercivity_check(dx: np.ndarray, dv: np.ndarray, rho: float) -> float:
    """<dx, dv> - rho ||dv||^2; rho = 0 gives plain monotonicity."""
    return float(np.dot(dx, dv)) - rho * float(np.dot(dv, dv))


def forcing_slack(
    stationarity_next: float,
    stationarity: float,
    dx: np.ndarray,
    dv: np.ndarray,
    h: float,
    lipschitz: float,
    lam: float,
) -> float:
    """d/dt(1/2 s^2) + 3/4 ||v'||^2 - L(lam + L) ||x'||^2, expected <= 0."""
    growth = 0.5 * (stationarity_next**2 - stationarity**2) / h
    vdot2 = float(np.dot(dv, dv)) / (h * h)
    xdot2 = float(np.dot(dx, dx)) / (h * h)
    return growth + 0.75 * vdot2 - lipschitz * (lam + lipschitz) * xdot2


def make_diagnostics(
    spec: ObjectiveSpec,
    lam: float,
    x: np.ndarray,
    v: np.ndarray,
    x_next: np.ndarray,
    v_next: np.ndarray,
    t_next: float,
    h: float,
    obj: float,
    stationarity: float,
    dissipated: Optional[float] = None,
    scheme_residual: Optional[float] = None,
    certification_slack: Optional[float] = None,
) -> StepDiagnostics:
    """Build the diagnostics row for the step (x, v) -> (x_next, v_next)."""
    dx = x_next - x
    dv = v_next - v
    obj_next = eval_objective(spec, x_next)
    stat_next = subgradient_residual(spec, x_next, v_next)
    smooth = spec.mode is ConvexMode.SMOOTH
    return StepDiagnostics(
        t=t_next,
        h=h,
        obj=obj_next,
        energy_residual=energy_identity_residual(obj_next, obj, dx, dv, h, lam, dissipated),
        descent=obj_next - obj,
        cross_term=float(np.dot(dx, dv)) / h,
        cocoercivity_slack=cocoercivity_check(dx, dv, spec.convex.inv_lipschitz) if smooth else None,
        forcing_slack=forcing_slack(stat_next, stationarity, dx, dv, h, spec.smooth.lipschitz_grad, lam),
        stationarity=stat_next,
        prev_stationarity=stationarity,
        step_norm_x=float(np.linalg.norm(dx)) / h,
        step_norm_v=float(np.linalg.norm(dv)) / h,
        scheme_residual=scheme_residual,
        certification_slack=certification_slack,
    )


# ============================================================================
# Trajectory Checks
# ============================================================================


def forcing_inequality_check(
    diagnostics: Sequence[StepDiagnostics], lipschitz: float, lam: float
) -> float:
    """Max positive part of the forcing slack, recomputed for the given L and lambda."""
    worst = 0.0
    for d in diagnostics:
        growth = 0.5 * (d.stationarity**2 - d.prev_stationarity**2) / d.h
        slack = growth + 0.75 * d.step_norm_v**2 - lipschitz * (lam + lipschitz) * d.step_norm_x**2
        worst = max(worst, slack)
    return worst


def cocoercivity_min(diagnostics: Sequence[StepDiagnostics]) -> Optional[float]:
    slacks = [d.cocoercivity_slack for d in diagnostics if d.cocoercivity_slack is not None]
    return min(slacks) if slacks else None


def cross_term_min(diagnostics: Sequence[StepDiagnostics]) -> Optional[float]:
    """Smallest <dx, dv> over the run."""
    return min((d.dot_xv for d in diagnostics), default=None)


def energy_residual_max(diagnostics: Sequence[StepDiagnostics]) -> Optional[float]:
    return max((abs(d.energy_residual) for d in diagnostics), default=None)


def prox_exactness(diagnostics: Sequence[StepDiagnostics]) -> Tuple[Optional[float], Optional[float]]:
    """Worst discrete-equation residual and worst certification violation."""
    residuals = [d.scheme_residual for d in diagnostics if d.scheme_residual is not None]
    slacks = [d.certification_slack for d in diagnostics if d.certification_slack is not None]
    return (
        max(residuals) if residuals else None,
        max(0.0, -min(slacks)) if slacks else None,
    )


def monotonicity_check(trajectory: "Trajectory") -> float:
    """Largest Phi increase between consecutive samples; 0 for a single sample."""
    values = [eval_objective(trajectory.spec, s.x) for s in trajectory.samples]
    if len(values) < 2:
        return 0.0
    return float(np.max(np.diff(values)))


def vanishing_check(trajectory: "Trajectory", min_samples: int = 10) -> Tuple[float, float]:
    """
    Tail stationarity and tail speed over the final 10% of samples.

    A run that stopped at its first sample returns the initial residual and
    zero speed.
    """
    samples = trajectory.samples
    spec = trajectory.spec
    if len(samples) == 1:
        return subgradient_residual(spec, samples[0].x, samples[0].v), 0.0
    if len(samples) < min_samples:
        raise InsufficientSamplesError(min_samples, len(samples))
    start = len(samples) - max(1, math.ceil(0.1 * len(samples)))
    tail_stat = max(subgradient_residual(spec, s.x, s.v) for s in samples[start:])
    tail_step = 0.0
    for prev, cur in zip(samples[max(start, 1) - 1 :], samples[max(start, 1) :]):
        dt = cur.t - prev.t
        speed = (float(np.linalg.norm(cur.x - prev.x)) + float(np.linalg.norm(cur.v - prev.v))) / dt
        tail_step = max(tail_step, speed)
    return tail_stat, tail_step


def integrability_summary(trajectory: "Trajectory") -> Dict[str, float]:
    """Discrete L2 norms of x', v', v + grad psi, L1 norm of <x', v'>, and path length."""
    samples = trajectory.samples
    spec = trajectory.spec
    xdot2 = vdot2 = stat2 = cross = length = 0.0
    for prev, cur in zip(samples[:-1], samples[1:]):
        dt = cur.t - prev.t
        dx = cur.x - prev.x
        dv = cur.v - prev.v
        xdot2 += float(np.dot(dx, dx)) / dt
        vdot2 += float(np.dot(dv, dv)) / dt
        stat2 += subgradient_residual(spec, prev.x, prev.v) ** 2 * dt
        cross += abs(float(np.dot(dx, dv))) / dt
        length += float(np.linalg.norm(dx))
    return {
        "l2_xdot": math.sqrt(xdot2),
        "l2_vdot": math.sqrt(vdot2),
        "l2_stationarity": math.sqrt(stat2),
        "l1_cross_term": cross,
        "path_length": length,
    }


# ============================================================================
# KL Inequality
# ============================================================================


def kl_grid(profile: KLProfile, n: int, points: int = 1000, seed: int = 0) -> np.ndarray:
    """
    Points around the critical point at log-spaced radii in [1e-3, 1) * epsilon.

    One dimension alternates sides; higher dimensions use random unit directions.
    """
    radii = profile.radius * np.logspace(-3.0, 0.0, points, endpoint=False)
    if n == 1:
        directions = np.where(np.arange(points) % 2 == 0, 1.0, -1.0).reshape(-1, 1)
    else:
        rng = np.random.default_rng(seed)
        directions = rng.standard_normal((points, n))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return profile.critical_point + radii[:, None] * directions


def kl_inequality_check(
    spec: ObjectiveSpec,
    profile: KLProfile,
    grid: Optional[np.ndarray] = None,
    velocities: Optional[np.ndarray] = None,
    points: int = 1000,
    seed: int = 0,
) -> KLCheckReport:
    """
    Check |Phi(x) - Phi(x_bar)|^theta <= C ||x*|| on a grid.

    In smooth mode x* = grad Phi(x). In prox mode the grid must be visited
    points with their certified velocities, and x* = v + grad psi(x).
    Besides the pointwise margin, the exponent is estimated from the
    innermost shell; a declared theta above the estimate shows up as a
    positive sharpness gap.
    """
    if spec.mode is ConvexMode.PROX and velocities is None:
        raise ModeError("prox mode KL check needs visited points with their velocities")
    if grid is None:
        grid = kl_grid(profile, spec.n, points, seed)
    grid = np.atleast_2d(np.asarray(grid, dtype=float))

    dists, gaps, norms = [], [], []
    for i, x in enumerate(grid):
        dist = float(np.linalg.norm(x - profile.critical_point))
        gap = eval_objective(spec, x) - profile.critical_value
        if not (0.0 < dist < profile.radius and 0.0 < gap < profile.level_gap):
            continue
        if velocities is not None:
            slope = subgradient_residual(spec, x, velocities[i])
        else:
            slope = float(np.linalg.norm(spec.convex.gradient(x) + spec.smooth.gradient(x)))
        dists.append(dist)
        gaps.append(gap)
        norms.append(slope)
    if not gaps:
        raise InsufficientSamplesError(1, 0, what="grid points inside the KL neighbourhood")

    gap_arr = np.asarray(gaps)
    norm_arr = np.asarray(norms)
    lhs = gap_arr**profile.theta
    margins = lhs - profile.constant * norm_arr
    with np.errstate(divide="ignore"):
        ratios = np.where(norm_arr > 0, lhs / norm_arr, np.inf)

    theta_emp = None
    sharpness_gap = 0.0
    order = np.argsort(dists)
    inner = order[: max(2, int(KL_INNER_FRACTION * len(order)))]
    inner = inner[norm_arr[inner] > 0]
    if len(inner) >= 2 and np.ptp(np.log(gap_arr[inner])) > 0:
        fit = stats.linregress(np.log(gap_arr[inner]), np.log(norm_arr[inner]))
        theta_emp = float(fit.slope)
        sharpness_gap = max(0.0, profile.theta - theta_emp)

    report = KLCheckReport(
        theta=profile.theta,
        constant=profile.constant,
        points_total=len(grid),
        points_used=len(gaps),
        max_margin=float(np.max(margins)),
        max_violation=max(0.0, float(np.max(margins))),
        minimal_constant=float(np.max(ratios)),
        theta_empirical=theta_emp,
        sharpness_gap=sharpness_gap,
    )
    logger.debug(f"KL check on {spec.name}: {report}")
    return report


def kl_desingularizer_check(
    spec: ObjectiveSpec,
    profile: KLProfile,
    xs: Sequence[np.ndarray],
    vs: Sequence[np.ndarray],
) -> Optional[float]:
    """
    Smallest varphi'(Phi(x) - Phi(x_bar)) * ||v + grad psi(x)|| over points
    inside the KL neighbourhood; >= 1 when the KL inequality holds there.
    None when no point qualifies.
    """
    worst: Optional[float] = None
    for x, v in zip(xs, vs):
        dist = float(np.linalg.norm(x - profile.critical_point))
        gap = eval_objective(spec, x) - profile.critical_value
        if not (0.0 < dist < profile.radius and 0.0 < gap < profile.level_gap):
            continue
        value = profile.desingularizer_derivative(gap) * subgradient_residual(spec, x, v)
        worst = value if worst is None else min(worst, value)
    return worst


def observed_lipschitz(trajectory: "Trajectory") -> float:
    """Largest ||grad psi(x_{k+1}) - grad psi(x_k)|| / ||x_{k+1} - x_k|| along the samples."""
    grad = trajectory.spec.smooth.gradient
    worst = 0.0
    for prev, cur in zip(trajectory.samples[:-1], trajectory.samples[1:]):
        dist = float(np.linalg.norm(cur.x - prev.x))
        if dist > 0:
            worst = max(worst, float(np.linalg.norm(grad(cur.x) - grad(prev.x))) / dist)
    return worst
