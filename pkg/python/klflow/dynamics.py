"""
Integrators for lam x' + v' + v + grad psi(x) = 0 with v in dphi(x).

Smooth mode resolves v' = Hess phi(x) x' and integrates the explicit field
(lam I + Hess phi(x)) x' = -(grad phi(x) + grad psi(x)) with RK4 or
Dormand-Prince 5(4). Prox mode uses a semi-implicit step that needs one
proximal map per step and keeps v in dphi(x) exactly.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse.linalg import LinearOperator, cg

from .exceptions import (
    CertificationError,
    DivergedError,
    KLFlowError,
    ModeError,
    SolveError,
    StepSizeUnderflowError,
)
from .monitors import StepDiagnostics, make_diagnostics
from .objective import ObjectiveSpec, as_vector, assemble_hessian, eval_objective, subgradient_residual
from .types import AdaptiveStep, ConvexMode, DynamicsParams, Termination

logger = logging.getLogger(__name__)

DENSE_SOLVE_MAX_DIM = 512
CG_TOL = 1e-12
CERTIFICATION_TOL = 1e-12
CERTIFICATION_PROBES = 8

# Dormand-Prince 5(4) tableau
DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
DP_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
# b5 - b4, local truncation error weights
DP_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    x: np.ndarray
    v: np.ndarray


@dataclass(eq=False)
class Trajectory:
    """Sampled states and per-step diagnostics of one run."""

    spec: ObjectiveSpec
    params: DynamicsParams
    samples: List[FlowState] = field(default_factory=list)
    diagnostics: List[StepDiagnostics] = field(default_factory=list)
    termination: Termination = Termination.T_MAX
    v0_source: str = "gradient"
    accepted_steps: int = 0
    rejected_steps: int = 0
    failure: Optional[str] = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    @property
    def xs(self) -> np.ndarray:
        return np.array([s.x for s in self.samples])

    @property
    def vs(self) -> np.ndarray:
        return np.array([s.v for s in self.samples])

    @property
    def final(self) -> FlowState:
        return self.samples[-1]

    @property
    def diverged(self) -> bool:
        return self.termination is Termination.DIVERGED


# ============================================================================
# Initial Velocity
# ============================================================================


def is_certified(spec: ObjectiveSpec, x: np.ndarray, v: np.ndarray, gamma: float = 1.0) -> bool:
    """v is in dphi(x) iff prox_{gamma phi}(x + gamma v) = x."""
    u = spec.convex.prox_map(gamma, x + gamma * v)
    return float(np.linalg.norm(u - x)) <= CERTIFICATION_TOL * (1.0 + float(np.linalg.norm(x)))


def resolve_initial_velocity(
    spec: ObjectiveSpec, x0: np.ndarray, v0_hint: Optional[Sequence[float]] = None
) -> Tuple[np.ndarray, str]:
    """Initial velocity and where it came from."""
    x0 = as_vector(spec, x0, what="x0")
    convex = spec.convex
    if spec.mode is ConvexMode.SMOOTH:
        if v0_hint is not None:
            logger.debug("smooth mode ignores the v0 hint; using grad phi(x0)")
        return convex.gradient(x0), "gradient"

    if v0_hint is not None:
        hint = as_vector(spec, v0_hint, what="v0")
        if not is_certified(spec, x0, hint):
            raise CertificationError(f"v0={hint.tolist()} is not a subgradient of phi at x0")
        return hint, "hint"

    candidates = []
    if convex.subgradient is not None:
        candidates.append(("subgradient", convex.subgradient))
    if convex.gradient is not None:
        candidates.append(("gradient", convex.gradient))
    for source, oracle in candidates:
        v0 = np.asarray(oracle(x0), dtype=float)
        if np.all(np.isfinite(v0)) and is_certified(spec, x0, v0):
            return v0, source
        logger.debug(f"v0 candidate from {source} failed certification")

    # g = 0: prox_{gamma phi}(x0) = x0 certifies 0 in dphi(x0)
    v0 = np.zeros(spec.n)
    if is_certified(spec, x0, v0):
        return v0, "prox_construction"
    raise CertificationError("no certified subgradient of phi at x0")


def initial_velocity(
    spec: ObjectiveSpec, x0: Sequence[float] | np.ndarray, v0_hint: Optional[Sequence[float]] = None
) -> np.ndarray:
    """v0 = grad phi(x0) in smooth mode, a certified subgradient in prox mode."""
    return resolve_initial_velocity(spec, np.asarray(x0, dtype=float), v0_hint)[0]


# ============================================================================
# Smooth Mode
# ============================================================================


def solve_damping(spec: ObjectiveSpec, lam: float, x: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (lam I + Hess phi(x)) d = rhs."""
    n = spec.n
    hvp = spec.convex.hvp
    if n <= DENSE_SOLVE_MAX_DIM:
        matrix = lam * np.eye(n) + assemble_hessian(hvp, x)
        try:
            return cho_solve(cho_factor(matrix), rhs)
        except LinAlgError as e:
            raise SolveError(f"{spec.convex.name}: damping matrix is not positive definite") from e

    op = LinearOperator((n, n), matvec=lambda d: lam * d + hvp(x, d), dtype=float)
    sol, info = cg(op, rhs, rtol=CG_TOL, atol=0.0, maxiter=10 * n)
    if info != 0:
        raise SolveError(f"conjugate gradients did not converge (info={info})")
    return sol


def velocity_field(spec: ObjectiveSpec, lam: float, x: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Field F(x) and the dissipation rate lam ||F||^2 + <F, Hess phi(x) F>.
    """
    if not np.all(np.isfinite(x)):
        raise DivergedError("non-finite state inside a Runge-Kutta stage")
    grad = spec.convex.gradient(x) + spec.smooth.gradient(x)
    if not np.all(np.isfinite(grad)):
        raise DivergedError("gradient overflow inside a Runge-Kutta stage")
    f = solve_damping(spec, lam, x, -grad)
    rate = lam * float(np.dot(f, f)) + float(np.dot(f, spec.convex.hvp(x, f)))
    return f, rate


def _rk4_step(spec: ObjectiveSpec, lam: float, x: np.ndarray, h: float) -> Tuple[np.ndarray, float]:
    k1, d1 = velocity_field(spec, lam, x)
    k2, d2 = velocity_field(spec, lam, x + 0.5 * h * k1)
    k3, d3 = velocity_field(spec, lam, x + 0.5 * h * k2)
    k4, d4 = velocity_field(spec, lam, x + h * k3)
    x_next = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    dissipated = h / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
    return x_next, dissipated


def _dopri_step(
    spec: ObjectiveSpec, lam: float, x: np.ndarray, h: float
) -> Tuple[np.ndarray, float, np.ndarray]:
    """Fifth-order solution, its dissipation and the embedded error vector."""
    ks: List[np.ndarray] = []
    ds: List[float] = []
    for row in DP_A:
        stage = x + h * sum((a * k for a, k in zip(row, ks)), np.zeros_like(x))
        k, d = velocity_field(spec, lam, stage)
        ks.append(k)
        ds.append(d)
    x_next = x + h * sum((b * k for b, k in zip(DP_B, ks)), np.zeros_like(x))
    dissipated = h * sum(b * d for b, d in zip(DP_B, ds))
    error = h * sum((e * k for e, k in zip(DP_E, ks)), np.zeros_like(x))
    return x_next, dissipated, error


def error_norm(error: np.ndarray, x: np.ndarray, x_next: np.ndarray, policy: AdaptiveStep) -> float:
    """RMS of the error scaled by abs_tol + rel_tol * max(|x|, |x_next|)."""
    scale = policy.abs_tol + policy.rel_tol * np.maximum(np.abs(x), np.abs(x_next))
    return float(np.sqrt(np.mean((error / scale) ** 2)))


def adapt_step(error_estimate: float, h: float, policy: AdaptiveStep) -> Tuple[bool, float]:
    """
    Embedded-pair step controller.

    `error_estimate` is already normalized by the tolerance, so the step is
    accepted iff it is <= 1. h_next = h * clamp(0.9 * err^(-1/5), 0.2, 5)
    clamped to [h_min, h_max].

    Raises:
        StepSizeUnderflowError: A rejected step would need h below h_min
    """
    accept = error_estimate <= 1.0
    if error_estimate == 0.0:
        factor = MAX_FACTOR
    else:
        factor = min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * error_estimate ** (-0.2)))
    h_next = h * factor
    if not accept and h_next < policy.h_min:
        raise StepSizeUnderflowError(h_next, policy.h_min)
    return accept, min(policy.h_max, max(policy.h_min, h_next))


def step_smooth(spec: ObjectiveSpec, params: DynamicsParams, s: FlowState, h: float) -> FlowState:
    """One classical RK4 step; v is recomputed as grad phi at the new point."""
    if spec.mode is not ConvexMode.SMOOTH:
        raise ModeError("step_smooth needs a smooth convex term")
    if not h > 0:
        raise KLFlowError(f"step must be positive, got {h}")
    x_next, _ = _rk4_step(spec, params.lam, s.x, h)
    return FlowState(t=s.t + h, x=x_next, v=spec.convex.gradient(x_next))


# ============================================================================
# Prox Mode
# ============================================================================


def _prox_update(
    spec: ObjectiveSpec, lam: float, x: np.ndarray, v: np.ndarray, h: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    grad_psi = spec.smooth.gradient(x)
    y = x + (v - h * grad_psi) / lam
    gamma = (1.0 + h) / lam
    x_next = spec.convex.prox_map(gamma, y)
    v_next = lam * (y - x_next) / (1.0 + h)
    return x_next, v_next, grad_psi


def step_prox(spec: ObjectiveSpec, params: DynamicsParams, s: FlowState, h: float) -> FlowState:
    """
    x+ = prox_{(1+h)/lam phi}(x + (v - h grad psi(x))/lam),
    v+ = (lam x + v - h grad psi(x) - lam x+)/(1+h).
    """
    if spec.mode is not ConvexMode.PROX:
        raise ModeError("step_prox needs a prox-mode convex term")
    if not h > 0:
        raise KLFlowError(f"step must be positive, got {h}")
    x_next, v_next, _ = _prox_update(spec, params.lam, s.x, s.v, h)
    return FlowState(t=s.t + h, x=x_next, v=v_next)


def prox_scheme_residual(
    lam: float, h: float, x: np.ndarray, v: np.ndarray, x_next: np.ndarray, v_next: np.ndarray,
    grad_psi: np.ndarray,
) -> float:
    """||lam (x+ - x) + (1+h) v+ - v + h grad psi(x)||."""
    return float(np.linalg.norm(lam * (x_next - x) + (1.0 + h) * v_next - v + h * grad_psi))


def certification_slack(
    spec: ObjectiveSpec, x: np.ndarray, v: np.ndarray, probes: np.ndarray
) -> float:
    """Smallest relative slack of phi(z) >= phi(x) + <v, z - x> over probe points."""
    value = float(spec.convex.value(x))
    scale = 1.0 + float(np.linalg.norm(x))
    worst = math.inf
    for direction in probes:
        z = x + scale * direction
        value_z = float(spec.convex.value(z))
        slack = value_z - value - float(np.dot(v, z - x))
        worst = min(worst, slack / (1.0 + abs(value_z) + abs(value)))
    return worst


# ============================================================================
# Driver
# ============================================================================


def integrate(
    spec: ObjectiveSpec,
    params: DynamicsParams,
    x0: Sequence[float] | np.ndarray,
    v0_hint: Optional[Sequence[float]] = None,
) -> Trajectory:
    """
    Integrate from x0 until a stop condition.

    Divergence is recorded as termination DIVERGED; invalid initial data
    raises.
    """
    x = as_vector(spec, x0, what="x0")
    if not np.all(np.isfinite(x)):
        raise KLFlowError("x0 must be finite")
    v, source = resolve_initial_velocity(spec, x, v0_hint)
    obj = eval_objective(spec, x)
    if not math.isfinite(obj):
        raise KLFlowError("x0 is outside the domain of phi")

    smooth = spec.mode is ConvexMode.SMOOTH
    policy = params.step_policy if params.adaptive else None
    if policy is not None and not smooth:
        logger.info("prox mode runs the fixed-step scheme; adaptive policy ignored")
        policy = None
    lam = params.lam
    probes = np.random.default_rng(0).standard_normal((CERTIFICATION_PROBES, spec.n))

    traj = Trajectory(spec=spec, params=params, v0_source=source)
    traj.samples.append(FlowState(t=0.0, x=x, v=v))
    t = 0.0
    h = params.h
    stationarity = subgradient_residual(spec, x, v)

    if stationarity <= params.stop_grad_tol:
        traj.termination = Termination.GRAD_TOL
        logger.info(f"{spec.name}: x0 already stationary ({stationarity:.3e})")
        return traj

    termination = Termination.T_MAX
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        try:
            while params.t_max - t > 1e-9 * h:
                if traj.accepted_steps >= params.max_steps:
                    logger.warning(f"{spec.name}: max_steps={params.max_steps} reached at t={t:.6g}")
                    break
                h_try = min(h, params.t_max - t)
                scheme_residual = cert_slack = dissipated = None

                if smooth and policy is not None:
                    x_next, dissipated, error = _dopri_step(spec, lam, x, h_try)
                    if not np.all(np.isfinite(x_next)):
                        raise DivergedError(f"non-finite state at t={t:.6g}")
                    accept, h = adapt_step(error_norm(error, x, x_next, policy), h_try, policy)
                    if not accept:
                        traj.rejected_steps += 1
                        logger.debug(f"rejected step h={h_try:.3e} at t={t:.6g}, retry h={h:.3e}")
                        continue
                    v_next = spec.convex.gradient(x_next)
                elif smooth:
                    x_next, dissipated = _rk4_step(spec, lam, x, h_try)
                    v_next = spec.convex.gradient(x_next)
                else:
                    x_next, v_next, grad_psi = _prox_update(spec, lam, x, v, h_try)

                if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(v_next))):
                    raise DivergedError(f"non-finite state at t={t:.6g}")
                if not smooth:
                    scheme_residual = prox_scheme_residual(lam, h_try, x, v, x_next, v_next, grad_psi)
                    cert_slack = certification_slack(spec, x_next, v_next, probes)

                t_next = params.t_max if params.t_max - (t + h_try) <= 1e-9 * h_try else t + h_try
                diag = make_diagnostics(
                    spec, lam, x, v, x_next, v_next, t_next, h_try, obj, stationarity,
                    dissipated=dissipated,
                    scheme_residual=scheme_residual,
                    certification_slack=cert_slack,
                )
                if not (math.isfinite(diag.obj) and math.isfinite(diag.stationarity)):
                    raise DivergedError(f"non-finite objective at t={t_next:.6g}")

                traj.diagnostics.append(diag)
                traj.accepted_steps += 1
                x, v, t = x_next, v_next, t_next
                obj, stationarity = diag.obj, diag.stationarity
                if traj.accepted_steps % params.sample_stride == 0:
                    traj.samples.append(FlowState(t=t, x=x, v=v))

                if stationarity <= params.stop_grad_tol:
                    termination = Termination.GRAD_TOL
                    break
                if max(diag.step_norm_x, diag.step_norm_v) <= params.stop_step_tol:
                    termination = Termination.STEP_TOL
                    break
        except DivergedError as e:
            termination = Termination.DIVERGED
            traj.failure = str(e)
            logger.warning(f"{spec.name}: diverged ({e})")

    if traj.samples[-1].t != t:
        traj.samples.append(FlowState(t=t, x=x, v=v))
    traj.termination = termination
    logger.info(
        f"{spec.name}: {termination.value} at t={t:.6g} after {traj.accepted_steps} steps "
        f"({traj.rejected_steps} rejected, {len(traj.samples)} samples)"
    )
    return traj
