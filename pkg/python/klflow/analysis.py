"""
Post-processing of trajectories: limit estimates, sigma tails and decay-rate
classification.
"""

import logging
import math
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .dynamics import Trajectory
from .exceptions import DivergedError, InsufficientSamplesError, KLFlowError
from .objective import eval_objective, subgradient_residual
from .types import ConvexMode, LimitSetEstimate, ObjectiveLimitReport, RateEstimate, RateRegime

logger = logging.getLogger(__name__)

FINITE_TOL = 1e-13
FINITE_MIN_TAIL = 3
FIT_WINDOW = 0.6
FIT_MIN_POINTS = 50
FIT_MIN_R2 = 0.99
SIGMA_SAMPLE_POINTS = 200
HALF_TOL = 1e-12


def _require_converged(traj: Trajectory) -> None:
    if traj.diverged:
        raise DivergedError(f"trajectory diverged: {traj.failure}")


# ============================================================================
# Limit Set
# ============================================================================


def estimate_limit(
    traj: Trajectory, window_fraction: float = 0.1, snap_radius: float = 0.1
) -> LimitSetEstimate:
    """
    Final sample as the limit representative.

    The reference limit used for rate fits is the nearest declared critical
    point within `snap_radius` of the final sample, or the final sample itself.
    """
    _require_converged(traj)
    if not 0.0 < window_fraction <= 1.0:
        raise KLFlowError(f"window_fraction must lie in (0, 1], got {window_fraction}")
    spec = traj.spec
    final = traj.final
    x_bar, v_bar = final.x, final.v

    count = max(1, math.ceil(window_fraction * len(traj.samples)))
    cluster_radius = max(float(np.linalg.norm(s.x - x_bar)) for s in traj.samples[-count:])

    x_ref, v_ref, snapped = x_bar, v_bar, False
    candidates = [(float(np.linalg.norm(p - x_bar)), i) for i, p in enumerate(spec.declared_points)]
    if candidates:
        dist, idx = min(candidates)
        if dist <= snap_radius:
            x_ref = spec.declared_points[idx]
            if spec.mode is ConvexMode.SMOOTH:
                v_ref = spec.convex.gradient(x_ref)
            else:
                v_ref = -spec.smooth.gradient(x_ref)
            snapped = True

    return LimitSetEstimate(
        x_bar=x_bar.tolist(),
        v_bar=v_bar.tolist(),
        stationarity=subgradient_residual(spec, x_bar, v_bar),
        objective_value=eval_objective(spec, x_bar),
        cluster_radius=cluster_radius,
        x_ref=np.asarray(x_ref).tolist(),
        v_ref=np.asarray(v_ref).tolist(),
        snapped=snapped,
    )


# ============================================================================
# Sigma Tail
# ============================================================================


def _increments(traj: Trajectory) -> np.ndarray:
    xs, vs = traj.xs, traj.vs
    return np.linalg.norm(np.diff(xs, axis=0), axis=1) + np.linalg.norm(np.diff(vs, axis=0), axis=1)


def sigma_profile(traj: Trajectory) -> np.ndarray:
    """sigma_k for every sample; the last entry is 0."""
    _require_converged(traj)
    inc = _increments(traj)
    return np.append(np.cumsum(inc[::-1])[::-1], 0.0)


def sigma_tail(traj: Trajectory, k: int) -> float:
    """sum_{j >= k} ||x_{j+1} - x_j|| + ||v_{j+1} - v_j||."""
    _require_converged(traj)
    if not 0 <= k < len(traj.samples):
        raise KLFlowError(f"sample index {k} out of range [0, {len(traj.samples)})")
    return float(np.sum(_increments(traj)[k:]))


def sigma_bound_violation(traj: Trajectory) -> float:
    """max_k ||x_k - x_bar|| + ||v_k - v_bar|| - sigma_k against the final sample."""
    sigma = sigma_profile(traj)
    final = traj.final
    dist = np.linalg.norm(traj.xs - final.x, axis=1) + np.linalg.norm(traj.vs - final.v, axis=1)
    return float(np.max(dist - sigma))


# ============================================================================
# Rate Classification
# ============================================================================


def theta_from_exponent(q: float) -> float:
    """Invert q = (1 - theta)/(2 theta - 1)."""
    return (1.0 + q) / (1.0 + 2.0 * q)


def predicted_regime(theta: float) -> Tuple[RateRegime, Optional[float]]:
    """Regime and, for the polynomial case, the decay exponent of a Lojasiewicz exponent."""
    if not 0.0 < theta < 1.0:
        raise KLFlowError(f"theta must lie in (0, 1), got {theta}")
    if math.isclose(theta, 0.5, rel_tol=0.0, abs_tol=HALF_TOL):
        return RateRegime.EXPONENTIAL, None
    if theta < 0.5:
        return RateRegime.FINITE, None
    return RateRegime.POLYNOMIAL, (1.0 - theta) / (2.0 * theta - 1.0)


def _r2(fit: Any) -> float:
    r = float(fit.rvalue)
    return 0.0 if math.isnan(r) else r * r


def _clip_unit(value: float) -> float:
    return min(1.0, max(0.0, value))


def distance_profile(traj: Trajectory, x_ref: Sequence[float], v_ref: Sequence[float]) -> np.ndarray:
    """d_k = ||x_k - x_ref|| + ||v_k - v_ref||."""
    x_ref = np.asarray(x_ref, dtype=float)
    v_ref = np.asarray(v_ref, dtype=float)
    return np.linalg.norm(traj.xs - x_ref, axis=1) + np.linalg.norm(traj.vs - v_ref, axis=1)


def _thin(times: np.ndarray, values: np.ndarray, points: int) -> List[Tuple[float, float]]:
    if len(times) <= points:
        idx = np.arange(len(times))
    else:
        idx = np.unique(np.linspace(0, len(times) - 1, points).astype(int))
    return [(float(times[i]), float(values[i])) for i in idx]


def classify_rate(
    traj: Trajectory,
    x_ref: Sequence[float],
    v_ref: Sequence[float],
    window: float = FIT_WINDOW,
    min_points: int = FIT_MIN_POINTS,
    min_r2: float = FIT_MIN_R2,
) -> RateEstimate:
    """
    Fit the decay of d_k = ||x_k - x_ref|| + ||v_k - v_ref||.

    FINITE needs an exact-arrival tail (x within 1e-13) before t_max covering
    at least 3 samples and 10% of the run. Otherwise log-linear and log-log
    fits over the last `window` of the time span compete; the best r^2 among
    fits with r^2 >= min_r2 and positive rate wins.
    """
    _require_converged(traj)
    times = traj.times
    d = distance_profile(traj, x_ref, v_ref)
    sigma = sigma_profile(traj)
    sigma_samples = _thin(times, sigma, SIGMA_SAMPLE_POINTS)

    x_dist = np.linalg.norm(traj.xs - np.asarray(x_ref, dtype=float), axis=1)
    off = np.nonzero(x_dist > FINITE_TOL)[0]
    tail_start = 0 if len(off) == 0 else int(off[-1]) + 1
    tail_len = len(times) - tail_start
    if tail_len >= FINITE_MIN_TAIL and tail_len >= 0.1 * len(times):
        arrival = float(times[tail_start])
        if arrival < traj.params.t_max:
            logger.debug(f"finite-time arrival at t={arrival:.6g}")
            return RateEstimate(
                regime=RateRegime.FINITE,
                coefficients=(float(d[0]), arrival),
                fit_window=(float(times[0]), arrival),
                fit_r2=1.0,
                arrival_time=arrival,
                sigma_samples=sigma_samples,
            )

    t_start = times[0] + (1.0 - window) * (times[-1] - times[0])
    mask = (times >= t_start) & (d > 0)
    if int(mask.sum()) < min_points:
        raise InsufficientSamplesError(min_points, int(mask.sum()), what="samples in the fit window")
    t_fit, log_d = times[mask], np.log(d[mask])

    candidates = []
    exp_fit = stats.linregress(t_fit, log_d)
    r2_exp = _r2(exp_fit)
    if r2_exp >= min_r2 and exp_fit.slope < 0:
        candidates.append((r2_exp, 1, RateRegime.EXPONENTIAL, math.exp(exp_fit.intercept), -exp_fit.slope))

    r2_poly: Optional[float] = None
    positive = t_fit > 0
    if int(positive.sum()) >= min_points:
        poly_fit = stats.linregress(np.log(t_fit[positive]), log_d[positive])
        r2_poly = _r2(poly_fit)
        if r2_poly >= min_r2 and poly_fit.slope < 0:
            candidates.append(
                (r2_poly, 0, RateRegime.POLYNOMIAL, math.exp(poly_fit.intercept), -poly_fit.slope)
            )

    fit_window = (float(t_fit[0]), float(t_fit[-1]))
    if not candidates:
        return RateEstimate(
            regime=RateRegime.UNDETERMINED,
            fit_window=fit_window,
            fit_r2=_clip_unit(max(r2_exp, r2_poly or 0.0)),
            r2_exponential=r2_exp,
            r2_polynomial=r2_poly,
            sigma_samples=sigma_samples,
        )

    r2, _, regime, a, b = max(candidates, key=lambda c: (c[0], c[1]))
    polynomial = regime is RateRegime.POLYNOMIAL
    return RateEstimate(
        regime=regime,
        coefficients=(a, b),
        fit_window=fit_window,
        fit_r2=_clip_unit(r2),
        theta_implied=theta_from_exponent(b) if polynomial else None,
        exponent=b if polynomial else None,
        r2_exponential=r2_exp,
        r2_polynomial=r2_poly,
        sigma_samples=sigma_samples,
    )


# ============================================================================
# Objective Limit and Constants
# ============================================================================


def objective_limit_check(
    trajectories: Sequence[Trajectory], window_fraction: float = 0.1
) -> ObjectiveLimitReport:
    """Tail oscillation and limit value of Phi per run, plus the spread across runs."""
    if not trajectories:
        raise InsufficientSamplesError(1, 0, what="trajectories")
    limits, oscillations = [], []
    for traj in trajectories:
        count = max(1, math.ceil(window_fraction * len(traj.samples)))
        values = [eval_objective(traj.spec, s.x) for s in traj.samples[-count:]]
        limits.append(values[-1])
        oscillations.append(max(values) - min(values))
    return ObjectiveLimitReport(
        limit_values=limits,
        oscillations=oscillations,
        max_oscillation=max(oscillations),
        cross_run_spread=max(limits) - min(limits),
    )


def alpha_bound(lam: float, rho: float) -> float:
    """Largest alpha with 2 alpha max(lam, 1) <= min(lam, rho)."""
    if not (lam > 0 and rho > 0):
        raise KLFlowError(f"lam and rho must be positive, got {lam}, {rho}")
    return min(lam, rho) / (2.0 * max(lam, 1.0))


def alpha_estimate(traj: Trajectory) -> Optional[float]:
    """
    Smallest (lam a^2 + rho b^2) / ((lam a + b)(a + b)) over steps, with
    a = ||x'|| and b = ||v'||. None without rho or without motion.
    """
    rho = traj.spec.convex.inv_lipschitz
    if traj.spec.mode is not ConvexMode.SMOOTH or rho is None:
        return None
    lam = traj.params.lam
    best: Optional[float] = None
    for diag in traj.diagnostics:
        a, b = diag.step_norm_x, diag.step_norm_v
        if a + b <= 0:
            continue
        value = (lam * a * a + rho * b * b) / ((lam * a + b) * (a + b))
        best = value if best is None else min(best, value)
    return best


def alpha_prime_estimate(traj: Trajectory, theta: float, window: float = FIT_WINDOW) -> Optional[float]:
    """Smallest (||x'|| + ||v'||) / sigma^(theta/(1-theta)) over the fit window."""
    if not 0.0 < theta < 1.0:
        raise KLFlowError(f"theta must lie in (0, 1), got {theta}")
    sigma = sigma_profile(traj)
    times = traj.times
    if len(times) < 2:
        return None
    speed = _increments(traj) / np.diff(times)
    t_start = times[0] + (1.0 - window) * (times[-1] - times[0])
    power = theta / (1.0 - theta)
    best: Optional[float] = None
    for k in range(len(times) - 1):
        if times[k] < t_start or sigma[k] <= 0:
            continue
        value = float(speed[k] / sigma[k] ** power)
        best = value if best is None else min(best, value)
    return best
