"""
Benchmark objectives with known structure.

Every entry is coercive. Lipschitz constants are declared on the box
||x||_inf <= R, where R is an optional trailing catalog parameter.
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .exceptions import ConfigError, ModeError
from .objective import ConvexTerm, KLProfile, ObjectiveSpec, SmoothTerm
from .types import ConvexMode

logger = logging.getLogger(__name__)

DEFAULT_BOX_RADIUS = 2.0


# ============================================================================
# Convex Building Blocks
# ============================================================================


def zero_convex(n: int, mode: ConvexMode = ConvexMode.SMOOTH) -> ConvexTerm:
    """phi = 0. Any rho > 0 satisfies the cocoercivity bound; 1.0 is used."""
    return ConvexTerm(
        n=n,
        value=lambda x: 0.0,
        mode=mode,
        gradient=lambda x: np.zeros_like(x),
        hvp=lambda x, d: np.zeros_like(d),
        inv_lipschitz=1.0,
        prox=lambda gamma, y: np.array(y, dtype=float),
        subgradient=lambda x: np.zeros_like(x),
        name="zero",
    )


def quadratic_convex(n: int, mu: float = 1.0, mode: ConvexMode = ConvexMode.SMOOTH) -> ConvexTerm:
    """phi = mu/2 ||x||^2."""
    return ConvexTerm(
        n=n,
        value=lambda x: 0.5 * mu * float(np.dot(x, x)),
        mode=mode,
        gradient=lambda x: mu * x,
        hvp=lambda x, d: mu * d,
        inv_lipschitz=1.0 / mu,
        prox=lambda gamma, y: y / (1.0 + gamma * mu),
        subgradient=lambda x: mu * x,
        name="quadratic",
    )


def l1_convex(n: int, weight: float = 1.0) -> ConvexTerm:
    """phi = w ||x||_1, prox by soft-thresholding."""

    def prox(gamma: float, y: np.ndarray) -> np.ndarray:
        return np.sign(y) * np.maximum(np.abs(y) - gamma * weight, 0.0)

    return ConvexTerm(
        n=n,
        value=lambda x: weight * float(np.sum(np.abs(x))),
        mode=ConvexMode.PROX,
        prox=prox,
        # sign(0) = 0 gives the minimal-norm element of the subdifferential
        subgradient=lambda x: weight * np.sign(x),
        name="l1",
    )


def huber_convex(
    n: int, delta: float = 0.5, weight: float = 1.0, mode: ConvexMode = ConvexMode.SMOOTH
) -> ConvexTerm:
    """
    phi = w * sum_i huber_delta(x_i), with huber_delta(t) = t^2/(2 delta) on
    |t| <= delta and |t| - delta/2 outside. grad phi is (w/delta)-Lipschitz.
    """

    def value(x: np.ndarray) -> float:
        a = np.abs(x)
        return weight * float(np.sum(np.where(a <= delta, a * a / (2.0 * delta), a - 0.5 * delta)))

    def gradient(x: np.ndarray) -> np.ndarray:
        return weight * np.clip(x / delta, -1.0, 1.0)

    def hvp(x: np.ndarray, d: np.ndarray) -> np.ndarray:
        return np.where(np.abs(x) <= delta, weight / delta, 0.0) * d

    def prox(gamma: float, y: np.ndarray) -> np.ndarray:
        knee = delta + gamma * weight
        return np.where(np.abs(y) <= knee, y * delta / knee, y - gamma * weight * np.sign(y))

    return ConvexTerm(
        n=n,
        value=value,
        mode=mode,
        gradient=gradient,
        hvp=hvp,
        inv_lipschitz=delta / weight,
        prox=prox,
        subgradient=gradient,
        name="huber",
    )


# ============================================================================
# Smooth Building Blocks
# ============================================================================


def zero_smooth(n: int) -> SmoothTerm:
    return SmoothTerm(
        n=n, value=lambda x: 0.0, gradient=lambda x: np.zeros_like(x), lipschitz_grad=0.0, name="zero"
    )


def quadratic_smooth(n: int, scale: float = 1.0, center: Optional[Sequence[float]] = None) -> SmoothTerm:
    """psi = c/2 ||x - center||^2."""
    c0 = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    return SmoothTerm(
        n=n,
        value=lambda x: 0.5 * scale * float(np.dot(x - c0, x - c0)),
        gradient=lambda x: scale * (x - c0),
        lipschitz_grad=abs(scale),
        name="quadratic",
    )


def power_smooth(n: int, p: int, box_radius: float = DEFAULT_BOX_RADIUS) -> SmoothTerm:
    """psi = ||x||^(2p) / (2p); the Hessian norm is (2p-1) ||x||^(2p-2)."""
    r_max = box_radius * math.sqrt(n)

    def value(x: np.ndarray) -> float:
        return float(np.dot(x, x)) ** p / (2 * p)

    def gradient(x: np.ndarray) -> np.ndarray:
        return float(np.dot(x, x)) ** (p - 1) * x

    return SmoothTerm(
        n=n,
        value=value,
        gradient=gradient,
        lipschitz_grad=(2 * p - 1) * r_max ** (2 * p - 2),
        name=f"power{2 * p}",
    )


def double_well_smooth(n: int, box_radius: float = DEFAULT_BOX_RADIUS) -> SmoothTerm:
    """psi = 1/4 ||x||^4 - 1/2 ||x||^2 (nonconvex)."""
    r2_max = n * box_radius**2

    def value(x: np.ndarray) -> float:
        r2 = float(np.dot(x, x))
        return 0.25 * r2 * r2 - 0.5 * r2

    def gradient(x: np.ndarray) -> np.ndarray:
        return (float(np.dot(x, x)) - 1.0) * x

    return SmoothTerm(
        n=n, value=value, gradient=gradient, lipschitz_grad=max(1.0, 3.0 * r2_max - 1.0), name="double_well"
    )


def rosenbrock_smooth(
    n: int, a: float = 1.0, b: float = 10.0, box_radius: float = DEFAULT_BOX_RADIUS
) -> SmoothTerm:
    """Chained Rosenbrock sum_i b (x_{i+1} - x_i^2)^2 + (a - x_i)^2."""
    if n < 2:
        raise ConfigError(f"rosenbrock needs dimension >= 2, got {n}")
    R = box_radius

    def value(x: np.ndarray) -> float:
        head, tail = x[:-1], x[1:]
        return float(np.sum(b * (tail - head**2) ** 2 + (a - head) ** 2))

    def gradient(x: np.ndarray) -> np.ndarray:
        head, tail = x[:-1], x[1:]
        coupling = tail - head**2
        grad = np.zeros_like(x)
        grad[:-1] += -4.0 * b * head * coupling - 2.0 * (a - head)
        grad[1:] += 2.0 * b * coupling
        return grad

    # Gershgorin bound of the Hessian on the box
    return SmoothTerm(
        n=n,
        value=value,
        gradient=gradient,
        lipschitz_grad=2.0 + b * (2.0 + 12.0 * R + 12.0 * R * R),
        name="rosenbrock",
    )


# ============================================================================
# Catalog
# ============================================================================


def _unpack(name: str, params: Sequence[float], defaults: List[float]) -> List[float]:
    if len(params) > len(defaults):
        raise ConfigError(
            f"{name} takes at most {len(defaults)} params, got {len(params)}",
            details={"params": list(params)},
        )
    values = [float(p) for p in params] + defaults[len(params):]
    if not all(math.isfinite(v) for v in values):
        raise ConfigError(f"{name} params must be finite, got {list(params)}")
    return values


def _require_positive(name: str, **values: float) -> None:
    for label, val in values.items():
        if not val > 0:
            raise ConfigError(f"{name}: {label} must be positive, got {val}")


def _make_quadratic(n: int, params: Sequence[float]) -> ObjectiveSpec:
    (R,) = _unpack("quadratic", params, [DEFAULT_BOX_RADIUS])
    _require_positive("quadratic", R=R)
    origin = np.zeros(n)
    profile = KLProfile(
        theta=0.5,
        constant=1.0 / math.sqrt(2.0),
        radius=1.0,
        level_gap=0.5,
        critical_point=origin,
        critical_value=0.0,
    )
    return ObjectiveSpec(
        smooth=zero_smooth(n),
        convex=quadratic_convex(n),
        coercive=True,
        known_critical_points=(origin,),
        kl_profile=profile,
        infimum=0.0,
        box_radius=R,
        name="quadratic",
        params=(R,),
    )


def _make_power2p(n: int, params: Sequence[float]) -> ObjectiveSpec:
    if not params:
        raise ConfigError("power2p needs the integer exponent p")
    p_raw, R = _unpack("power2p", params, [2.0, DEFAULT_BOX_RADIUS])
    if p_raw != int(p_raw) or p_raw < 1:
        raise ConfigError(f"power2p: p must be a positive integer, got {p_raw}")
    _require_positive("power2p", R=R)
    p = int(p_raw)
    theta = 1.0 - 1.0 / (2 * p)
    origin = np.zeros(n)
    profile = KLProfile(
        theta=theta,
        constant=(2.0 * p) ** (-theta),
        radius=1.0,
        level_gap=1.0 / (2 * p),
        critical_point=origin,
        critical_value=0.0,
    )
    return ObjectiveSpec(
        smooth=power_smooth(n, p, R),
        convex=zero_convex(n),
        coercive=True,
        known_critical_points=(origin,),
        kl_profile=profile,
        infimum=0.0,
        box_radius=R,
        name="power2p",
        params=(float(p), R),
    )


def _make_double_well(n: int, params: Sequence[float]) -> ObjectiveSpec:
    mu, R = _unpack("double_well", params, [0.5, DEFAULT_BOX_RADIUS])
    _require_positive("double_well", mu=mu, R=R)
    points = [np.zeros(n)]
    infimum = 0.0
    if mu < 1.0:
        # Minimizers form the sphere ||x||^2 = 1 - mu; the axis points are listed.
        r = math.sqrt(1.0 - mu)
        axis = np.zeros(n)
        axis[0] = r
        points.extend([axis, -axis])
        infimum = -0.25 * (1.0 - mu) ** 2
    return ObjectiveSpec(
        smooth=double_well_smooth(n, R),
        convex=quadratic_convex(n, mu),
        coercive=True,
        known_critical_points=tuple(points),
        infimum=infimum,
        box_radius=R,
        name="double_well",
        params=(mu, R),
    )


def _make_rosenbrock_plus_l2(n: int, params: Sequence[float]) -> ObjectiveSpec:
    a, b, mu, R = _unpack("rosenbrock_plus_l2", params, [1.0, 10.0, 1.0, DEFAULT_BOX_RADIUS])
    _require_positive("rosenbrock_plus_l2", b=b, mu=mu, R=R)
    return ObjectiveSpec(
        smooth=rosenbrock_smooth(n, a, b, R),
        convex=quadratic_convex(n, mu),
        coercive=True,
        infimum=0.0,
        box_radius=R,
        name="rosenbrock_plus_l2",
        params=(a, b, mu, R),
    )


def _make_l1_plus_quadratic(n: int, params: Sequence[float]) -> ObjectiveSpec:
    w, R = _unpack("l1_plus_quadratic", params, [1.0, DEFAULT_BOX_RADIUS])
    _require_positive("l1_plus_quadratic", w=w, R=R)
    return ObjectiveSpec(
        smooth=quadratic_smooth(n),
        convex=l1_convex(n, w),
        coercive=True,
        known_critical_points=(np.zeros(n),),
        infimum=0.0,
        box_radius=R,
        name="l1_plus_quadratic",
        params=(w, R),
    )


def _make_huber_plus_quartic(n: int, params: Sequence[float]) -> ObjectiveSpec:
    delta, w, R = _unpack("huber_plus_quartic", params, [0.5, 1.0, DEFAULT_BOX_RADIUS])
    _require_positive("huber_plus_quartic", delta=delta, w=w, R=R)
    return ObjectiveSpec(
        smooth=power_smooth(n, 2, R),
        convex=huber_convex(n, delta, w),
        coercive=True,
        known_critical_points=(np.zeros(n),),
        infimum=0.0,
        box_radius=R,
        name="huber_plus_quartic",
        params=(delta, w, R),
    )


CATALOG: Dict[str, Callable[[int, Sequence[float]], ObjectiveSpec]] = {
    "quadratic": _make_quadratic,
    "power2p": _make_power2p,
    "double_well": _make_double_well,
    "rosenbrock_plus_l2": _make_rosenbrock_plus_l2,
    "l1_plus_quadratic": _make_l1_plus_quadratic,
    "huber_plus_quartic": _make_huber_plus_quartic,
}


def catalog_names() -> List[str]:
    return sorted(CATALOG)


def catalog_make(
    name: str,
    n: int,
    params: Sequence[float] = (),
    mode: Optional[ConvexMode] = None,
) -> ObjectiveSpec:
    """
    Build a catalog objective.

    Args:
        name: Catalog entry name
        n: Dimension
        params: Entry parameters; trailing ones may be omitted
        mode: Optional override of the convex term's mode

    Returns:
        Fully populated ObjectiveSpec

    Raises:
        ConfigError: Unknown name or invalid params
    """
    if name not in CATALOG:
        raise ConfigError(f"unknown catalog problem '{name}' (known: {', '.join(catalog_names())})")
    if n < 1:
        raise ConfigError(f"dimension must be positive, got {n}")
    spec = CATALOG[name](n, list(params))
    if mode is not None:
        try:
            spec = spec.with_mode(ConvexMode(mode))
        except ModeError as e:
            raise ConfigError(f"{name}: {e}") from e
    logger.debug(f"catalog {name} n={n} params={spec.params} mode={spec.mode.value}")
    return spec
