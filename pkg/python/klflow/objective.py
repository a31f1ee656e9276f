"""
Composite objective Phi = phi + psi.

phi is convex (smooth with cocoercive gradient, or handled through its
proximal map) and psi is smooth with Lipschitz gradient, possibly nonconvex.
All oracles are pure functions of their inputs; specs are immutable.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .exceptions import DimensionError, KLFlowError, ModeError, ProxError
from .types import ConvexMode, OracleReport

logger = logging.getLogger(__name__)

ScalarOracle = Callable[[np.ndarray], float]
VectorOracle = Callable[[np.ndarray], np.ndarray]
HessianVectorOracle = Callable[[np.ndarray, np.ndarray], np.ndarray]
ProxOracle = Callable[[float, np.ndarray], np.ndarray]

NEWTON_PROX_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SmoothTerm:
    """psi with its gradient and the Lipschitz constant of the gradient."""

    n: int
    value: ScalarOracle
    gradient: VectorOracle
    lipschitz_grad: float
    name: str = "psi"

    def __post_init__(self) -> None:
        if self.n < 1:
            raise KLFlowError(f"dimension must be positive, got {self.n}")
        if not self.lipschitz_grad >= 0:
            raise KLFlowError(f"lipschitz_grad must be nonnegative, got {self.lipschitz_grad}")


@dataclass(frozen=True, eq=False)
class ConvexTerm:
    """
    phi together with whichever oracles are available.

    SMOOTH mode needs gradient, hvp and inv_lipschitz (grad phi is
    (1/rho)-Lipschitz). PROX mode needs a closed-form prox or, failing that,
    gradient and hvp for the Newton fallback.
    """

    n: int
    value: ScalarOracle
    mode: ConvexMode
    gradient: Optional[VectorOracle] = None
    hvp: Optional[HessianVectorOracle] = None
    inv_lipschitz: Optional[float] = None
    prox: Optional[ProxOracle] = None
    subgradient: Optional[VectorOracle] = None
    name: str = "phi"

    def __post_init__(self) -> None:
        if self.n < 1:
            raise KLFlowError(f"dimension must be positive, got {self.n}")
        if self.mode is ConvexMode.SMOOTH:
            if self.gradient is None or self.hvp is None:
                raise ModeError(f"{self.name}: smooth mode needs gradient and hvp oracles")
            if self.inv_lipschitz is None or not self.inv_lipschitz > 0:
                raise ModeError(f"{self.name}: smooth mode needs inv_lipschitz > 0")
        elif not self.has_prox:
            raise ModeError(f"{self.name}: prox mode needs a prox oracle or gradient+hvp")

    @property
    def has_prox(self) -> bool:
        return self.prox is not None or (self.gradient is not None and self.hvp is not None)

    def prox_map(self, gamma: float, y: np.ndarray) -> np.ndarray:
        if self.prox is not None:
            return np.asarray(self.prox(gamma, y), dtype=float)
        return newton_prox(self, gamma, y)


@dataclass(frozen=True, eq=False)
class KLProfile:
    """Lojasiewicz data |Phi(x) - Phi(x_bar)|^theta <= C ||x*|| near x_bar."""

    theta: float
    constant: float
    radius: float
    level_gap: float
    critical_point: np.ndarray
    critical_value: float

    def __post_init__(self) -> None:
        if not 0.0 < self.theta < 1.0:
            raise KLFlowError(f"theta must lie in (0, 1), got {self.theta}")
        for label, val in (("C", self.constant), ("epsilon", self.radius), ("eta", self.level_gap)):
            if not val > 0:
                raise KLFlowError(f"{label} must be positive, got {val}")
        object.__setattr__(self, "critical_point", np.asarray(self.critical_point, dtype=float))

    def desingularizer(self, s: float) -> float:
        """
        varphi(s) = C/(1 - theta) s^(1 - theta).

        Normalized so varphi'(s) = C s^(-theta); varphi'(Phi - Phi_bar) * ||x*|| >= 1
        is then exactly |Phi - Phi_bar|^theta <= C ||x*||. The unnormalized
        C s^(1 - theta) differs only by the factor 1 - theta.
        """
        return self.constant / (1.0 - self.theta) * s ** (1.0 - self.theta)

    def desingularizer_derivative(self, s: float) -> float:
        return self.constant * s ** (-self.theta)


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    """Phi = convex + smooth, plus catalog metadata."""

    smooth: SmoothTerm
    convex: ConvexTerm
    coercive: bool = False
    known_critical_points: Tuple[np.ndarray, ...] = ()
    kl_profile: Optional[KLProfile] = None
    infimum: Optional[float] = None
    box_radius: float = 1.0
    name: str = "custom"
    params: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.smooth.n != self.convex.n:
            raise DimensionError(self.smooth.n, self.convex.n, what="convex term")
        points = tuple(np.asarray(p, dtype=float) for p in self.known_critical_points)
        for point in points:
            if point.shape != (self.n,):
                raise DimensionError(self.n, point.size, what="critical point")
        object.__setattr__(self, "known_critical_points", points)

    @property
    def n(self) -> int:
        return self.smooth.n

    @property
    def mode(self) -> ConvexMode:
        return self.convex.mode

    @property
    def declared_points(self) -> Tuple[np.ndarray, ...]:
        """Known critical points, including the KL profile's."""
        if self.kl_profile is None:
            return self.known_critical_points
        return (self.kl_profile.critical_point,) + self.known_critical_points

    def with_mode(self, mode: ConvexMode) -> "ObjectiveSpec":
        """Same objective driven through the other scheme."""
        if mode is self.mode:
            return self
        return replace(self, convex=replace(self.convex, mode=mode))

    def with_profile(self, profile: Optional[KLProfile]) -> "ObjectiveSpec":
        return replace(self, kl_profile=profile)


# ============================================================================
# Oracles
# ============================================================================


def as_vector(spec: ObjectiveSpec, x: Sequence[float] | np.ndarray, what: str = "x") -> np.ndarray:
    """Coerce to a float vector of the spec's dimension."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.shape[0] != spec.n:
        raise DimensionError(spec.n, int(arr.size), what=what)
    return arr


def eval_objective(spec: ObjectiveSpec, x: Sequence[float] | np.ndarray) -> float:
    """Phi(x) = phi(x) + psi(x); +inf only outside dom phi."""
    x = as_vector(spec, x)
    if not np.all(np.isfinite(x)):
        raise KLFlowError("x must be finite")
    return float(spec.convex.value(x)) + float(spec.smooth.value(x))


def grad_total(spec: ObjectiveSpec, x: Sequence[float] | np.ndarray) -> np.ndarray:
    """grad phi(x) + grad psi(x); smooth mode only."""
    if spec.mode is not ConvexMode.SMOOTH:
        raise ModeError("grad_total is only defined in smooth mode")
    x = as_vector(spec, x)
    return spec.convex.gradient(x) + spec.smooth.gradient(x)


def prox_convex(spec: ObjectiveSpec, gamma: float, y: Sequence[float] | np.ndarray) -> np.ndarray:
    """argmin_u 1/2 ||u - y||^2 + gamma phi(u)."""
    if not gamma > 0:
        raise ProxError(f"prox parameter must be positive, got {gamma}")
    y = as_vector(spec, y, what="y")
    return spec.convex.prox_map(gamma, y)


def subgradient_residual(
    spec: ObjectiveSpec, x: Sequence[float] | np.ndarray, v: Sequence[float] | np.ndarray
) -> float:
    """||v + grad psi(x)||, an upper bound on dist(0, dPhi(x)) when v is in dphi(x)."""
    x = as_vector(spec, x)
    v = as_vector(spec, v, what="v")
    return float(np.linalg.norm(v + spec.smooth.gradient(x)))


def assemble_hessian(hvp: HessianVectorOracle, x: np.ndarray) -> np.ndarray:
    """Dense Hessian from Hessian-vector products against the unit basis."""
    n = x.shape[0]
    return np.column_stack([hvp(x, e) for e in np.eye(n)])


def newton_prox(
    convex: ConvexTerm,
    gamma: float,
    y: np.ndarray,
    tol: float = NEWTON_PROX_TOL,
    max_iter: int = 100,
) -> np.ndarray:
    """
    Prox of a smooth convex term by damped Newton on the prox subproblem.

    The subproblem 1/2 ||u - y||^2 + gamma phi(u) is strongly convex, so
    (I + gamma Hess phi(u)) is positive definite and Newton converges with
    Armijo backtracking from any start.
    """
    if convex.gradient is None or convex.hvp is None:
        raise ProxError(f"{convex.name}: no closed-form prox and no Newton oracles")

    def objective(u: np.ndarray) -> float:
        return 0.5 * float(np.dot(u - y, u - y)) + gamma * float(convex.value(u))

    u = np.array(y, dtype=float)
    scale = 1.0 + float(np.linalg.norm(y))
    for _ in range(max_iter):
        g = u - y + gamma * convex.gradient(u)
        if np.linalg.norm(g) <= tol * scale:
            return u
        hess = np.eye(u.shape[0]) + gamma * assemble_hessian(convex.hvp, u)
        try:
            step = -cho_solve(cho_factor(hess), g)
        except LinAlgError as e:
            raise ProxError(f"{convex.name}: prox Newton system not positive definite") from e
        f0 = objective(u)
        slope = float(np.dot(g, step))
        t = 1.0
        while objective(u + t * step) > f0 + 1e-4 * t * slope and t > 1e-12:
            t *= 0.5
        u = u + t * step
    raise ProxError(f"{convex.name}: prox Newton did not converge in {max_iter} iterations")


# ============================================================================
# Oracle Validation
# ============================================================================


def _fd_gradient(value: ScalarOracle, x: np.ndarray, h: float) -> np.ndarray:
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (value(x + e) - value(x - e)) / (2.0 * h)
    return grad


def validate_oracles(spec: ObjectiveSpec, samples: int = 100, seed: int = 0) -> OracleReport:
    """
    Run the oracle invariants on random points of the catalog box.

    Violations are reported, never raised. Keys present depend on which
    oracles the spec carries.
    """
    if samples < 1:
        raise KLFlowError(f"samples must be >= 1, got {samples}")
    rng = np.random.default_rng(seed)
    n, radius = spec.n, spec.box_radius
    smooth, convex = spec.smooth, spec.convex

    def draw() -> np.ndarray:
        return rng.uniform(-radius, radius, size=n)

    violations = {"lipschitz": 0.0, "fd_gradient": 0.0}
    fd_coarse, fd_fine, max_ratio = 0.0, 0.0, 0.0

    for _ in range(samples):
        x, y = draw(), draw()
        gx, gy = smooth.gradient(x), smooth.gradient(y)
        dist = float(np.linalg.norm(x - y))
        if dist > 0:
            ratio = float(np.linalg.norm(gx - gy)) / dist
            max_ratio = max(max_ratio, ratio)
            violations["lipschitz"] = max(violations["lipschitz"], ratio - smooth.lipschitz_grad)

        scale = 1.0 + float(np.max(np.abs(gx)))
        fd_coarse = max(fd_coarse, float(np.max(np.abs(_fd_gradient(smooth.value, x, 1e-3) - gx))) / scale)
        fd_fine = max(fd_fine, float(np.max(np.abs(_fd_gradient(smooth.value, x, 1e-4) - gx))) / scale)

        if convex.gradient is not None:
            fx, fy = float(convex.value(x)), float(convex.value(y))
            dx, dy = convex.gradient(x), convex.gradient(y)
            gap = fx + float(np.dot(dx, y - x)) - fy
            violations["convexity"] = max(violations.get("convexity", 0.0), gap)
            if convex.inv_lipschitz is not None:
                dd = dx - dy
                slack = float(np.dot(dd, x - y)) - convex.inv_lipschitz * float(np.dot(dd, dd))
                violations["cocoercivity"] = max(violations.get("cocoercivity", 0.0), -slack)
        if convex.hvp is not None:
            d1, d2 = rng.standard_normal(n), rng.standard_normal(n)
            curvature = float(np.dot(d1, convex.hvp(x, d1))) / float(np.dot(d1, d1))
            violations["hessian_psd"] = max(violations.get("hessian_psd", 0.0), -curvature)
            asym = abs(float(np.dot(d1, convex.hvp(x, d2))) - float(np.dot(d2, convex.hvp(x, d1))))
            violations["hessian_symmetry"] = max(violations.get("hessian_symmetry", 0.0), asym)

        if convex.has_prox:
            gamma = rng.uniform(0.1, 2.0)
            u1, u2 = convex.prox_map(gamma, x), convex.prox_map(gamma, y)
            g1 = (x - u1) / gamma
            z = draw()
            gap = float(convex.value(u1)) + float(np.dot(g1, z - u1)) - float(convex.value(z))
            violations["prox_subgradient"] = max(violations.get("prox_subgradient", 0.0), gap)
            du = u1 - u2
            firm = float(np.dot(du, du)) - float(np.dot(du, x - y))
            violations["prox_firm_nonexpansive"] = max(
                violations.get("prox_firm_nonexpansive", 0.0), firm
            )
            if convex.mode is ConvexMode.PROX:
                violations["convexity"] = max(violations.get("convexity", 0.0), gap)

    violations["fd_gradient"] = fd_fine
    fd_order = None
    if fd_fine > 1e-11 and fd_coarse > 0:
        fd_order = float(np.log10(fd_coarse / fd_fine))

    violations = {key: max(0.0, val) for key, val in violations.items()}
    logger.debug(f"oracle validation for {spec.name}: {violations}")
    return OracleReport(
        samples=samples,
        seed=seed,
        violations=violations,
        fd_order=fd_order,
        max_lipschitz_ratio=max_ratio,
    )
