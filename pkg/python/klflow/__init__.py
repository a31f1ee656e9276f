"""
klflow - numerical laboratory for the Hessian-damped subgradient flow.

Integrates v in d(phi)(x), lam x' + v' + v + grad psi(x) = 0 for convex phi
and smooth psi, monitors its Lyapunov structure along trajectories, and
classifies convergence regimes against the Lojasiewicz exponent.
"""

__version__ = "0.1.0"

from .analysis import classify_rate, estimate_limit, objective_limit_check, predicted_regime, sigma_tail
from .catalog import catalog_make, catalog_names
from .config import ExperimentConfig, load_config
from .dynamics import FlowState, Trajectory, initial_velocity, integrate
from .exceptions import (
    CertificationError,
    CheckFailedError,
    ConfigError,
    DimensionError,
    DivergedError,
    InsufficientSamplesError,
    KLFlowError,
    ModeError,
    ProxError,
    SolveError,
    StepSizeUnderflowError,
)
from .monitors import kl_inequality_check
from .objective import ConvexTerm, KLProfile, ObjectiveSpec, SmoothTerm, validate_oracles
from .types import (
    AdaptiveStep,
    ConvexMode,
    DynamicsParams,
    FixedStep,
    LimitSetEstimate,
    RateEstimate,
    RateRegime,
    RunReport,
    Termination,
)

__all__ = [
    # Version
    "__version__",
    # Objectives
    "SmoothTerm",
    "ConvexTerm",
    "KLProfile",
    "ObjectiveSpec",
    "validate_oracles",
    "catalog_make",
    "catalog_names",
    # Dynamics
    "FlowState",
    "Trajectory",
    "initial_velocity",
    "integrate",
    # Analysis
    "estimate_limit",
    "classify_rate",
    "sigma_tail",
    "predicted_regime",
    "objective_limit_check",
    "kl_inequality_check",
    # Config
    "ExperimentConfig",
    "load_config",
    # Exceptions
    "KLFlowError",
    "ConfigError",
    "DimensionError",
    "ModeError",
    "ProxError",
    "SolveError",
    "CertificationError",
    "DivergedError",
    "StepSizeUnderflowError",
    "InsufficientSamplesError",
    "CheckFailedError",
    # Types
    "ConvexMode",
    "Termination",
    "RateRegime",
    "FixedStep",
    "AdaptiveStep",
    "DynamicsParams",
    "LimitSetEstimate",
    "RateEstimate",
    "RunReport",
]
