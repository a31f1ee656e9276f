"""
Exception classes for klflow.
"""

from typing import Any, Dict, Optional

import pydantic
import yaml


class KLFlowError(Exception):
    """Base exception for klflow errors."""

    exit_code = 1

    def __init__(
        self,
        message: str,
        exit_code: Optional[int] = None,
        details: Optional[Dict[str, Any]] = None,
    ) -> None:
        super().__init__(message)
        self.message = message
        if exit_code is not None:
            self.exit_code = exit_code
        self.details = details

    def __str__(self) -> str:
        return self.message


class ConfigError(KLFlowError):
    """Invalid or unreadable experiment configuration."""

    exit_code = 2


class DimensionError(KLFlowError):
    """Vector dimension does not match the objective."""

    def __init__(self, expected: int, got: int, what: str = "x") -> None:
        super().__init__(f"{what} has dimension {got}, expected {expected}")
        self.expected = expected
        self.got = got


class ModeError(KLFlowError):
    """Oracle requested in the wrong convex-term mode."""

    pass


class ProxError(KLFlowError):
    """Proximal map could not be evaluated."""

    pass


class SolveError(KLFlowError):
    """Damping system (lambda*I + Hessian) could not be solved."""

    pass


class CertificationError(KLFlowError):
    """Initial velocity is not a certified subgradient."""

    def __init__(self, message: str = "v0 is not a subgradient of phi at x0") -> None:
        super().__init__(message, exit_code=2)


class DivergedError(KLFlowError):
    """Integration produced non-finite values."""

    exit_code = 3


class StepSizeUnderflowError(DivergedError):
    """Adaptive controller asked for a step below h_min."""

    def __init__(self, h_next: float, h_min: float) -> None:
        super().__init__(f"step size {h_next:.3e} fell below h_min={h_min:.3e}")
        self.h_next = h_next
        self.h_min = h_min


class InsufficientSamplesError(KLFlowError):
    """Trajectory too short for the requested analysis."""

    def __init__(self, needed: int, got: int, what: str = "samples") -> None:
        super().__init__(f"need at least {needed} {what}, got {got}")
        self.needed = needed
        self.got = got


class CheckFailedError(KLFlowError):
    """One or more enforced checks exceeded tolerance."""

    exit_code = 1


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code contract."""
    if isinstance(exc, KLFlowError):
        return exc.exit_code
    elif isinstance(exc, (pydantic.ValidationError, yaml.YAMLError)):
        return ConfigError.exit_code
    elif isinstance(exc, (FileNotFoundError, IsADirectoryError, PermissionError)):
        return ConfigError.exit_code
    return 1
