"""
Shared fixtures for the klflow test suite.
"""

from pathlib import Path
from typing import Any, Callable, Dict

import pytest
import yaml

from klflow.catalog import catalog_make
from klflow.objective import ObjectiveSpec
from klflow.types import DynamicsParams


def find_project_root() -> Path:
    """Find the klflow project root directory."""
    current = Path(__file__).resolve().parent.parent
    while current != current.parent:
        if (current / "pyproject.toml").exists() and (current / "python" / "klflow").exists():
            return current
        current = current.parent
    raise RuntimeError("Could not find project root")


@pytest.fixture(scope="session")
def project_root() -> Path:
    return find_project_root()


@pytest.fixture(scope="session")
def example_configs(project_root: Path) -> Path:
    return project_root / "configs" / "examples"


@pytest.fixture
def quadratic() -> ObjectiveSpec:
    return catalog_make("quadratic", 1)


@pytest.fixture
def double_well() -> ObjectiveSpec:
    return catalog_make("double_well", 2)


@pytest.fixture
def l1_problem() -> ObjectiveSpec:
    return catalog_make("l1_plus_quadratic", 1)


@pytest.fixture
def fixed_params() -> DynamicsParams:
    return DynamicsParams(lam=1.0, h=0.01, t_max=10.0)


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[[Dict[str, Any], str], Path]:
    """Write a config dict as YAML into tmp_path; outputs default into tmp_path/out."""

    def _write(data: Dict[str, Any], name: str = "config.yaml") -> Path:
        data = dict(data)
        data.setdefault("outputs", {"directory": str(tmp_path / "out")})
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data, sort_keys=False))
        return path

    return _write
