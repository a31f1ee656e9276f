#!/usr/bin/env python3
"""
Configuration validation utility for klflow
Validates experiment config files against the ExperimentConfig schema
"""

import sys
from pathlib import Path
from typing import List

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "python"))

from klflow.catalog import catalog_make  # noqa: E402
from klflow.config import ExperimentConfig, load_config  # noqa: E402
from klflow.exceptions import KLFlowError  # noqa: E402
from klflow.types import ConvexMode  # noqa: E402


def config_warnings(config: ExperimentConfig) -> List[str]:
    """Non-fatal observations about a valid config."""
    warnings = []
    spec = catalog_make(config.problem.name, config.problem.dimension, config.problem.params, config.problem.mode)
    if spec.kl_profile is None and config.problem.kl_override is not None:
        warnings.append("kl_override given but the problem has no KL profile")
    if config.sweep is not None and not config.outputs.formats:
        warnings.append("sweep writes no per-cell artifacts")
    if config.dynamics.adaptive and spec.mode is ConvexMode.PROX:
        warnings.append("adaptive step policy is ignored in prox mode")
    if config.problem.name == "double_well" and config.dynamics.h > 0.5:
        warnings.append(f"h={config.dynamics.h} is beyond the RK4 stability range for double_well")
    return warnings


def validate_experiment_config(config_path: Path) -> bool:
    """Validate one experiment config file."""
    print(f"Validating experiment config: {config_path}")

    try:
        config = load_config(config_path)
        # Problem params are only checked when the objective is built
        for warning in config_warnings(config):
            print(f"  WARNING: {warning}")
    except KLFlowError as e:
        print(f"  ERROR: {e}")
        return False

    print(f"  ✓ {config.problem.name} (n={config.problem.dimension}) is valid")
    return True


def main() -> int:
    """Main entry point."""
    print("klflow Configuration Validator\n")

    config_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "configs")

    if not config_dir.exists():
        print(f"ERROR: Config directory not found: {config_dir}")
        return 1

    configs = sorted(p for p in config_dir.rglob("*") if p.suffix in (".yaml", ".yml", ".json"))
    if not configs:
        print(f"WARNING: No configs found in {config_dir}")

    errors = 0
    for config_path in configs:
        if not validate_experiment_config(config_path):
            errors += 1
        print()

    if errors == 0:
        print("✓ All configurations are valid!")
        return 0
    else:
        print(f"✗ Found {errors} configuration error(s)")
        return 1


if __name__ == "__main__":
    sys.exit(main())
