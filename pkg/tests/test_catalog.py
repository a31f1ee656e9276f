"""
Tests for the benchmark catalog.
"""

import math

import numpy as np
import pytest

from klflow.catalog import catalog_make, catalog_names
from klflow.exceptions import ConfigError
from klflow.objective import eval_objective, subgradient_residual
from klflow.types import ConvexMode


def test_catalog_names():
    assert catalog_names() == [
        "double_well",
        "huber_plus_quartic",
        "l1_plus_quadratic",
        "power2p",
        "quadratic",
        "rosenbrock_plus_l2",
    ]


def test_unknown_name():
    with pytest.raises(ConfigError):
        catalog_make("himmelblau", 2)


def test_invalid_dimension():
    with pytest.raises(ConfigError):
        catalog_make("quadratic", 0)


def test_too_many_params():
    with pytest.raises(ConfigError):
        catalog_make("quadratic", 1, (1.0, 2.0))


def test_power2p_needs_integer_p():
    with pytest.raises(ConfigError):
        catalog_make("power2p", 1)
    with pytest.raises(ConfigError):
        catalog_make("power2p", 1, (1.5,))


def test_rosenbrock_needs_two_dimensions():
    with pytest.raises(ConfigError):
        catalog_make("rosenbrock_plus_l2", 1)


def test_forcing_l1_smooth_is_config_error():
    with pytest.raises(ConfigError):
        catalog_make("l1_plus_quadratic", 1, mode=ConvexMode.SMOOTH)


def test_modes():
    assert catalog_make("quadratic", 1).mode is ConvexMode.SMOOTH
    assert catalog_make("l1_plus_quadratic", 1).mode is ConvexMode.PROX
    assert catalog_make("quadratic", 1, mode=ConvexMode.PROX).mode is ConvexMode.PROX


@pytest.mark.parametrize("p", [1, 2, 3])
def test_power2p_profile(p):
    spec = catalog_make("power2p", 1, (p,))
    profile = spec.kl_profile
    assert profile.theta == pytest.approx(1.0 - 1.0 / (2 * p))
    # tight constant: |Phi|^theta = C |grad Phi| along the ray
    x = np.array([0.3])
    lhs = eval_objective(spec, x) ** profile.theta
    assert lhs == pytest.approx(profile.constant * abs(spec.smooth.gradient(x)[0]), rel=1e-12)


def test_quadratic_profile_is_tight(quadratic):
    profile = quadratic.kl_profile
    x = np.array([0.4])
    lhs = eval_objective(quadratic, x) ** profile.theta
    assert lhs == pytest.approx(profile.constant * abs(quadratic.convex.gradient(x)[0]))


def test_double_well_critical_points(double_well):
    mu = 0.5
    r = math.sqrt(1 - mu)
    for point in double_well.known_critical_points:
        v = double_well.convex.gradient(point)
        assert subgradient_residual(double_well, point, v) <= 1e-14
    assert eval_objective(double_well, [r, 0.0]) == pytest.approx(double_well.infimum)
    assert double_well.infimum == pytest.approx(-0.25 * (1 - mu) ** 2)


def test_double_well_large_mu_has_single_critical_point():
    spec = catalog_make("double_well", 2, (2.0,))
    assert len(spec.known_critical_points) == 1
    assert spec.infimum == 0.0


def test_rosenbrock_minimizer_value():
    spec = catalog_make("rosenbrock_plus_l2", 2)
    assert spec.smooth.value(np.array([1.0, 1.0])) == 0.0
    assert spec.kl_profile is None


def test_l1_critical_point(l1_problem):
    assert subgradient_residual(l1_problem, [0.0], [0.0]) == 0.0
    assert l1_problem.kl_profile is None


def test_box_radius_parameter():
    small = catalog_make("power2p", 1, (2, 1.0))
    large = catalog_make("power2p", 1, (2, 3.0))
    assert small.smooth.lipschitz_grad == pytest.approx(3.0)
    assert large.smooth.lipschitz_grad == pytest.approx(27.0)
    assert small.box_radius == 1.0


def test_params_are_recorded():
    spec = catalog_make("huber_plus_quartic", 2, (0.25,))
    assert spec.params == (0.25, 1.0, 2.0)
    assert spec.name == "huber_plus_quartic"
