"""
Tests for objective oracles, the Newton prox fallback and oracle validation.
"""

import math

import numpy as np
import pytest

from klflow.catalog import catalog_make, huber_convex, l1_convex, quadratic_convex, quadratic_smooth, zero_smooth
from klflow.exceptions import DimensionError, KLFlowError, ModeError, ProxError
from klflow.objective import (
    ConvexTerm,
    KLProfile,
    ObjectiveSpec,
    SmoothTerm,
    eval_objective,
    grad_total,
    newton_prox,
    prox_convex,
    subgradient_residual,
    validate_oracles,
)
from klflow.types import ConvexMode


def test_eval_objective_quadratic(quadratic):
    assert eval_objective(quadratic, [2.0]) == pytest.approx(2.0)
    assert eval_objective(quadratic, 0.0) == 0.0


def test_eval_objective_rejects_wrong_dimension(quadratic):
    with pytest.raises(DimensionError):
        eval_objective(quadratic, [1.0, 2.0])


def test_eval_objective_rejects_non_finite(quadratic):
    with pytest.raises(KLFlowError):
        eval_objective(quadratic, [math.nan])


def test_grad_total_smooth(double_well):
    x = np.array([2.0, 0.0])
    # mu x + (||x||^2 - 1) x with mu = 0.5
    np.testing.assert_allclose(grad_total(double_well, x), [1.0 + 6.0, 0.0])


def test_grad_total_prox_mode_raises(l1_problem):
    with pytest.raises(ModeError):
        grad_total(l1_problem, [1.0])


def test_soft_threshold_prox(l1_problem):
    y = np.array([3.0])
    np.testing.assert_allclose(prox_convex(l1_problem, 0.5, y), [2.5])
    np.testing.assert_allclose(prox_convex(l1_problem, 5.0, y), [0.0])
    np.testing.assert_allclose(prox_convex(l1_problem, 1.0, [-0.25]), [0.0])


def test_prox_rejects_nonpositive_gamma(l1_problem):
    with pytest.raises(ProxError):
        prox_convex(l1_problem, 0.0, [1.0])


def test_quadratic_prox_closed_form(quadratic):
    np.testing.assert_allclose(prox_convex(quadratic, 1.0, [4.0]), [2.0])


def test_subgradient_residual_l1_at_zero(l1_problem):
    # v in [-1, 1] at x = 0 and grad psi(0) = 0
    assert subgradient_residual(l1_problem, [0.0], [0.3]) == pytest.approx(0.3)


def test_smooth_mode_requires_hessian():
    with pytest.raises(ModeError):
        ConvexTerm(n=1, value=lambda x: 0.0, mode=ConvexMode.SMOOTH, gradient=lambda x: x)


def test_prox_mode_requires_prox_or_newton_oracles():
    with pytest.raises(ModeError):
        ConvexTerm(n=1, value=lambda x: 0.0, mode=ConvexMode.PROX)


def test_l1_cannot_be_forced_smooth():
    with pytest.raises(ModeError):
        l1 = l1_convex(2)
        ConvexTerm(n=2, value=l1.value, mode=ConvexMode.SMOOTH, prox=l1.prox)


def test_spec_dimension_mismatch():
    with pytest.raises(DimensionError):
        ObjectiveSpec(smooth=zero_smooth(2), convex=quadratic_convex(3))


def test_kl_profile_validates_theta():
    with pytest.raises(KLFlowError):
        KLProfile(theta=1.0, constant=1.0, radius=1.0, level_gap=1.0, critical_point=[0.0], critical_value=0.0)


def test_desingularizer_derivative_matches_definition():
    profile = KLProfile(
        theta=0.5, constant=2.0, radius=1.0, level_gap=1.0, critical_point=[0.0], critical_value=0.0
    )
    s, ds = 0.25, 1e-7
    numeric = (profile.desingularizer(s + ds) - profile.desingularizer(s - ds)) / (2 * ds)
    assert numeric == pytest.approx(profile.desingularizer_derivative(s), rel=1e-6)
    assert profile.desingularizer_derivative(s) == pytest.approx(4.0)


def test_desingularizer_is_normalized_to_the_kl_constant():
    # C/(1 - theta) s^(1 - theta); derivative C s^-theta gives back the KL inequality
    profile = KLProfile(
        theta=0.75, constant=0.5, radius=1.0, level_gap=1.0, critical_point=[0.0], critical_value=0.0
    )
    s = 0.0625
    assert profile.desingularizer(s) == pytest.approx(0.5 / 0.25 * s**0.25)
    assert profile.desingularizer_derivative(s) == pytest.approx(0.5 * s**-0.75)
    # at ||x*|| = s^theta / C the inequality is tight and varphi' * ||x*|| = 1
    assert profile.desingularizer_derivative(s) * (s**0.75 / 0.5) == pytest.approx(1.0)


def test_with_mode_switches_scheme(quadratic):
    prox_spec = quadratic.with_mode(ConvexMode.PROX)
    assert prox_spec.mode is ConvexMode.PROX
    assert quadratic.mode is ConvexMode.SMOOTH
    assert quadratic.with_mode(ConvexMode.SMOOTH) is quadratic


class TestNewtonProx:
    def test_matches_closed_form_huber(self):
        closed = huber_convex(3, delta=0.5, weight=1.0)
        no_prox = ConvexTerm(
            n=3,
            value=closed.value,
            mode=ConvexMode.PROX,
            gradient=closed.gradient,
            hvp=closed.hvp,
            inv_lipschitz=closed.inv_lipschitz,
        )
        y = np.array([2.0, -0.2, 0.7])
        # Huber Hessian jumps at the knee; compare away from it
        for gamma in (0.1, 0.8, 2.0):
            np.testing.assert_allclose(no_prox.prox_map(gamma, y), closed.prox(gamma, y), atol=1e-9)

    def test_quadratic_exact(self):
        q = quadratic_convex(2, mu=2.0)
        u = newton_prox(q, 0.5, np.array([4.0, -2.0]))
        np.testing.assert_allclose(u, [2.0, -1.0], atol=1e-12)

    def test_without_oracles_raises(self):
        l1 = l1_convex(1)
        with pytest.raises(ProxError):
            newton_prox(l1, 1.0, np.array([1.0]))


class TestValidateOracles:
    @pytest.mark.parametrize(
        "name,n,params",
        [
            ("quadratic", 2, ()),
            ("power2p", 1, (2,)),
            ("double_well", 2, ()),
            ("rosenbrock_plus_l2", 3, ()),
            ("l1_plus_quadratic", 2, ()),
            ("huber_plus_quartic", 2, ()),
        ],
    )
    def test_catalog_oracles_are_consistent(self, name, n, params):
        report = validate_oracles(catalog_make(name, n, params), samples=100, seed=0)
        fd = report.violations.pop("fd_gradient")
        assert fd <= 1e-6, f"{name}: finite-difference gradient error {fd}"
        for key, value in report.violations.items():
            assert value <= 1e-8, f"{name}: {key} violated by {value}"

    def test_l1_prox_subgradient_inequality(self, l1_problem):
        report = validate_oracles(l1_problem, samples=100)
        assert report.violations["prox_subgradient"] <= 1e-10

    def test_detects_understated_lipschitz_constant(self):
        smooth = SmoothTerm(
            n=1, value=lambda x: float(2.0 * x @ x), gradient=lambda x: 4.0 * x, lipschitz_grad=1.0
        )
        spec = ObjectiveSpec(smooth=smooth, convex=quadratic_convex(1))
        report = validate_oracles(spec, samples=20)
        assert report.violations["lipschitz"] == pytest.approx(3.0)
        assert report.max_lipschitz_ratio == pytest.approx(4.0)

    def test_detects_wrong_gradient(self):
        smooth = SmoothTerm(n=1, value=lambda x: float(x @ x), gradient=lambda x: x, lipschitz_grad=2.0)
        spec = ObjectiveSpec(smooth=smooth, convex=quadratic_convex(1))
        report = validate_oracles(spec, samples=20)
        assert report.violations["fd_gradient"] > 0.1

    def test_detects_nonconvex_phi(self):
        concave = ConvexTerm(
            n=1,
            value=lambda x: float(-0.5 * x @ x),
            mode=ConvexMode.SMOOTH,
            gradient=lambda x: -x,
            hvp=lambda x, d: -d,
            inv_lipschitz=1.0,
            prox=lambda gamma, y: np.array(y, dtype=float),
        )
        spec = ObjectiveSpec(smooth=zero_smooth(1), convex=concave)
        report = validate_oracles(spec, samples=20)
        assert report.violations["convexity"] > 0
        assert report.violations["hessian_psd"] == pytest.approx(1.0)

    def test_is_seeded(self, double_well):
        a = validate_oracles(double_well, samples=10, seed=3)
        b = validate_oracles(double_well, samples=10, seed=3)
        assert a == b

    def test_fd_order_is_second_order(self):
        spec = catalog_make("power2p", 1, (3,))
        report = validate_oracles(spec, samples=20)
        assert report.fd_order is not None
        assert report.fd_order == pytest.approx(2.0, abs=0.1)


class TestClosedFormExamples:
    def test_soft_threshold_values(self):
        spec = ObjectiveSpec(smooth=zero_smooth(1), convex=l1_convex(1))
        np.testing.assert_allclose(prox_convex(spec, 1.0, [3.0]), [2.0])
        np.testing.assert_allclose(prox_convex(spec, 1.0, [0.5]), [0.0])

    def test_quadratic_prox_two_dimensions(self):
        spec = catalog_make("quadratic", 2)
        np.testing.assert_allclose(prox_convex(spec, 2.0, [3.0, -3.0]), [1.0, -1.0])

    def test_residual_with_shifted_smooth_part(self):
        spec = ObjectiveSpec(smooth=quadratic_smooth(1, center=[1.0]), convex=l1_convex(1))
        # |1 + (0.5 - 1)|
        assert subgradient_residual(spec, [0.5], [1.0]) == pytest.approx(0.5)

    def test_residual_at_critical_point(self, double_well):
        x = np.array([math.sqrt(0.5), 0.0])
        v = double_well.convex.gradient(x)
        assert subgradient_residual(double_well, x, v) <= 1e-15
