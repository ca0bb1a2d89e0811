import numpy as np
import pytest

from covgrad import BeliefState, LinearModel, LossSpec, ScalarToyModel, gradient_of_loss
from covgrad.gradcheck import (
    MatrixRule,
    check_model_derivatives,
    fd_gradient_controls,
    verify_matrix_rule,
)
from conftest import assert_grad_close, default_initial, default_P0, feasible_controls


def test_fd_controls_linear_model_zero():
    model = LinearModel.default()
    initial = BeliefState(np.zeros(3), np.eye(3))
    controls = np.random.default_rng(0).standard_normal((10, 2))
    fd = fd_gradient_controls(initial, controls, model, LossSpec.trace())
    assert np.abs(fd).max() < 1e-9


def test_fd_controls_scalar_toy_matches_symbolic():
    q, r, p0, u0 = 0.3, 0.7, 0.5, 0.9
    model = ScalarToyModel(q=q, r=r)
    initial = BeliefState(np.array([0.2]), np.array([[p0]]))
    fd = fd_gradient_controls(initial, np.array([[u0]]), model, LossSpec.trace())
    expected = 2.0 * u0 * q * r**2 / (p0 + u0**2 * q + r) ** 2
    assert fd[0, 0] == pytest.approx(expected, abs=1e-8)


def test_fd_controls_bicycle_matches_backward(bicycle):
    initial = default_initial()
    controls = feasible_controls(bicycle, 10, seed=1)
    spec = LossSpec.normalized_trace(default_P0())
    _, grads = gradient_of_loss(initial, controls, bicycle, spec)
    fd = fd_gradient_controls(initial, controls, bicycle, spec)
    assert_grad_close(grads.dL_du, fd, rel=1e-4)


def test_fd_forward_scheme_close_to_central(bicycle):
    initial = default_initial()
    controls = feasible_controls(bicycle, 5, seed=2)
    spec = LossSpec.trace()
    central = fd_gradient_controls(initial, controls, bicycle, spec)
    forward = fd_gradient_controls(initial, controls, bicycle, spec, scheme="forward")
    assert_grad_close(central, forward, rel=1e-2, abs_floor=1e-6)


def test_fd_controls_shrinks_step_near_domain_boundary(bicycle):
    # A steering angle this close to pi/2 forces the default step to cross
    # the tangent's pole; the oracle must shrink the step and still answer.
    initial = default_initial()
    controls = np.array([[1.0, np.pi / 2 - 1e-6]])
    fd = fd_gradient_controls(initial, controls, bicycle, LossSpec.trace())
    assert np.isfinite(fd).all()


@pytest.mark.parametrize("rule", list(MatrixRule))
def test_matrix_rules_random_draws(rule):
    rng = np.random.default_rng(42)
    worst = max(verify_matrix_rule(rule, dim=4, rng=rng) for _ in range(100))
    assert worst < 1e-6, f"{rule}: {worst:.3e}"


def test_matrix_rule_xyxt_identity_instance():
    # X = Y = I with the trace part dominating: gradient must be close to
    # the closed form 2 (W + W W) evaluated at M = I.
    rng = np.random.default_rng(0)
    err = verify_matrix_rule(MatrixRule.XYXT, dim=3, rng=rng)
    assert err < 1e-6


def test_matrix_rule_inverse_closed_form():
    # Direct check of the inverse rule at X = 2I under the pure trace loss:
    # d tr(X^{-1}) / dX = -X^{-2} = -I/4.
    X = 2.0 * np.eye(3)
    M = np.linalg.inv(X)
    analytic = -M.T @ np.eye(3) @ M.T
    h = 1e-6
    fd = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            Xp = X.copy()
            Xp[i, j] += h
            Xm = X.copy()
            Xm[i, j] -= h
            fd[i, j] = (np.trace(np.linalg.inv(Xp)) - np.trace(np.linalg.inv(Xm))) / (2 * h)
    np.testing.assert_allclose(analytic, fd, atol=1e-7)
    np.testing.assert_allclose(analytic, -0.25 * np.eye(3), atol=1e-12)


def test_vector_chain_elementwise_square():
    # f(x) = x * x at x = (1, 2) with loss sum(m): gradient is J' 1 = (2, 4).
    x = np.array([1.0, 2.0])
    J = np.diag(2.0 * x)
    analytic = J.T @ np.ones(2)
    h = 1e-7
    fd = np.array(
        [
            (np.sum((x + h * e) ** 2) - np.sum((x - h * e) ** 2)) / (2 * h)
            for e in np.eye(2)
        ]
    )
    np.testing.assert_allclose(analytic, fd, atol=1e-7)
    np.testing.assert_allclose(analytic, [2.0, 4.0], atol=1e-12)


def test_fd_is_second_order_accurate(bicycle):
    # Richardson: halving the step should quarter the gap to the analytical
    # gradient while truncation error dominates rounding noise.
    initial = default_initial()
    controls = feasible_controls(bicycle, 5, seed=3)
    spec = LossSpec.normalized_trace(default_P0())
    _, grads = gradient_of_loss(initial, controls, bicycle, spec)

    def discrepancy(h):
        fd = fd_gradient_controls(initial, controls, bicycle, spec, h=h)
        return np.abs(fd - grads.dL_du).max()

    d1 = discrepancy(4e-3)
    d2 = discrepancy(2e-3)
    assert 0.15 <= d2 / d1 <= 0.35


def test_check_model_derivatives_reports_all_members(bicycle):
    worst = check_model_derivatives(bicycle, [(np.array([0.3, 1.0, -1.0, 0.5, 0.2]), np.array([2.0, 0.2]))])
    assert set(worst) == {
        "F",
        "G",
        "H",
        "J_u",
        "dF_dx",
        "dF_du",
        "dG_dx",
        "dG_du",
        "dH_dx",
        "dR_dx",
    }
