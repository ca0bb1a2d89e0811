"""Shared fixtures and oracle helpers for the test suite."""

import numpy as np
import pytest

from covgrad import BeliefState, BicycleModel, LossSpec, PlanProblem, sample_initial_controls

HEADING_STD0 = 5.0 * np.pi / 180.0
POSITION_STD0 = 10.0
LEVER_STD0 = 1.0


def default_P0():
    return np.diag([HEADING_STD0**2, POSITION_STD0**2, POSITION_STD0**2, LEVER_STD0**2, LEVER_STD0**2])


def default_initial():
    return BeliefState(x_hat=np.zeros(5), P=default_P0())


def make_problem(model, initial, spec, horizon, **kwargs):
    return PlanProblem.from_bicycle(model, initial, spec, horizon, **kwargs)


def feasible_controls(model, horizon, seed, initial=None, spec=None):
    """Random control sequence satisfying the model's box and rate bounds."""
    problem = make_problem(
        model,
        initial if initial is not None else default_initial(),
        spec if spec is not None else LossSpec.trace(),
        horizon,
    )
    return sample_initial_controls(problem, seed)


def grad_violation(analytic, fd, rel=1e-4, abs_floor=1e-8):
    """Worst excess of |analytic - fd| over the acceptance envelope.

    An entry passes when its absolute difference is below ``abs_floor`` or
    its relative difference is below ``rel``; the return value is the largest
    positive excess (so <= 0 means every entry passes).
    """
    analytic = np.asarray(analytic, dtype=float)
    fd = np.asarray(fd, dtype=float)
    diff = np.abs(analytic - fd)
    allowed = np.maximum(abs_floor, rel * np.maximum(np.abs(analytic), np.abs(fd)))
    return float((diff - allowed).max())


def assert_grad_close(analytic, fd, rel=1e-4, abs_floor=1e-8, context=""):
    excess = grad_violation(analytic, fd, rel=rel, abs_floor=abs_floor)
    assert excess <= 0.0, f"{context}: worst tolerance excess {excess:.3e}"


def fd_loss_gradient(loss_of_matrix, P, h=1e-6):
    """Independent finite-difference gradient of a scalar loss over a
    symmetric matrix, perturbing (i, j) and (j, i) jointly with half weight."""
    P = np.asarray(P, dtype=float)
    d = P.shape[0]
    grad = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            step = h * (1.0 + abs(float(P[i, j])))
            delta = np.zeros((d, d))
            if i == j:
                delta[i, i] = step
            else:
                delta[i, j] = delta[j, i] = 0.5 * step
            grad[i, j] = grad[j, i] = (loss_of_matrix(P + delta) - loss_of_matrix(P - delta)) / (2.0 * step)
    return grad


@pytest.fixture(scope="session")
def bicycle():
    return BicycleModel()
