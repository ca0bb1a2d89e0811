import numpy as np
import pytest

from covgrad import (
    BeliefState,
    BicycleModel,
    LinearModel,
    LossSpec,
    ScalarToyModel,
    backward_pass,
    forward_pass,
    gradient_of_loss,
)
from covgrad.gradcheck import (
    fd_gradient_controls,
    fd_gradient_initial_covariance,
    fd_gradient_measurement_noise,
    fd_gradient_process_noise,
    fd_gradient_state_at_step,
)
from covgrad.linalg import sym
from covgrad.models import BicycleParams
from conftest import assert_grad_close, default_initial, default_P0, feasible_controls


def random_bicycle_instance(seed, horizon):
    """Random model parameters, start belief, and feasible controls."""
    rng = np.random.default_rng(seed)
    params = BicycleParams(
        wheelbase=rng.uniform(2.0, 6.0),
        dt=rng.uniform(0.5, 1.5),
        Q=np.diag([rng.uniform(0.05, 0.3), rng.uniform(0.005, 0.05)]) ** 2,
        R=np.eye(2) * rng.uniform(0.5, 2.0) ** 2,
    )
    model = BicycleModel(params)
    x0 = np.array(
        [
            rng.uniform(-np.pi, np.pi),
            rng.uniform(-5, 5),
            rng.uniform(-5, 5),
            rng.uniform(-1, 1),
            rng.uniform(-1, 1),
        ]
    )
    P0 = np.diag(rng.uniform(0.05, 2.0, size=5))
    initial = BeliefState(x0, P0)
    controls = feasible_controls(model, horizon, seed=seed, initial=initial)
    return model, initial, controls


# ---------------------------------------------------------------------------
# exact oracles


def test_linear_model_control_gradient_is_exactly_zero():
    model = LinearModel.default()
    initial = BeliefState(np.zeros(3), np.eye(3))
    controls = np.random.default_rng(0).standard_normal((50, 2))
    for spec in (LossSpec.trace(), LossSpec.normalized_trace(np.eye(3)), LossSpec.schatten(20.0)):
        _, grads = gradient_of_loss(initial, controls, model, spec)
        assert np.abs(grads.dL_du).max() == 0.0


def test_scalar_toy_matches_hand_expanded_derivative():
    # One step of the scalar model: P1 = (p0 + u^2 q) r / (p0 + u^2 q + r),
    # so d tr(P1)/du = 2 u q r^2 / (p0 + u^2 q + r)^2.
    q, r, p0 = 0.3, 0.7, 0.5
    model = ScalarToyModel(q=q, r=r)
    initial = BeliefState(np.array([0.2]), np.array([[p0]]))
    for u0 in (-1.3, -0.4, 0.0, 0.9, 2.0):
        _, grads = gradient_of_loss(initial, np.array([[u0]]), model, LossSpec.trace())
        expected = 2.0 * u0 * q * r**2 / (p0 + u0**2 * q + r) ** 2
        assert grads.dL_du[0, 0] == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_scalar_toy_posterior_value():
    q, r, p0, u0 = 0.3, 0.7, 0.5, 0.9
    model = ScalarToyModel(q=q, r=r)
    initial = BeliefState(np.array([0.2]), np.array([[p0]]))
    trace = forward_pass(initial, np.array([[u0]]), model)
    prior = p0 + u0**2 * q
    assert trace.steps[0].P_prior[0, 0] == pytest.approx(prior, rel=1e-14)
    assert trace.final_covariance[0, 0] == pytest.approx(prior * r / (prior + r), rel=1e-14)


# ---------------------------------------------------------------------------
# finite-difference agreement


def test_bicycle_paper_scale_control_gradient_vs_fd(bicycle):
    initial = default_initial()
    controls = feasible_controls(bicycle, 150, seed=11)
    spec = LossSpec.normalized_trace(default_P0())
    _, grads = gradient_of_loss(initial, controls, bicycle, spec)
    fd = fd_gradient_controls(initial, controls, bicycle, spec)
    assert_grad_close(grads.dL_du, fd, rel=1e-4, context="N=150 controls")


@pytest.mark.parametrize("seed,horizon", [(s, h) for s, h in zip(range(20), [3, 10, 50] * 7)])
def test_all_input_gradients_vs_fd_random_instances(seed, horizon):
    model, initial, controls = random_bicycle_instance(seed, horizon)
    spec = (LossSpec.trace(), LossSpec.normalized_trace(initial.P), LossSpec.schatten(20.0))[
        seed % 3
    ]
    _, grads = gradient_of_loss(initial, controls, model, spec)

    fd_u = fd_gradient_controls(initial, controls, model, spec)
    assert_grad_close(grads.dL_du, fd_u, context=f"controls seed={seed}")

    steps = {1, max(1, horizon // 2), horizon}
    for n in steps:
        fd_q = fd_gradient_process_noise(initial, controls, model, spec, n)
        assert_grad_close(grads.dL_dQ[n - 1], fd_q, context=f"Q step {n} seed={seed}")
        fd_r = fd_gradient_measurement_noise(initial, controls, model, spec, n)
        assert_grad_close(grads.dL_dR[n - 1], fd_r, context=f"R step {n} seed={seed}")

    fd_p0 = fd_gradient_initial_covariance(initial, controls, model, spec)
    assert_grad_close(grads.dL_dP0, fd_p0, context=f"P0 seed={seed}")


def test_state_estimate_gradients_vs_injection_oracle(bicycle):
    initial = BeliefState(
        np.array([0.1, 0.0, 0.0, 0.3, -0.2]), default_P0()
    )
    controls = feasible_controls(bicycle, 12, seed=3, initial=initial)
    spec = LossSpec.normalized_trace(default_P0())
    _, grads = gradient_of_loss(initial, controls, bicycle, spec)
    for step in (0, 1, 6, 12):
        fd = fd_gradient_state_at_step(initial, controls, bicycle, spec, step)
        assert_grad_close(grads.dL_dxhat[step], fd, context=f"state step {step}")


class StateDependentNoiseModel(BicycleModel):
    """Bicycle with measurement noise growing with the x position.

    Exercises the measurement-noise terms of the state-gradient recursion,
    which constant-noise models leave untouched.
    """

    def R(self, n, x):
        return (1.0 + x[1] ** 2) * self.params.R

    def dR_dx(self, x, k):
        self._check_state_index(k)
        if k == 1:
            return 2.0 * x[1] * self.params.R
        return np.zeros((2, 2))


def test_state_dependent_measurement_noise_gradients():
    model = StateDependentNoiseModel()
    initial = BeliefState(np.array([0.05, 0.2, -0.1, 0.4, 0.3]), default_P0())
    controls = feasible_controls(model, 8, seed=5, initial=initial)
    spec = LossSpec.trace()
    _, grads = gradient_of_loss(initial, controls, model, spec)
    fd_u = fd_gradient_controls(initial, controls, model, spec)
    assert_grad_close(grads.dL_du, fd_u, context="state-dependent R controls")
    for step in (0, 4, 8):
        fd = fd_gradient_state_at_step(initial, controls, model, spec, step)
        assert_grad_close(grads.dL_dxhat[step], fd, context=f"state-dependent R state {step}")


# ---------------------------------------------------------------------------
# structural properties


def test_gradient_of_loss_composition(bicycle):
    initial = default_initial()
    controls = feasible_controls(bicycle, 20, seed=6)
    spec = LossSpec.schatten(20.0)
    loss, _ = gradient_of_loss(initial, controls, bicycle, spec)
    from covgrad.losses import evaluate

    direct = evaluate(spec, forward_pass(initial, controls, bicycle).final_covariance)
    assert loss == direct


def test_noise_and_initial_gradients_are_symmetric(bicycle):
    initial = default_initial()
    controls = feasible_controls(bicycle, 30, seed=7)
    _, grads = gradient_of_loss(initial, controls, bicycle, LossSpec.normalized_trace(default_P0()))
    assert np.abs(grads.dL_dP0 - grads.dL_dP0.T).max() <= 1e-10 * max(1.0, np.abs(grads.dL_dP0).max())
    for i in range(30):
        assert np.abs(grads.dL_dR[i] - grads.dL_dR[i].T).max() <= 1e-10
        assert np.abs(grads.dL_dQ[i] - grads.dL_dQ[i].T).max() <= 1e-10


def test_intermediates_replay_bit_identical(bicycle):
    initial = default_initial()
    controls = feasible_controls(bicycle, 15, seed=8)
    spec = LossSpec.trace()
    trace = forward_pass(initial, controls, bicycle)
    grads = backward_pass(trace, spec, bicycle, keep_intermediates=True)
    inter = grads.intermediates
    assert len(inter.dP_post) == len(trace.steps) + 1
    for i, rec in enumerate(trace.steps):
        n = i + 1
        IKH = np.eye(5) - rec.K @ rec.H
        replay_prior = sym(IKH.T @ inter.dP_post[n] @ IKH)
        assert np.array_equal(replay_prior, inter.dP_prior[i])
        replay_post = sym(rec.F.T @ inter.dP_prior[i] @ rec.F)
        assert np.array_equal(replay_post, inter.dP_post[n - 1])
    assert np.array_equal(inter.dP_post[0], grads.dL_dP0)


def test_intermediates_absent_by_default(bicycle):
    initial = default_initial()
    controls = feasible_controls(bicycle, 5, seed=9)
    _, grads = gradient_of_loss(initial, controls, bicycle, LossSpec.trace())
    assert grads.intermediates is None


def test_all_gradients_finite(bicycle):
    initial = default_initial()
    controls = feasible_controls(bicycle, 40, seed=10)
    _, grads = gradient_of_loss(initial, controls, bicycle, LossSpec.schatten(20.0))
    for arr in (grads.dL_du, grads.dL_dxhat, grads.dL_dQ, grads.dL_dR, grads.dL_dP0):
        assert np.isfinite(arr).all()
