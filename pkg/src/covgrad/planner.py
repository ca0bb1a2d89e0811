"""Minimum-uncertainty trajectory planning by projected gradient descent.

The planner minimizes a scalar loss on the filter's final covariance over
the whole control sequence, subject to box bounds on each control and rate
bounds between consecutive controls. Each iteration computes the loss
gradient with one forward and one backward pass, takes a projected step,
and backtracks until the Armijo sufficient-decrease test accepts. Every
accepted iterate is feasible and the recorded loss history is monotone.

An optional corridor term penalizes deviation of the planned positions from
a reference trajectory; it is a soft quadratic penalty whose gradient is
accumulated by a small adjoint recursion over the noise-free rollout.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .backprop import gradient_of_loss
from .ekf import BeliefState, forward_pass
from .errors import ContractError, LineSearchError, NumericalError
from .gradcheck import fd_gradient_controls
from .losses import evaluate


class Termination(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    LINE_SEARCH_FAILED = "line_search_failed"


@dataclass(eq=False)
class CorridorSpec:
    """Soft limit on deviation from a reference trajectory.

    ``reference`` holds one position row per rollout step (N + 1 rows); when
    omitted, the rollout of the optimizer's starting controls is used.
    ``position_indices`` selects the state components that form the position.
    """

    max_deviation: float
    weight: float = 10.0
    reference: np.ndarray | None = None
    position_indices: tuple = (1, 2)


@dataclass(eq=False)
class OptimizerOptions:
    max_iters: int = 150
    tol: float = 1e-6
    patience: int = 3
    alpha0: float = 1.0
    armijo_c1: float = 1e-4
    max_halvings: int = 30
    verify_gradients: bool = False
    verify_tol: float = 1e-4


@dataclass(eq=False)
class PlanProblem:
    """A planning instance: model, belief, loss, horizon, and constraints."""

    initial: BeliefState
    model: object
    loss: object
    horizon: int
    u_min: np.ndarray
    u_max: np.ndarray
    du_max: np.ndarray
    corridor: CorridorSpec | None = None
    options: OptimizerOptions = field(default_factory=OptimizerOptions)

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractError("horizon must contain at least one step")
        self.u_min = np.asarray(self.u_min, dtype=float)
        self.u_max = np.asarray(self.u_max, dtype=float)
        self.du_max = np.asarray(self.du_max, dtype=float)
        if not np.all(self.u_min <= self.u_max):
            raise ContractError("u_min must not exceed u_max")

    @classmethod
    def from_bicycle(cls, model, initial, loss, horizon, corridor=None, options=None):
        p = model.params
        return cls(
            initial=initial,
            model=model,
            loss=loss,
            horizon=horizon,
            u_min=p.u_min,
            u_max=p.u_max,
            du_max=p.du_max,
            corridor=corridor,
            options=options if options is not None else OptimizerOptions(),
        )


@dataclass(eq=False)
class PlanResult:
    controls: np.ndarray
    states: np.ndarray
    loss_history: list
    final_loss: float
    feasible: bool
    iterations: int
    termination: Termination
    final_covariance_loss: float = 0.0
    corridor_violation: float = 0.0


def sample_initial_controls(problem, rng_seed):
    """Uniform draw inside the box bounds, then projected to satisfy rates."""
    rng = np.random.default_rng(rng_seed)
    raw = rng.uniform(
        problem.u_min, problem.u_max, size=(problem.horizon, problem.u_min.size)
    )
    return project_constraints(raw, problem)


def project_constraints(controls, problem):
    """Clamp to the box, then sweep forward once enforcing rate bounds.

    Each step is clipped into the intersection of the box and the rate window
    around the previous already-projected step; with consistent bounds that
    intersection is never empty, and the sweep is idempotent.
    """
    out = np.clip(np.asarray(controls, dtype=float), problem.u_min, problem.u_max)
    for n in range(1, out.shape[0]):
        lo = np.maximum(problem.u_min, out[n - 1] - problem.du_max)
        hi = np.minimum(problem.u_max, out[n - 1] + problem.du_max)
        if np.any(lo > hi):
            raise ContractError(f"empty feasible window at step {n}: rate and box bounds conflict")
        out[n] = np.clip(out[n], lo, hi)
    return out


def first_violation(controls, problem, tol=1e-9):
    """First step violating box or rate bounds, or None if feasible."""
    controls = np.asarray(controls, dtype=float)
    for n in range(controls.shape[0]):
        if np.any(controls[n] < problem.u_min - tol) or np.any(controls[n] > problem.u_max + tol):
            return n, "box bound"
        if n > 0 and np.any(np.abs(controls[n] - controls[n - 1]) > problem.du_max + tol):
            return n, "rate bound"
    return None


def rollout_states(problem, controls):
    """Noise-free state rollout, one row per step including the start."""
    x = np.asarray(problem.initial.x_hat, dtype=float).copy()
    states = [x.copy()]
    w = np.zeros(problem.model.noise_dim)
    for u in np.asarray(controls, dtype=float):
        x = problem.model.f(x, u, w)
        states.append(x.copy())
    return np.array(states)


def _corridor_reference(problem, fallback_controls):
    corr = problem.corridor
    if corr.reference is not None:
        return np.asarray(corr.reference, dtype=float)
    idx = list(corr.position_indices)
    return rollout_states(problem, fallback_controls)[:, idx]


def _corridor_terms(problem, states, reference):
    """Penalty value, per-step state gradients, and the worst deviation excess."""
    corr = problem.corridor
    idx = list(corr.position_indices)
    pos = states[:, idx]
    diff = pos - reference
    dist = np.linalg.norm(diff, axis=1)
    excess = np.maximum(0.0, dist - corr.max_deviation)
    value = corr.weight * float(np.sum(excess**2))
    grads = np.zeros_like(states)
    active = excess > 0.0
    if np.any(active):
        scale = 2.0 * corr.weight * excess[active] / dist[active]
        grads[np.ix_(active, idx)] = scale[:, None] * diff[active]
    return value, grads, float(excess.max(initial=0.0))


def _corridor_gradient(problem, states, controls, state_grads):
    """Adjoint sweep turning per-step state gradients into control gradients."""
    model = problem.model
    N = controls.shape[0]
    grad_u = np.zeros_like(controls)
    lam = state_grads[N].copy()
    for n in range(N, 0, -1):
        x_prev, u = states[n - 1], controls[n - 1]
        grad_u[n - 1] = model.J_u(x_prev, u).T @ lam
        lam = model.F(x_prev, u).T @ lam + state_grads[n - 1]
    return grad_u


def _objective(problem, controls, reference):
    """Total objective (covariance loss plus corridor penalty) at controls."""
    trace = forward_pass(problem.initial, controls, problem.model)
    cov_loss = evaluate(problem.loss, trace.final_covariance)
    if problem.corridor is None:
        return cov_loss, cov_loss, 0.0
    states = np.vstack([trace.initial.x_hat[None, :], [s.x_hat for s in trace.steps]])
    pen, _, excess = _corridor_terms(problem, states, reference)
    return cov_loss + pen, cov_loss, excess


def _objective_and_gradient(problem, controls, reference):
    loss, grads = gradient_of_loss(problem.initial, controls, problem.model, problem.loss)
    total_grad = grads.dL_du.copy()
    excess = 0.0
    total = loss
    if problem.corridor is not None:
        states = rollout_states(problem, controls)
        pen, state_grads, excess = _corridor_terms(problem, states, reference)
        total = loss + pen
        total_grad += _corridor_gradient(problem, states, controls, state_grads)
    return total, loss, excess, total_grad


def line_search(problem, controls, gradient, loss_at_controls, reference=None):
    """Backtracking projected-gradient step with Armijo acceptance.

    Candidates are the projections of ``controls - alpha * gradient``; the
    decrease requirement is measured against the step actually taken after
    projection. Each trial costs one full forward pass. Returns
    (alpha, new_controls, new_loss); a zero step with unchanged controls
    means the iterate is stationary under the constraints.
    """
    opts = problem.options
    if reference is None and problem.corridor is not None:
        reference = _corridor_reference(problem, controls)
    alpha = opts.alpha0 / (1.0 + float(np.abs(gradient).max(initial=0.0)))
    for _ in range(opts.max_halvings + 1):
        candidate = project_constraints(controls - alpha * gradient, problem)
        taken = controls - candidate
        if not taken.any():
            return 0.0, controls, loss_at_controls
        # The rate sweep is not an orthogonal projection, so the projected
        # step can tilt slightly against the gradient; the sufficient
        # decrease threshold is clamped at zero in that case and the step
        # must still strictly descend.
        decrease_needed = opts.armijo_c1 * max(float(np.sum(gradient * taken)), 0.0)
        new_loss, _, _ = _objective(problem, candidate, reference)
        if new_loss < loss_at_controls - decrease_needed:
            return alpha, candidate, new_loss
        alpha *= 0.5
    raise LineSearchError("no step satisfied the sufficient-decrease test")


def optimize(problem, initial_controls):
    """Iterate gradient, line search, and update until convergence.

    Stops when the relative loss improvement stays below the tolerance for
    ``patience`` consecutive accepted iterations, when the iterate is
    stationary under the constraints, at the iteration cap, or when the
    line search fails (reported in the result, not raised).
    """
    opts = problem.options
    controls = project_constraints(initial_controls, problem)
    reference = _corridor_reference(problem, controls) if problem.corridor is not None else None

    total, cov_loss, excess, grad = _objective_and_gradient(problem, controls, reference)
    history = [total]
    iterations = 0
    termination = Termination.MAX_ITERS
    quiet_streak = 0

    for _ in range(opts.max_iters):
        if opts.verify_gradients:
            _verify_gradient(problem, controls, grad, reference)
        try:
            alpha, new_controls, new_total = line_search(
                problem, controls, grad, total, reference
            )
        except LineSearchError:
            termination = Termination.LINE_SEARCH_FAILED
            break
        if alpha == 0.0:
            termination = Termination.CONVERGED
            break
        rel_improvement = (total - new_total) / max(abs(total), 1e-300)
        controls = new_controls
        iterations += 1
        history.append(new_total)
        total = new_total
        _, cov_loss, excess, grad = _objective_and_gradient(problem, controls, reference)
        if rel_improvement < opts.tol:
            quiet_streak += 1
            if quiet_streak >= opts.patience:
                termination = Termination.CONVERGED
                break
        else:
            quiet_streak = 0

    if any(b > a for a, b in zip(history, history[1:])):
        raise NumericalError("accepted iterates produced a non-monotone loss history")
    feasible = first_violation(controls, problem) is None

    return PlanResult(
        controls=controls,
        states=rollout_states(problem, controls),
        loss_history=history,
        final_loss=total,
        feasible=feasible,
        iterations=iterations,
        termination=termination,
        final_covariance_loss=cov_loss,
        corridor_violation=excess,
    )


def _verify_gradient(problem, controls, grad, reference):
    """Slow-mode check of the gradient in use against central differences."""
    if problem.corridor is None:
        fd = fd_gradient_controls(
            problem.initial, controls, problem.model, problem.loss
        )
    else:
        fd = np.zeros_like(controls)
        for n in range(controls.shape[0]):
            for k in range(controls.shape[1]):
                step = 1e-5 * (1.0 + abs(float(controls[n, k])))
                up = controls.copy()
                up[n, k] += step
                down = controls.copy()
                down[n, k] -= step
                hi, _, _ = _objective(problem, up, reference)
                lo, _, _ = _objective(problem, down, reference)
                fd[n, k] = (hi - lo) / (2.0 * step)
    tol = problem.options.verify_tol
    err = np.abs(grad - fd)
    bound = np.maximum(tol * np.maximum(np.abs(grad), np.abs(fd)), 1e-8)
    if np.any(err > bound):
        n, k = np.unravel_index(int(np.argmax(err - bound)), err.shape)
        raise NumericalError(
            f"gradient verification failed at entry ({n}, {k}): "
            f"analytic {grad[n, k]:.6e}, finite difference {fd[n, k]:.6e}"
        )
