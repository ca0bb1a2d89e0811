"""Finite-difference oracles and matrix-calculus rule checks.

Everything here exists to verify the analytical gradients independently:
central finite differences of the full filter-plus-loss pipeline for each
input family, an injection-based check for the per-step state gradients
(run on its own plain filter loop, not the production one), and randomized
verification of the scalar-over-matrix calculus rules the backward sweep
is built from.
"""

import enum

import numpy as np

from .ekf import forward_pass
from .errors import ContractError, DomainError
from .linalg import random_spd, sym
from .losses import evaluate


def pipeline_loss(initial, controls, model, spec):
    """Loss of one full forward pass; the scalar every oracle differentiates."""
    return evaluate(spec, forward_pass(initial, controls, model).final_covariance)


def _entry_step(value, h):
    return h if h is not None else 1e-5 * (1.0 + abs(float(value)))


def fd_gradient_controls(initial, controls, model, spec, h=None, scheme="central"):
    """Finite-difference gradient of the pipeline loss over all control entries.

    Central differences by default; ``scheme="forward"`` switches to one-sided
    differences, which cost one pass per entry plus one base pass and exist to
    reproduce the cost profile of the naive baseline in benchmarks. If a
    perturbed entry leaves the dynamics' domain the step is shrunk up to three
    times before the failure propagates.
    """
    if scheme not in ("central", "forward"):
        raise ContractError(f"unknown finite-difference scheme {scheme!r}")
    controls = np.asarray(controls, dtype=float)
    grad = np.zeros_like(controls)
    base = pipeline_loss(initial, controls, model, spec) if scheme == "forward" else None
    for n in range(controls.shape[0]):
        for k in range(controls.shape[1]):
            step = _entry_step(controls[n, k], h)
            for attempt in range(4):
                work = controls.copy()
                try:
                    if scheme == "forward":
                        work[n, k] = controls[n, k] + step
                        hi = pipeline_loss(initial, work, model, spec)
                        grad[n, k] = (hi - base) / step
                    else:
                        work[n, k] = controls[n, k] + step
                        hi = pipeline_loss(initial, work, model, spec)
                        work[n, k] = controls[n, k] - step
                        lo = pipeline_loss(initial, work, model, spec)
                        grad[n, k] = (hi - lo) / (2.0 * step)
                    break
                except DomainError:
                    if attempt == 3:
                        raise
                    step *= 0.1
    return grad


class _NoiseOverride:
    """Delegating model wrapper replacing Q or R at one step."""

    def __init__(self, base, step, Q=None, R=None):
        self._base = base
        self._step = step
        self._Q_override = Q
        self._R_override = R

    def __getattr__(self, name):
        return getattr(self._base, name)

    def Q(self, n):
        if n == self._step and self._Q_override is not None:
            return self._Q_override
        return self._base.Q(n)

    def R(self, n, x):
        if n == self._step and self._R_override is not None:
            return self._R_override
        return self._base.R(n, x)


def _fd_symmetric_matrix(loss_of_matrix, M, h=None):
    """Central differences of a scalar over a symmetric matrix argument.

    Off-diagonal entries (i, j) and (j, i) are perturbed jointly with half
    weight each, which recovers the all-entries-independent gradient
    convention exactly when that gradient is symmetric.
    """
    M = np.asarray(M, dtype=float)
    d = M.shape[0]
    grad = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            step = _entry_step(M[i, j], h)
            delta = np.zeros((d, d))
            if i == j:
                delta[i, i] = step
            else:
                delta[i, j] = 0.5 * step
                delta[j, i] = 0.5 * step
            hi = loss_of_matrix(M + delta)
            lo = loss_of_matrix(M - delta)
            grad[i, j] = grad[j, i] = (hi - lo) / (2.0 * step)
    return grad


def fd_gradient_process_noise(initial, controls, model, spec, step, h=None):
    """Finite-difference gradient with respect to Q at one step (1-based)."""
    Qn = np.asarray(model.Q(step), dtype=float)

    def loss_of(Q_pert):
        return pipeline_loss(initial, controls, _NoiseOverride(model, step, Q=Q_pert), spec)

    return _fd_symmetric_matrix(loss_of, Qn, h)


def fd_gradient_measurement_noise(initial, controls, model, spec, step, h=None):
    """Finite-difference gradient with respect to R at one step (1-based).

    Only meaningful for models whose R does not depend on the state; the
    override replaces the whole matrix at that step.
    """
    trace = forward_pass(initial, controls, model)
    Rn = trace.steps[step - 1].R

    def loss_of(R_pert):
        return pipeline_loss(initial, controls, _NoiseOverride(model, step, R=R_pert), spec)

    return _fd_symmetric_matrix(loss_of, Rn, h)


def fd_gradient_initial_covariance(initial, controls, model, spec, h=None):
    """Finite-difference gradient with respect to the initial covariance."""
    from .ekf import BeliefState

    def loss_of(P_pert):
        return pipeline_loss(BeliefState(initial.x_hat, P_pert), controls, model, spec)

    return _fd_symmetric_matrix(loss_of, initial.P, h)


def _loss_with_state_offset(initial, controls, model, spec, step, offset):
    # Plain filter loop, independent of the production forward pass, with a
    # perturbation injected into the state estimate at one step.
    x = np.asarray(initial.x_hat, dtype=float).copy()
    P = np.asarray(initial.P, dtype=float).copy()
    if step == 0:
        x = x + offset
    zeros_w = np.zeros(model.noise_dim)
    eye = np.eye(model.state_dim)
    for i, u in enumerate(np.asarray(controls, dtype=float)):
        n = i + 1
        F = model.F(x, u)
        G = model.G(x, u)
        x = model.f(x, u, zeros_w)
        if n == step:
            x = x + offset
        P = sym(F @ P @ F.T + G @ model.Q(n) @ G.T)
        H = model.H(x)
        R = model.R(n, x)
        S = H @ P @ H.T + R
        K = P @ H.T @ np.linalg.inv(S)
        P = sym((eye - K @ H) @ P)
    return evaluate(spec, P)


def fd_gradient_state_at_step(initial, controls, model, spec, step, h=1e-6):
    """Finite-difference gradient with respect to the state estimate at a step.

    ``step = 0`` perturbs the initial estimate; ``step = n`` perturbs the
    estimate produced at step n before it is consumed by the measurement
    maps and by the following step.
    """
    d = model.state_dim
    grad = np.zeros(d)
    for k in range(d):
        offset = np.zeros(d)
        offset[k] = h
        hi = _loss_with_state_offset(initial, controls, model, spec, step, offset)
        lo = _loss_with_state_offset(initial, controls, model, spec, step, -offset)
        grad[k] = (hi - lo) / (2.0 * h)
    return grad


class MatrixRule(enum.Enum):
    XYXT = "xyxt"
    YXYT = "yxyt"
    INVERSE = "inverse"
    VECTOR_CHAIN = "vector_chain"
    SCALAR_TRACE = "scalar_trace"


def _matrix_loss(W):
    """Smooth scalar loss on a matrix with a closed-form gradient.

    L(M) = tr(W M) + tr(M W M W) / 2, so dL/dM = W + W M' W. At symmetric
    arguments the gradient is symmetric, matching the regime in which the
    congruence rules are stated.
    """

    def value(M):
        return float(np.trace(W @ M) + 0.5 * np.einsum("ab,bc,cd,da->", M, W, M, W))

    def grad(M):
        return W + W @ M.T @ W

    return value, grad


def _fd_matrix(fun, X, h=1e-6):
    X = np.asarray(X, dtype=float)
    out = np.zeros_like(X)
    it = np.nditer(X, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        step = h * (1.0 + abs(float(X[idx])))
        Xp = X.copy()
        Xp[idx] += step
        Xm = X.copy()
        Xm[idx] -= step
        out[idx] = (fun(Xp) - fun(Xm)) / (2.0 * step)
    return out


def _max_rel(analytic, fd):
    analytic = np.asarray(analytic, dtype=float)
    fd = np.asarray(fd, dtype=float)
    scale = max(float(np.abs(analytic).max()), 1e-12)
    return float(np.abs(analytic - fd).max() / scale)


def verify_matrix_rule(rule, dim, rng):
    """Check one calculus rule on a random instance; returns max relative error.

    Each call draws fresh matrices, evaluates the rule's closed-form gradient,
    and compares it against entrywise central differences of the composed
    scalar function.
    """
    W = random_spd(dim, rng)
    loss, loss_grad = _matrix_loss(W)

    if rule == MatrixRule.XYXT:
        X = rng.standard_normal((dim, dim))
        Y = random_spd(dim, rng)
        analytic = 2.0 * loss_grad(X @ Y @ X.T) @ X @ Y.T
        fd = _fd_matrix(lambda Z: loss(Z @ Y @ Z.T), X)
        return _max_rel(analytic, fd)

    if rule == MatrixRule.YXYT:
        X = rng.standard_normal((dim, dim))
        Y = rng.standard_normal((dim, dim))
        analytic = Y.T @ loss_grad(Y @ X @ Y.T) @ Y
        fd = _fd_matrix(lambda Z: loss(Y @ Z @ Y.T), X)
        return _max_rel(analytic, fd)

    if rule == MatrixRule.INVERSE:
        X = random_spd(dim, rng, eig_low=0.8, eig_high=2.5)
        M = np.linalg.inv(X)
        analytic = -M.T @ loss_grad(M) @ M.T
        fd = _fd_matrix(lambda Z: loss(np.linalg.inv(Z)), X)
        return _max_rel(analytic, fd)

    if rule == MatrixRule.VECTOR_CHAIN:
        A = rng.standard_normal((dim, dim))
        Wv = random_spd(dim, rng)
        x = rng.standard_normal(dim)

        def fun(z):
            m = (A @ z) ** 2
            return float(0.5 * m @ Wv @ m)

        m0 = (A @ x) ** 2
        J = 2.0 * np.diag(A @ x) @ A
        analytic = J.T @ (Wv @ m0)
        step = 1e-6
        fd = np.array(
            [
                (fun(x + step * e) - fun(x - step * e)) / (2.0 * step)
                for e in np.eye(dim)
            ]
        )
        return _max_rel(analytic, fd)

    if rule == MatrixRule.SCALAR_TRACE:
        A = rng.standard_normal((dim, dim))
        B = rng.standard_normal((dim, dim))
        C = rng.standard_normal((dim, dim))
        s = float(rng.uniform(-1.0, 1.0))

        def X_of(t):
            return A + t * B + t * t * C

        dX = B + 2.0 * s * C
        analytic = float(np.sum(dX * loss_grad(X_of(s))))
        step = 1e-6
        fd = (loss(X_of(s + step)) - loss(X_of(s - step))) / (2.0 * step)
        return _max_rel(np.array([analytic]), np.array([fd]))

    raise ContractError(f"unknown matrix rule {rule!r}")


_JACOBIAN_MEMBERS = ("F", "G", "H", "J_u")
_DERIVATIVE_MEMBERS = ("dF_dx", "dF_du", "dG_dx", "dG_du", "dH_dx", "dR_dx")


def check_model_derivatives(model, points, h=1e-6):
    """Compare every Jacobian and Jacobian-derivative of a model against
    central finite differences of the map it claims to differentiate.

    ``points`` is an iterable of (x, u) samples. Returns a dict mapping each
    member name to its worst relative discrepancy over the samples.
    """
    worst = {name: 0.0 for name in _JACOBIAN_MEMBERS + _DERIVATIVE_MEMBERS}

    def rel(analytic, fd):
        scale = max(float(np.abs(analytic).max()), float(np.abs(fd).max()), 1e-2)
        return float(np.abs(analytic - fd).max() / scale)

    def fd_columns(fun, v0, h0):
        cols = []
        for k in range(v0.size):
            step = h0 * (1.0 + abs(float(v0[k])))
            vp = v0.copy()
            vp[k] += step
            vm = v0.copy()
            vm[k] -= step
            cols.append((fun(vp) - fun(vm)) / (2.0 * step))
        return np.stack(cols, axis=-1)

    zeros_w = np.zeros(model.noise_dim)
    for x, u in points:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)

        F_fd = fd_columns(lambda xv: model.f(xv, u, zeros_w), x, h)
        worst["F"] = max(worst["F"], rel(model.F(x, u), F_fd))
        G_fd = fd_columns(lambda wv: model.f(x, u, wv), zeros_w.copy(), h)
        worst["G"] = max(worst["G"], rel(model.G(x, u), G_fd))
        H_fd = fd_columns(model.h, x, h)
        worst["H"] = max(worst["H"], rel(model.H(x), H_fd))
        Ju_fd = fd_columns(lambda uv: model.f(x, uv, zeros_w), u, h)
        worst["J_u"] = max(worst["J_u"], rel(model.J_u(x, u), Ju_fd))

        for k in range(model.state_dim):
            step = h * (1.0 + abs(float(x[k])))
            xp = x.copy()
            xp[k] += step
            xm = x.copy()
            xm[k] -= step
            worst["dF_dx"] = max(
                worst["dF_dx"],
                rel(model.dF_dx(x, u, k), (model.F(xp, u) - model.F(xm, u)) / (2 * step)),
            )
            worst["dG_dx"] = max(
                worst["dG_dx"],
                rel(model.dG_dx(x, u, k), (model.G(xp, u) - model.G(xm, u)) / (2 * step)),
            )
            worst["dH_dx"] = max(
                worst["dH_dx"],
                rel(model.dH_dx(x, k), (model.H(xp) - model.H(xm)) / (2 * step)),
            )
            worst["dR_dx"] = max(
                worst["dR_dx"],
                rel(model.dR_dx(x, k), (model.R(1, xp) - model.R(1, xm)) / (2 * step)),
            )
        for k in range(model.control_dim):
            step = h * (1.0 + abs(float(u[k])))
            up = u.copy()
            up[k] += step
            um = u.copy()
            um[k] -= step
            worst["dF_du"] = max(
                worst["dF_du"],
                rel(model.dF_du(x, u, k), (model.F(x, up) - model.F(x, um)) / (2 * step)),
            )
            worst["dG_du"] = max(
                worst["dG_du"],
                rel(model.dG_du(x, u, k), (model.G(x, up) - model.G(x, um)) / (2 * step)),
            )
    return worst
