"""Closed-form gradients of a covariance loss with respect to every filter input.

One backward sweep over a recorded forward pass yields the derivatives of a
scalar loss on the final covariance with respect to all control inputs, the
per-step noise covariances, the initial state estimate, and the initial
covariance. The sweep mirrors the filter's dependency structure:

* posterior-to-prior pullback through the gain,
  dL/dP_prior = (I - K H)' dL/dP_post (I - K H),
* prior-to-previous-posterior pullback through the dynamics Jacobian,
  dL/dP_prev = F' dL/dP_prior F,
* Jacobian sensitivities dL/dF = 2 dL/dP_prior F P_prev,
  dL/dG = 2 dL/dP_prior G Q, and their measurement-side counterparts
  dL/dH and dL/dR assembled through R^{-1},
* process-noise sensitivity dL/dQ = G' dL/dP_prior G,
* scalar chain rules folding the Jacobian derivatives into per-component
  control and state gradients.

The state gradient at the final step only collects the measurement-map and
measurement-noise terms; earlier steps additionally receive contributions
through the next step's Jacobians and state. Everything is computed in a
single pass whose cost matches one forward filter run.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .ekf import EKFTrace, forward_pass
from .errors import NumericalError, SingularNoiseError
from .linalg import sym
from .losses import evaluate, seed_gradient


@dataclass(eq=False)
class BackpropIntermediates:
    """Per-step internal gradients, retained only on request (debug aid)."""

    dP_post: list = field(default_factory=list)  # index n = 0..N
    dP_prior: list = field(default_factory=list)  # index n = 1..N
    dF: list = field(default_factory=list)
    dG: list = field(default_factory=list)
    dH: list = field(default_factory=list)


@dataclass(eq=False)
class GradientSet:
    """All backpropagated derivatives of one loss evaluation.

    ``dL_du[i]`` is the gradient with respect to the control applied at step
    i + 1; ``dL_dxhat[n]`` with respect to the state estimate at step n
    (n = 0 is the initial estimate); ``dL_dQ`` and ``dL_dR`` hold one matrix
    per step; ``dL_dP0`` is the gradient with respect to the initial
    covariance.
    """

    dL_du: np.ndarray
    dL_dxhat: np.ndarray
    dL_dQ: np.ndarray
    dL_dR: np.ndarray
    dL_dP0: np.ndarray
    intermediates: BackpropIntermediates | None = None


def _require_finite(array, step, what):
    if not np.isfinite(array).all():
        raise NumericalError(f"step {step}: gradient of {what} is non-finite")


def backward_pass(trace: EKFTrace, spec, model, keep_intermediates=False):
    """Sweep the recorded forward pass from the last step to the first.

    The sweep is seeded with the symmetrized loss gradient at the final
    posterior covariance and maintains the running covariance gradient plus
    an accumulator of state-estimate gradients, adding each variable's
    contribution exactly when all of its successors have been processed.
    """
    steps = trace.steps
    N = len(steps)
    d = model.state_dim
    d_u = model.control_dim

    dL_du = np.zeros((N, d_u))
    dL_dxhat = np.zeros((N + 1, d))
    dL_dQ = np.zeros((N, model.noise_dim, model.noise_dim))
    dL_dR = np.zeros((N, model.obs_dim, model.obs_dim))

    inter = BackpropIntermediates() if keep_intermediates else None

    dP_post = sym(seed_gradient(spec, steps[-1].P_post))
    for i in range(N - 1, -1, -1):
        rec = steps[i]
        n = i + 1
        P_prev = steps[i - 1].P_post if i > 0 else trace.initial.P

        # Measurement-side sensitivities at this step's posterior.
        try:
            r_chol = cho_factor(rec.R, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularNoiseError(f"step {n}: measurement noise not positive definite") from exc
        T = rec.P_post @ dP_post @ rec.P_post
        HT = rec.H @ T
        dH = -2.0 * cho_solve(r_chol, HT)
        dR = sym(cho_solve(r_chol, cho_solve(r_chol, HT @ rec.H.T).T))
        _require_finite(dH, n, "the measurement Jacobian")
        dL_dR[i] = dR

        # The state estimate at n feeds H_n and R_n; later-step terms were
        # already accumulated while processing step n + 1.
        x_n = rec.x_hat
        for k in range(d):
            dL_dxhat[n, k] += float(np.sum(dH * model.dH_dx(x_n, k)))
            dL_dxhat[n, k] += float(np.sum(dR * model.dR_dx(x_n, k)))

        # Pull the covariance gradient back through update and propagation.
        IKH = np.eye(d) - rec.K @ rec.H
        dP_prior = sym(IKH.T @ dP_post @ IKH)
        _require_finite(dP_prior, n, "the prior covariance")
        dF = 2.0 * dP_prior @ rec.F @ P_prev
        dG = 2.0 * dP_prior @ rec.G @ rec.Q
        dL_dQ[i] = sym(rec.G.T @ dP_prior @ rec.G)

        x_prev, u = rec.x_hat_prev, rec.u
        for k in range(d_u):
            dL_du[i, k] = float(np.sum(dF * model.dF_du(x_prev, u, k))) + float(
                np.sum(dG * model.dG_du(x_prev, u, k))
            )
        dL_du[i] += model.J_u(x_prev, u).T @ dL_dxhat[n]
        _require_finite(dL_du[i], n, "the control input")

        for k in range(d):
            dL_dxhat[n - 1, k] = float(np.sum(dF * model.dF_dx(x_prev, u, k))) + float(
                np.sum(dG * model.dG_dx(x_prev, u, k))
            )
        dL_dxhat[n - 1] += rec.F.T @ dL_dxhat[n]

        if inter is not None:
            inter.dP_post.append(dP_post)
            inter.dP_prior.append(dP_prior)
            inter.dF.append(dF)
            inter.dG.append(dG)
            inter.dH.append(dH)

        dP_post = sym(rec.F.T @ dP_prior @ rec.F)

    _require_finite(dL_dxhat, 0, "the state estimates")
    dL_dP0 = dP_post
    if inter is not None:
        inter.dP_post.append(dL_dP0)
        for seq in (inter.dP_post, inter.dP_prior, inter.dF, inter.dG, inter.dH):
            seq.reverse()

    return GradientSet(
        dL_du=dL_du,
        dL_dxhat=dL_dxhat,
        dL_dQ=dL_dQ,
        dL_dR=dL_dR,
        dL_dP0=dL_dP0,
        intermediates=inter,
    )


def gradient_of_loss(initial, controls, model, spec, keep_intermediates=False):
    """Forward pass, loss evaluation, and backward sweep in one call.

    Returns (loss, gradients). The cost is a small multiple of running the
    filter once, independent of how many inputs the gradient covers.
    """
    trace = forward_pass(initial, controls, model)
    loss = evaluate(spec, trace.final_covariance)
    grads = backward_pass(trace, spec, model, keep_intermediates=keep_intermediates)
    return loss, grads
