"""Extended Kalman filter forward pass under the planning convention.

During trajectory optimization future measurements are not available, so
the filter is run with predicted measurements (zero innovation): the state
estimate follows the noise-free model while the covariance recursion stays
fully active. Every quantity the backward gradient sweep needs is recorded
in an :class:`EKFTrace`.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    ContractError,
    ModelContractError,
    NotPSDError,
    NumericalError,
    SingularInnovationError,
    SingularPriorError,
)
from .linalg import sym
from .models import SystemModel

MAX_INNOVATION_CONDITION = 1e12


@dataclass(eq=False)
class BeliefState:
    """State estimate and error covariance."""

    x_hat: np.ndarray
    P: np.ndarray

    def validate(self):
        x = np.asarray(self.x_hat, dtype=float)
        P = np.asarray(self.P, dtype=float)
        if x.ndim != 1 or P.shape != (x.size, x.size):
            raise ContractError(f"belief shapes inconsistent: x {x.shape}, P {P.shape}")
        if not np.isfinite(x).all() or not np.isfinite(P).all():
            raise NumericalError("belief state contains non-finite values")
        scale = max(float(np.trace(P)), 1e-300)
        if np.abs(P - P.T).max() > 1e-10 * scale:
            raise ContractError("covariance is not symmetric")
        if np.linalg.eigvalsh(P)[0] < -1e-10 * scale:
            raise NotPSDError("covariance has a significantly negative eigenvalue")


@dataclass(eq=False)
class EKFStepRecord:
    """All quantities produced while advancing the filter by one step."""

    x_hat_prev: np.ndarray
    u: np.ndarray
    x_hat: np.ndarray
    P_prior: np.ndarray
    P_post: np.ndarray
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    K: np.ndarray
    S: np.ndarray
    Q: np.ndarray
    R: np.ndarray


@dataclass(eq=False)
class EKFTrace:
    """Initial belief plus the ordered step records of one forward pass."""

    initial: BeliefState
    steps: list[EKFStepRecord] = field(default_factory=list)

    @property
    def horizon(self):
        return len(self.steps)

    @property
    def final_covariance(self):
        return self.steps[-1].P_post


def propagate(belief, u, model, n):
    """Advance the estimate through the noise-free model and grow the covariance.

    Returns (x_hat_prior, P_prior, F, G) with P_prior = F P F' + G Q G',
    explicitly symmetrized.
    """
    u = np.asarray(u, dtype=float)
    model.check_dims(belief.x_hat, u)
    x = np.asarray(belief.x_hat, dtype=float)
    F = model.F(x, u)
    G = model.G(x, u)
    Qn = model.Q(n)
    x_prior = model.f(x, u, np.zeros(model.noise_dim))
    P_prior = sym(F @ belief.P @ F.T + G @ Qn @ G.T)
    if not np.isfinite(x_prior).all() or not np.isfinite(P_prior).all():
        raise NumericalError(f"non-finite propagation result at step {n}")
    return x_prior, P_prior, F, G


def kalman_update(P_prior, H, R):
    """Covariance-only measurement update. Returns (P_post, K, S).

    The innovation covariance is inverted through a Cholesky solve, never
    explicitly, and the posterior is symmetrized.
    """
    S = sym(H @ P_prior @ H.T + R)
    eigs = np.linalg.eigvalsh(S)
    if eigs[0] <= 0.0 or eigs[-1] > MAX_INNOVATION_CONDITION * eigs[0]:
        raise SingularInnovationError(
            f"innovation covariance condition exceeds {MAX_INNOVATION_CONDITION:g}"
        )
    chol = cho_factor(S, lower=True)
    # K = P_prior H' S^{-1}  via  S^{-1} (H P_prior) transposed.
    K = cho_solve(chol, H @ P_prior).T
    P_post = sym((np.eye(P_prior.shape[0]) - K @ H) @ P_prior)
    return P_post, K, S


def update(x_hat_prior, P_prior, model, n):
    """Measurement update at the predicted measurement.

    The estimate is not moved: planning uses y_n = h(x_hat_prior), so the
    innovation is zero and only the covariance contracts.
    Returns (P_post, K, S, H).
    """
    H = model.H(x_hat_prior)
    R = model.R(n, x_hat_prior)
    P_post, K, S = kalman_update(P_prior, H, R)
    return P_post, K, S, H


def information_update(P_prior, H, R):
    """Measurement update written on inverse covariances.

    Returns (P_prior^{-1} + H' R^{-1} H)^{-1}. Explicit inverses are fine
    here: this form exists as an independent oracle for :func:`update`,
    not as a production path.
    """
    P_prior = np.asarray(P_prior, dtype=float)
    try:
        np.linalg.cholesky(P_prior)
    except np.linalg.LinAlgError as exc:
        raise SingularPriorError("prior covariance must be strictly positive definite") from exc
    info = np.linalg.inv(P_prior) + H.T @ np.linalg.inv(R) @ H
    return np.linalg.inv(info)


def forward_pass(initial, controls, model: SystemModel):
    """Run the filter over a horizon, recording every step.

    ``controls`` has one row per step; measurement updates happen at every
    step n = 1..N and never at n = 0. Cost is linear in the horizon.
    """
    initial.validate()
    controls = np.asarray(controls, dtype=float)
    if controls.ndim != 2 or controls.shape[1] != model.control_dim:
        raise ModelContractError(
            f"controls have shape {controls.shape}, expected (N, {model.control_dim})"
        )
    if controls.shape[0] < 1:
        raise ContractError("horizon must contain at least one step")

    trace = EKFTrace(initial=BeliefState(np.asarray(initial.x_hat, dtype=float).copy(),
                                         np.asarray(initial.P, dtype=float).copy()))
    belief = BeliefState(trace.initial.x_hat, trace.initial.P)
    for i, u in enumerate(controls):
        n = i + 1
        try:
            x_prior, P_prior, F, G = propagate(belief, u, model, n)
            P_post, K, S, H = update(x_prior, P_prior, model, n)
        except NumericalError as exc:
            raise type(exc)(f"step {n}: {exc}") from exc
        trace.steps.append(
            EKFStepRecord(
                x_hat_prev=belief.x_hat,
                u=np.array(u, dtype=float),
                x_hat=x_prior,
                P_prior=P_prior,
                P_post=P_post,
                F=F,
                G=G,
                H=H,
                K=K,
                S=S,
                Q=np.asarray(model.Q(n), dtype=float),
                R=np.asarray(model.R(n, x_prior), dtype=float),
            )
        )
        belief = BeliefState(x_prior, P_post)
    return trace
