"""Noisy closed-loop simulation: does lower planned covariance mean lower error?

Each trial draws process and measurement noise, rolls out the true system,
and runs a standard filter on the noisy measurements (real innovations, in
contrast with the planning convention). Aggregation reports per-step mean
and dispersion of the absolute estimation errors across trials.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ekf import BeliefState, kalman_update, propagate
from .errors import ContractError, DomainError


@dataclass(eq=False)
class TrialRecord:
    """Ground truth, measurements, estimates, and errors of one noisy run."""

    true_states: np.ndarray
    observations: np.ndarray
    estimates: np.ndarray
    abs_errors: np.ndarray
    trace_history: np.ndarray
    final_position_error: float = 0.0


@dataclass(eq=False)
class ErrorSummary:
    mean_abs_error: np.ndarray
    std_abs_error: np.ndarray
    mean_final_position_error: float
    trials: int


def rollout(true_initial, controls, model, rng_seed):
    """Simulate the true system under process and measurement noise.

    Returns (true_states, observations) with one more state row than
    observation rows. Deterministic for a fixed seed. If a sampled process
    noise leaves the dynamics' domain, that step's noise is redrawn a few
    times before the failure propagates.
    """
    rng = np.random.default_rng(rng_seed)
    x = np.asarray(true_initial, dtype=float).copy()
    states = [x.copy()]
    observations = []
    zero_w = np.zeros(model.noise_dim)
    for i, u in enumerate(np.asarray(controls, dtype=float)):
        n = i + 1
        Q = np.asarray(model.Q(n), dtype=float)
        for attempt in range(6):
            w = _sample_noise(rng, Q, zero_w)
            try:
                x_next = model.f(x, u, w)
                break
            except DomainError:
                if attempt == 5:
                    raise
        x = x_next
        R = np.asarray(model.R(n, x), dtype=float)
        y = model.h(x) + _sample_noise(rng, R, np.zeros(model.obs_dim))
        states.append(x.copy())
        observations.append(y)
    return np.array(states), np.array(observations)


def _sample_noise(rng, cov, zero):
    if not cov.any():
        return zero
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # Positive semidefinite covariance: factor through the eigenbasis.
        eigs, vecs = np.linalg.eigh(cov)
        factor = vecs * np.sqrt(np.maximum(eigs, 0.0))
    return factor @ rng.standard_normal(zero.size)


def run_trial(problem, controls, true_initial, rng_seed, sim_model=None):
    """One noisy rollout plus a measurement-driven filter run.

    The filter corrects with the actual innovation y - h(x_prior) at every
    step; recorded are the per-step absolute estimation errors and the trace
    of the posterior covariance. ``sim_model`` lets the simulated world use
    different noise levels than the filter believes (zero, for instance);
    it defaults to the filter's own model.
    """
    model = problem.model
    controls = np.asarray(controls, dtype=float)
    world = sim_model if sim_model is not None else model
    true_states, observations = rollout(true_initial, controls, world, rng_seed)

    belief = BeliefState(
        np.asarray(problem.initial.x_hat, dtype=float).copy(),
        np.asarray(problem.initial.P, dtype=float).copy(),
    )
    estimates = [belief.x_hat.copy()]
    traces = []
    for i, u in enumerate(controls):
        n = i + 1
        x_prior, P_prior, _, _ = propagate(belief, u, model, n)
        H = model.H(x_prior)
        R = model.R(n, x_prior)
        P_post, K, _ = kalman_update(P_prior, H, R)
        x_post = x_prior + K @ (observations[i] - model.h(x_prior))
        belief = BeliefState(x_post, P_post)
        estimates.append(x_post.copy())
        traces.append(float(np.trace(P_post)))

    estimates = np.array(estimates)
    abs_errors = np.abs(estimates - true_states)
    final_position_error = float(
        np.linalg.norm(model.h(true_states[-1]) - model.h(estimates[-1]))
    )
    return TrialRecord(
        true_states=true_states,
        observations=observations,
        estimates=estimates,
        abs_errors=abs_errors,
        trace_history=np.array(traces),
        final_position_error=final_position_error,
    )


def run_trials(problem, controls, true_initial, n_trials, base_seed, max_workers=None, sim_model=None):
    """Independent trials with seeds base_seed + trial index, in index order."""
    seeds = [base_seed + i for i in range(n_trials)]
    if max_workers is None or max_workers <= 1:
        return [run_trial(problem, controls, true_initial, s, sim_model) for s in seeds]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda s: run_trial(problem, controls, true_initial, s, sim_model), seeds))


def aggregate(trials):
    """Per-step, per-component mean and dispersion of absolute errors."""
    if not trials:
        raise ContractError("aggregate requires at least one trial")
    shape = trials[0].abs_errors.shape
    if any(t.abs_errors.shape != shape for t in trials):
        raise ContractError("trials have inconsistent lengths")
    errors = np.stack([t.abs_errors for t in trials])
    return ErrorSummary(
        mean_abs_error=errors.mean(axis=0),
        std_abs_error=errors.std(axis=0),
        mean_final_position_error=float(
            np.mean([t.final_position_error for t in trials])
        ),
        trials=len(trials),
    )
