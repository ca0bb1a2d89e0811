"""Small dense linear-algebra helpers used throughout the package."""

import numpy as np


def sym(a):
    """Symmetric part (a + a.T) / 2."""
    return 0.5 * (a + a.T)


def is_symmetric(a, tol=1e-10):
    scale = max(1.0, float(np.abs(a).max()) if a.size else 1.0)
    return float(np.abs(a - a.T).max()) <= tol * scale


def max_rel_entry_diff(a, b, floor_scale=1e-8):
    """Largest entrywise relative difference between two matrices.

    Entries are compared relative to their own magnitude, with an absolute
    floor proportional to the largest entry so near-zero entries do not
    dominate the metric.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(float(np.abs(a).max()), float(np.abs(b).max()), 1e-300)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor_scale * scale)
    return float((np.abs(a - b) / denom).max())


def random_spd(dim, rng, eig_low=0.5, eig_high=2.0):
    """Random symmetric positive definite matrix with eigenvalues in a band."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eigs = rng.uniform(eig_low, eig_high, size=dim)
    return sym(q @ np.diag(eigs) @ q.T)


def spd_condition(a):
    """Condition number of a symmetric matrix, inf if not positive definite."""
    eigs = np.linalg.eigvalsh(a)
    lo = float(eigs[0])
    hi = float(eigs[-1])
    if lo <= 0.0:
        return np.inf
    return hi / lo
