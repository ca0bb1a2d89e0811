"""Scalar losses on a covariance matrix and their matrix gradients.

The gradient convention treats all d^2 entries of the matrix argument as
independent, so the gradient of a loss evaluated on symmetric matrices is
itself symmetric and seeds the backward covariance recursion directly.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NotPSDError, NumericalError
from .linalg import sym


class LossKind(str, enum.Enum):
    TRACE = "trace"
    NORMALIZED_TRACE = "normalized_trace"
    SCHATTEN = "schatten"


@dataclass(eq=False)
class LossSpec:
    """Which scalar loss acts on the final covariance, with its parameters.

    ``P0_inv`` is the inverse of the reference covariance and is only used
    by the normalized trace. ``schatten_power`` is the norm exponent; large
    values approximate the maximum eigenvalue.
    """

    kind: LossKind
    P0_inv: np.ndarray | None = None
    schatten_power: float = 20.0

    @classmethod
    def trace(cls):
        return cls(kind=LossKind.TRACE)

    @classmethod
    def normalized_trace(cls, P0):
        return cls(kind=LossKind.NORMALIZED_TRACE, P0_inv=sym(np.linalg.inv(P0)))

    @classmethod
    def schatten(cls, power=20.0):
        return cls(kind=LossKind.SCHATTEN, schatten_power=float(power))

    def validate(self, dim=None):
        """Check the parameters needed for planning use."""
        if self.kind == LossKind.NORMALIZED_TRACE:
            if self.P0_inv is None:
                raise ContractError("normalized trace requires P0_inv")
            P = np.asarray(self.P0_inv)
            if dim is not None and P.shape != (dim, dim):
                raise ContractError(f"P0_inv has shape {P.shape}, expected ({dim}, {dim})")
            if np.abs(P - P.T).max() > 1e-10 * max(1.0, np.abs(P).max()):
                raise ContractError("P0_inv must be symmetric")
        if self.kind == LossKind.SCHATTEN and self.schatten_power < 2.0:
            raise ContractError("schatten_power must be at least 2 for planning")


def _checked_eigvals(P):
    eigs = np.linalg.eigvalsh(P)
    scale = max(float(np.trace(P)), 1e-300)
    if eigs[0] < -1e-10 * scale:
        raise NotPSDError(f"matrix has negative eigenvalue {eigs[0]:.3e}")
    return np.maximum(eigs, 0.0)


def evaluate(spec, P):
    """Value of the loss at a symmetric PSD matrix."""
    P = np.asarray(P, dtype=float)
    if spec.kind == LossKind.TRACE:
        _checked_eigvals(P)
        return float(np.trace(P))
    if spec.kind == LossKind.NORMALIZED_TRACE:
        _checked_eigvals(P)
        return float(np.sum(spec.P0_inv * P))
    # Schatten norm (sum_i lambda_i^s)^(1/s), evaluated with the largest
    # eigenvalue factored out so large exponents cannot overflow.
    eigs = _checked_eigvals(P)
    s = float(spec.schatten_power)
    top = float(eigs[-1])
    if top == 0.0:
        return 0.0
    return float(top * np.sum((eigs / top) ** s) ** (1.0 / s))


def seed_gradient(spec, P):
    """Gradient of the loss with respect to every entry of its argument.

    Trace gives the identity, normalized trace gives the stored inverse
    reference, and the Schatten norm is assembled from the eigenpairs. The
    result is symmetrized; repeated eigenvalues need no special handling
    because the eigenvector outer products enter only through their sum.
    """
    P = np.asarray(P, dtype=float)
    d = P.shape[0]
    if spec.kind == LossKind.TRACE:
        return np.eye(d)
    if spec.kind == LossKind.NORMALIZED_TRACE:
        return sym(np.array(spec.P0_inv, dtype=float))
    eigs, vecs = np.linalg.eigh(P)
    scale = max(float(np.trace(P)), 1e-300)
    if eigs[0] < -1e-10 * scale:
        raise NotPSDError(f"matrix has negative eigenvalue {eigs[0]:.3e}")
    eigs = np.maximum(eigs, 0.0)
    s = float(spec.schatten_power)
    top = float(eigs[-1])
    if top == 0.0:
        return np.zeros((d, d))
    t = eigs / top
    # (sum l^s)^((1-s)/s) * sum l^(s-1) v v'; the top-eigenvalue factors of
    # the two pieces cancel exactly, leaving only normalized powers.
    prefactor = np.sum(t**s) ** ((1.0 - s) / s)
    grad = (vecs * (prefactor * t ** (s - 1.0))) @ vecs.T
    if not np.isfinite(grad).all():
        raise NumericalError("loss gradient is non-finite")
    return sym(grad)
