"""System models: dynamics, observation maps, and their derivative families.

A model exposes everything the filter and the gradient recursion consume:
the maps f(x, u, w) and h(x), the first-order Jacobians F, G, H, J_u taken
at w = 0, the per-component derivative matrices of those Jacobians, and the
noise covariances Q(n) and R(n, x).

Shipped models:

* ``BicycleModel``  - planar kinematic vehicle with an unknown GPS antenna
  offset (lever arm) in the vehicle frame; position measurements only.
* ``LinearModel``   - constant-Jacobian system; covariances are independent
  of the controls, so every control gradient must vanish.
* ``ScalarToyModel``- one-dimensional model whose one-step covariance
  gradient has a short closed form, used as an exact oracle in tests.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError, ModelContractError


class SystemModel:
    """Interface for discrete-time models x_n = f(x_{n-1}, u_n, w_n), y = h(x).

    Subclasses set the four dimensions and implement the maps and Jacobians.
    The per-component Jacobian-derivative members default to zero matrices,
    which is correct for constant-Jacobian models; models with state- or
    control-dependent Jacobians must override them.
    """

    state_dim: int
    control_dim: int
    noise_dim: int
    obs_dim: int

    def f(self, x, u, w):
        raise NotImplementedError

    def h(self, x):
        raise NotImplementedError

    def F(self, x, u):
        """d x' / d x at (x, u, w=0)."""
        raise NotImplementedError

    def G(self, x, u):
        """d x' / d w at (x, u, w=0)."""
        raise NotImplementedError

    def H(self, x):
        """d y / d x at x."""
        raise NotImplementedError

    def J_u(self, x, u):
        """d x' / d u at (x, u, w=0)."""
        raise NotImplementedError

    def Q(self, n):
        """Process noise covariance at step n (1-based)."""
        raise NotImplementedError

    def R(self, n, x):
        """Measurement noise covariance at step n, linearization point x."""
        raise NotImplementedError

    # Component-k derivatives of the Jacobians. k indexes the state or
    # control component the derivative is taken against.

    def dF_dx(self, x, u, k):
        self._check_state_index(k)
        return np.zeros((self.state_dim, self.state_dim))

    def dF_du(self, x, u, k):
        self._check_control_index(k)
        return np.zeros((self.state_dim, self.state_dim))

    def dG_dx(self, x, u, k):
        self._check_state_index(k)
        return np.zeros((self.state_dim, self.noise_dim))

    def dG_du(self, x, u, k):
        self._check_control_index(k)
        return np.zeros((self.state_dim, self.noise_dim))

    def dH_dx(self, x, k):
        self._check_state_index(k)
        return np.zeros((self.obs_dim, self.state_dim))

    def dR_dx(self, x, k):
        self._check_state_index(k)
        return np.zeros((self.obs_dim, self.obs_dim))

    def _check_state_index(self, k):
        if not 0 <= k < self.state_dim:
            raise ContractError(f"state component index {k} out of range [0, {self.state_dim})")

    def _check_control_index(self, k):
        if not 0 <= k < self.control_dim:
            raise ContractError(f"control component index {k} out of range [0, {self.control_dim})")

    def check_dims(self, x=None, u=None, w=None):
        if x is not None and np.shape(x) != (self.state_dim,):
            raise ModelContractError(f"state has shape {np.shape(x)}, expected ({self.state_dim},)")
        if u is not None and np.shape(u) != (self.control_dim,):
            raise ModelContractError(f"control has shape {np.shape(u)}, expected ({self.control_dim},)")
        if w is not None and np.shape(w) != (self.noise_dim,):
            raise ModelContractError(f"noise has shape {np.shape(w)}, expected ({self.noise_dim},)")


def rotation(theta):
    """2x2 planar rotation by theta."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_deriv(theta):
    """First derivative of the planar rotation with respect to theta."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[-s, -c], [c, -s]])


@dataclass(frozen=True)
class BicycleParams:
    """Geometry, sampling, noise, and actuator limits of the vehicle model.

    Units: wheelbase [m], dt [s], Q [(m/s)^2, rad^2], R [m^2], speed bounds
    [m/s], steering bounds [rad], rate bounds per sampling step.
    """

    wheelbase: float = 4.0
    dt: float = 1.0
    Q: np.ndarray = field(default_factory=lambda: np.diag([0.1, np.pi / 180.0]) ** 2)
    R: np.ndarray = field(default_factory=lambda: np.eye(2))
    u_min: np.ndarray = field(default_factory=lambda: np.array([0.0, -30.0 * np.pi / 180.0]))
    u_max: np.ndarray = field(default_factory=lambda: np.array([5.0, 30.0 * np.pi / 180.0]))
    du_max: np.ndarray = field(default_factory=lambda: np.array([1.0, 15.0 * np.pi / 180.0]))

    def validate(self):
        if self.wheelbase <= 0:
            raise ContractError("wheelbase must be positive")
        if self.dt <= 0:
            raise ContractError("dt must be positive")
        for name, mat in (("Q", self.Q), ("R", self.R)):
            m = np.asarray(mat, dtype=float)
            if m.shape != (2, 2) or np.abs(m - m.T).max() > 1e-12:
                raise ContractError(f"{name} must be a symmetric 2x2 matrix")
            if np.linalg.eigvalsh(m)[0] < 0:
                raise ContractError(f"{name} must be positive semidefinite")
        if not np.all(np.asarray(self.u_min) < np.asarray(self.u_max)):
            raise ContractError("u_min must be strictly below u_max componentwise")
        if not np.all(np.asarray(self.du_max) > 0):
            raise ContractError("rate bounds must be positive")


class BicycleModel(SystemModel):
    """Planar vehicle with lever-arm self-calibration and GPS position fixes.

    State (theta, px, py, lx, ly): heading, rear-axle midpoint position, and
    the GPS antenna offset expressed in the vehicle frame. Controls (mu, nu):
    forward speed and steering angle. Process noise perturbs speed and
    steering, so the noise Jacobian depends on both state and control.

        theta' = theta + (dt / wheelbase) * (mu + w_mu) * tan(nu + w_nu)
        p'     = p + dt * (mu + w_mu) * Omega(theta) @ e1
        l'     = l
        y      = p + Omega(theta) @ l

    Headings are kept unwrapped; wrapping would break differentiability.
    """

    state_dim = 5
    control_dim = 2
    noise_dim = 2
    obs_dim = 2

    def __init__(self, params: BicycleParams | None = None):
        self.params = params if params is not None else BicycleParams()
        self.params.validate()

    def _steering(self, nu):
        if abs(nu) >= np.pi / 2:
            raise DomainError(f"effective steering angle {nu:.6f} outside (-pi/2, pi/2)")
        return np.tan(nu)

    def f(self, x, u, w):
        self.check_dims(x, u, w)
        dt, L = self.params.dt, self.params.wheelbase
        mu = u[0] + w[0]
        tan_nu = self._steering(u[1] + w[1])
        theta = x[0]
        out = np.array(x, dtype=float)
        out[0] = theta + (dt / L) * mu * tan_nu
        out[1] = x[1] + dt * mu * np.cos(theta)
        out[2] = x[2] + dt * mu * np.sin(theta)
        return out

    def h(self, x):
        return x[1:3] + rotation(x[0]) @ x[3:5]

    def F(self, x, u):
        dt = self.params.dt
        mu, theta = u[0], x[0]
        F = np.eye(5)
        F[1, 0] = -dt * mu * np.sin(theta)
        F[2, 0] = dt * mu * np.cos(theta)
        return F

    def G(self, x, u):
        dt, L = self.params.dt, self.params.wheelbase
        mu, theta = u[0], x[0]
        tan_nu = self._steering(u[1])
        G = np.zeros((5, 2))
        G[0, 0] = (dt / L) * tan_nu
        G[0, 1] = (dt / L) * mu * (1.0 + tan_nu**2)
        G[1, 0] = dt * np.cos(theta)
        G[2, 0] = dt * np.sin(theta)
        return G

    def J_u(self, x, u):
        # Noise and control enter f only through (mu + w_mu, nu + w_nu).
        return self.G(x, u)

    def H(self, x):
        H = np.zeros((2, 5))
        H[:, 0] = rotation_deriv(x[0]) @ x[3:5]
        H[:, 1:3] = np.eye(2)
        H[:, 3:5] = rotation(x[0])
        return H

    def Q(self, n):
        return self.params.Q

    def R(self, n, x):
        return self.params.R

    def dF_dx(self, x, u, k):
        self._check_state_index(k)
        d = np.zeros((5, 5))
        if k == 0:
            dt, mu, theta = self.params.dt, u[0], x[0]
            d[1, 0] = -dt * mu * np.cos(theta)
            d[2, 0] = -dt * mu * np.sin(theta)
        return d

    def dF_du(self, x, u, k):
        self._check_control_index(k)
        d = np.zeros((5, 5))
        if k == 0:
            dt, theta = self.params.dt, x[0]
            d[1, 0] = -dt * np.sin(theta)
            d[2, 0] = dt * np.cos(theta)
        return d

    def dG_dx(self, x, u, k):
        self._check_state_index(k)
        d = np.zeros((5, 2))
        if k == 0:
            dt, theta = self.params.dt, x[0]
            d[1, 0] = -dt * np.sin(theta)
            d[2, 0] = dt * np.cos(theta)
        return d

    def dG_du(self, x, u, k):
        self._check_control_index(k)
        dt, L = self.params.dt, self.params.wheelbase
        mu = u[0]
        tan_nu = self._steering(u[1])
        sec2 = 1.0 + tan_nu**2
        d = np.zeros((5, 2))
        if k == 0:
            d[0, 1] = (dt / L) * sec2
        else:
            d[0, 0] = (dt / L) * sec2
            d[0, 1] = (dt / L) * mu * 2.0 * tan_nu * sec2
        return d

    def dH_dx(self, x, k):
        self._check_state_index(k)
        d = np.zeros((2, 5))
        if k == 0:
            # d/dtheta of Omega is rotation_deriv; its derivative is -Omega.
            d[:, 0] = -rotation(x[0]) @ x[3:5]
            d[:, 3:5] = rotation_deriv(x[0])
        elif k >= 3:
            d[:, 0] = rotation_deriv(x[0])[:, k - 3]
        return d


class LinearModel(SystemModel):
    """Constant-Jacobian system; the covariance recursion ignores the controls.

    All Jacobian-derivative members are zero, so control gradients of any
    covariance loss vanish identically. Used as a null-gradient oracle.
    """

    def __init__(self, A, B, Gw, C, Q, R):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.Gw = np.asarray(Gw, dtype=float)
        self.C = np.asarray(C, dtype=float)
        self._Q = np.asarray(Q, dtype=float)
        self._R = np.asarray(R, dtype=float)
        self.state_dim = self.A.shape[0]
        self.control_dim = self.B.shape[1]
        self.noise_dim = self.Gw.shape[1]
        self.obs_dim = self.C.shape[0]

    @classmethod
    def default(cls):
        """Fixed mildly coupled stable triple used across the test suite."""
        A = np.array([[0.9, 0.1, 0.0], [0.0, 0.95, 0.05], [0.02, 0.0, 0.9]])
        B = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        Gw = np.array([[1.0, 0.0], [0.0, 1.0], [0.3, 0.1]])
        C = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]])
        Q = np.diag([0.04, 0.09])
        R = np.diag([0.25, 0.25])
        return cls(A, B, Gw, C, Q, R)

    def f(self, x, u, w):
        return self.A @ x + self.B @ u + self.Gw @ w

    def h(self, x):
        return self.C @ x

    def F(self, x, u):
        return self.A.copy()

    def G(self, x, u):
        return self.Gw.copy()

    def H(self, x):
        return self.C.copy()

    def J_u(self, x, u):
        return self.B.copy()

    def Q(self, n):
        return self._Q

    def R(self, n, x):
        return self._R


class ScalarToyModel(SystemModel):
    """One-dimensional model with a hand-expandable one-step gradient.

    Dynamics x' = x + u^2 + u * w, observation y = x. The noise gain equals
    the control, so the covariance depends on u through G alone and the
    one-step gradient of trace(P_1|1) has the closed form

        dL/du = 2 u q r^2 / (p0 + u^2 q + r)^2

    which tests in this repository evaluate independently.
    """

    state_dim = 1
    control_dim = 1
    noise_dim = 1
    obs_dim = 1

    def __init__(self, q=0.3, r=0.7):
        self._Q = np.array([[float(q)]])
        self._R = np.array([[float(r)]])

    def f(self, x, u, w):
        return np.array([x[0] + u[0] ** 2 + u[0] * w[0]])

    def h(self, x):
        return np.array([x[0]])

    def F(self, x, u):
        return np.array([[1.0]])

    def G(self, x, u):
        return np.array([[u[0]]])

    def H(self, x):
        return np.array([[1.0]])

    def J_u(self, x, u):
        return np.array([[2.0 * u[0]]])

    def Q(self, n):
        return self._Q

    def R(self, n, x):
        return self._R

    def dG_du(self, x, u, k):
        self._check_control_index(k)
        return np.array([[1.0]])
