"""Stochastic discrete-time dynamics with unknown physical parameters.

Models are specified as continuous-time drift functions x_dot = f(x, u, theta)
and discretized with a classical fourth-order Runge-Kutta step under a
zero-order hold on the input.  Process noise is additive Gaussian on the
discretized state, so the one-step transition kernel is a diagonal Gaussian
centred on the deterministic RK4 image.

All drift functions broadcast over leading batch axes: `state` has shape
(..., n), `theta` shape (..., d), and `u` is a scalar or array broadcastable
to the batch shape.  This keeps particle reweighting and scenario rollouts
vectorized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

GRAVITY = 9.81
CART_MASS = 1.0  # known cart mass; pole mass and length are the unknowns

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class SystemModel:
    """Bundle of drift, discretization step, and noise/parameter metadata.

    Attributes:
        name: Short identifier used in logs and error messages.
        drift: Continuous-time right-hand side f(state, u, theta) -> state_dot,
            broadcasting over leading batch axes.
        dt: Discretization interval for the RK4 step (seconds).
        noise_std: Per-dimension standard deviation of the additive Gaussian
            process noise, shape (n,).  All entries must be positive for the
            transition density to exist.
        param_box: Parameter prior support, shape (d, 2) with columns
            (lower, upper).
        control_bounds: Scalar input saturation (lower, upper).
    """

    name: str
    drift: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    dt: float
    noise_std: np.ndarray
    param_box: np.ndarray
    control_bounds: tuple[float, float] = (-np.inf, np.inf)

    def __post_init__(self) -> None:
        self.noise_std = np.asarray(self.noise_std, dtype=float)
        self.param_box = np.asarray(self.param_box, dtype=float)
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.noise_std.ndim != 1:
            raise ValueError("noise_std must be a 1-D array")
        if self.param_box.ndim != 2 or self.param_box.shape[1] != 2:
            raise ValueError("param_box must have shape (d, 2)")
        if np.any(self.param_box[:, 0] > self.param_box[:, 1]):
            raise ValueError("param_box lower bounds exceed upper bounds")

    @property
    def state_dim(self) -> int:
        return self.noise_std.shape[0]

    @property
    def param_dim(self) -> int:
        return self.param_box.shape[0]


def cartpole_rhs(state: np.ndarray, u, theta: np.ndarray) -> np.ndarray:
    """Continuous-time cart-pole dynamics with unknown pole mass and length.

    State is (p, p_dot, q, q_dot) with q = 0 the hanging position and q = pi
    upright.  The cart mass is known (`CART_MASS`); theta = (m, l) collects
    the pole mass and length.

    Args:
        state: Array of shape (..., 4).
        u: Horizontal force on the cart, scalar or broadcastable array.
        theta: Array of shape (..., 2), entries (m, l), both positive.

    Returns:
        State derivative, shape (..., 4).
    """
    state = np.asarray(state, dtype=float)
    theta = np.asarray(theta, dtype=float)
    u = np.asarray(u, dtype=float)

    p_dot = state[..., 1]
    q = state[..., 2]
    q_dot = state[..., 3]
    m = theta[..., 0]
    length = theta[..., 1]

    sin_q = np.sin(q)
    cos_q = np.cos(q)
    denom = CART_MASS + m * sin_q**2

    p_ddot = (u + m * sin_q * (length * q_dot**2 + GRAVITY * cos_q)) / denom
    q_ddot = (
        -u * cos_q
        - m * length * q_dot**2 * cos_q * sin_q
        - (CART_MASS + m) * GRAVITY * sin_q
    ) / (length * denom)

    out = np.empty(np.broadcast(p_dot, p_ddot, q_ddot).shape + (4,), dtype=float)
    out[..., 0] = p_dot
    out[..., 1] = p_ddot
    out[..., 2] = q_dot
    out[..., 3] = q_ddot
    return out


def cartpole_model(
    dt: float = 0.05,
    noise_std: float = 0.01,
    param_box: np.ndarray | None = None,
    control_bounds: tuple[float, float] = (-10.0, 10.0),
) -> SystemModel:
    """Cart-pole swing-up benchmark model.

    Args:
        dt: RK4 step, default 0.05 s.
        noise_std: Common per-dimension process-noise standard deviation.
        param_box: Prior support for (m, l); defaults to
            m in [0.05, 0.30] kg, l in [0.20, 1.00] m.
        control_bounds: Force saturation, default +/-10 N.
    """
    if param_box is None:
        param_box = np.array([[0.05, 0.30], [0.20, 1.00]])
    return SystemModel(
        name="cartpole",
        drift=cartpole_rhs,
        dt=dt,
        noise_std=np.full(4, float(noise_std)),
        param_box=np.asarray(param_box, dtype=float),
        control_bounds=control_bounds,
    )


def first_order_rhs(state: np.ndarray, u, theta: np.ndarray) -> np.ndarray:
    """Scalar first-order lag x_dot = -theta * x + u (theta > 0 stable)."""
    state = np.asarray(state, dtype=float)
    theta = np.asarray(theta, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.empty(np.broadcast(state[..., 0], theta[..., 0], u).shape + (1,))
    out[..., 0] = -theta[..., 0] * state[..., 0] + u
    return out


def first_order_model(
    dt: float = 0.1,
    noise_std: float = 0.01,
    param_box: np.ndarray | None = None,
    control_bounds: tuple[float, float] = (-5.0, 5.0),
) -> SystemModel:
    """Identifiable scalar test system used by the filter diagnostics."""
    if param_box is None:
        param_box = np.array([[0.5, 2.0]])
    return SystemModel(
        name="first_order",
        drift=first_order_rhs,
        dt=dt,
        noise_std=np.full(1, float(noise_std)),
        param_box=np.asarray(param_box, dtype=float),
        control_bounds=control_bounds,
    )


def _require_finite(label: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {label}")


def rk4_step(
    model: SystemModel,
    state: np.ndarray,
    u,
    theta: np.ndarray,
    dt: float | None = None,
) -> np.ndarray:
    """One classical RK4 step of the model drift under a zero-order hold.

    Args:
        model: System whose drift is integrated.
        state: Shape (..., n).
        u: Input held constant over the step.
        theta: Shape (..., d).
        dt: Step length; defaults to model.dt.

    Returns:
        Deterministic successor state, shape (..., n).

    Raises:
        ValueError: If inputs or the integrated state are non-finite, or the
            step length is not positive.
    """
    h = model.dt if dt is None else dt
    if h <= 0.0:
        raise ValueError(f"dt must be positive, got {h}")
    state = np.asarray(state, dtype=float)
    _require_finite("state", state)
    _require_finite("theta", np.asarray(theta, dtype=float))

    f = model.drift
    k1 = f(state, u, theta)
    k2 = f(state + 0.5 * h * k1, u, theta)
    k3 = f(state + 0.5 * h * k2, u, theta)
    k4 = f(state + h * k3, u, theta)
    nxt = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    _require_finite("rk4 step", nxt)
    return nxt


def step_stochastic(
    model: SystemModel,
    state: np.ndarray,
    u,
    theta: np.ndarray,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Sample the one-step transition: RK4 image plus Gaussian noise.

    Exactly one noise source must be given: either a generator `rng` to draw
    fresh standard normals from, or a pre-drawn standard-normal array `noise`
    (common-random-number rollouts reuse the same draws across parameter
    candidates).

    Args:
        model: System to step.
        state: Shape (..., n).
        u: Held input.
        theta: Shape (..., d).
        rng: Generator for fresh noise draws.
        noise: Standard-normal draws broadcastable to the output shape.

    Returns:
        Stochastic successor state, shape (..., n).
    """
    mean = rk4_step(model, state, u, theta)
    if (rng is None) == (noise is None):
        raise ValueError("provide exactly one of rng or noise")
    if noise is None:
        noise = rng.standard_normal(mean.shape)
    return mean + model.noise_std * np.asarray(noise, dtype=float)


def transition_log_density(
    model: SystemModel,
    x_next: np.ndarray,
    state: np.ndarray,
    u,
    theta: np.ndarray,
) -> np.ndarray:
    """Log of the Gaussian one-step transition density, batched over theta.

    Args:
        model: System whose kernel is evaluated.
        x_next: Observed successor state, shape (n,) (or broadcastable).
        state: Previous state, shape (..., n).
        u: Input applied at `state`.
        theta: Parameter values, shape (..., d).

    Returns:
        Log-density values, shape (...,).
    """
    sigma = model.noise_std
    if np.any(sigma <= 0.0):
        raise ValueError("transition density requires positive noise_std")
    mean = rk4_step(model, state, u, theta)
    z = (np.asarray(x_next, dtype=float) - mean) / sigma
    with np.errstate(over="ignore"):  # z**2 -> inf means log-density -inf
        return -0.5 * np.sum(z**2, axis=-1) - np.sum(np.log(sigma)) - 0.5 * _LOG_2PI * sigma.shape[0]


def transition_density(
    model: SystemModel,
    x_next: np.ndarray,
    state: np.ndarray,
    u,
    theta: np.ndarray,
) -> np.ndarray:
    """Gaussian transition density q(x_next | state, u, theta).

    Underflows to exactly 0.0 for observations far outside the noise support;
    that is deliberate, the particle filter treats such particles as
    zero-weight rather than erroring.
    """
    return np.exp(transition_log_density(model, x_next, state, u, theta))
