"""Particle-based Bayesian estimation of static model parameters.

The unknown parameter vector theta is tracked with a bootstrap-style particle
filter over the transition likelihood: particles are jittered with a small
Gaussian kernel (which keeps the static-parameter filter from collapsing),
reweighted by the one-step transition density of the observed state pair, and
resampled by the inverse-transform method.

Weights are computed in log space so that deep-tail observations underflow to
zero weight instead of raising; a step where every particle underflows falls
back to uniform weights and reports a degeneracy flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import SystemModel, transition_log_density


@dataclass
class ParticleSet:
    """Weighted parameter particles together with their prior support box.

    Attributes:
        thetas: Particle values, shape (n_particles, d); every particle lies
            inside `box`.
        weights: Nonnegative weights summing to one, shape (n_particles,).
        box: Prior support, shape (d, 2); particles are clipped to it after
            jittering.
    """

    thetas: np.ndarray
    weights: np.ndarray
    box: np.ndarray

    def __post_init__(self) -> None:
        self.thetas = np.asarray(self.thetas, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.box = np.asarray(self.box, dtype=float)
        if self.thetas.ndim != 2:
            raise ValueError("thetas must have shape (n_particles, d)")
        if self.weights.shape != (self.thetas.shape[0],):
            raise ValueError("weights must have shape (n_particles,)")
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {self.weights.sum()!r}")

    @property
    def n_particles(self) -> int:
        return self.thetas.shape[0]


def init_particles(box: np.ndarray, n_particles: int, rng: np.random.Generator) -> ParticleSet:
    """Draw equally weighted particles uniformly over a parameter box.

    Args:
        box: Support, shape (d, 2) with columns (lower, upper).
        n_particles: Number of particles, must be positive.
        rng: Source of the uniform draws.
    """
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2:
        raise ValueError("box must have shape (d, 2)")
    if np.any(box[:, 0] > box[:, 1]):
        raise ValueError("box lower bounds exceed upper bounds")
    if n_particles <= 0:
        raise ValueError(f"n_particles must be positive, got {n_particles}")
    d = box.shape[0]
    thetas = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((n_particles, d))
    weights = np.full(n_particles, 1.0 / n_particles)
    return ParticleSet(thetas=thetas, weights=weights, box=box)


def default_jitter_std(box: np.ndarray) -> np.ndarray:
    """Per-dimension jitter scale: 0.5% of the prior box width."""
    box = np.asarray(box, dtype=float)
    return 0.005 * (box[:, 1] - box[:, 0])


def propagate(
    ps: ParticleSet,
    rng: np.random.Generator,
    jitter_std: np.ndarray | float | None = None,
) -> ParticleSet:
    """Jitter particle values with Gaussian noise, clipped to the prior box.

    Weights are left untouched.  A zero jitter_std reduces to the identity,
    which the finite-candidate diagnostics rely on.

    Args:
        ps: Current particles.
        rng: Source of the jitter draws.
        jitter_std: Scalar or per-dimension standard deviation; defaults to
            `default_jitter_std(ps.box)`.
    """
    if jitter_std is None:
        jitter_std = default_jitter_std(ps.box)
    jitter_std = np.broadcast_to(np.asarray(jitter_std, dtype=float), (ps.box.shape[0],))
    if np.any(jitter_std < 0.0):
        raise ValueError("jitter_std must be nonnegative")
    moved = ps.thetas + jitter_std * rng.standard_normal(ps.thetas.shape)
    moved = np.clip(moved, ps.box[:, 0], ps.box[:, 1])
    return ParticleSet(thetas=moved, weights=ps.weights.copy(), box=ps.box)


def reweight(
    ps: ParticleSet,
    x_new: np.ndarray,
    x_prev: np.ndarray,
    u_prev,
    model: SystemModel,
) -> tuple[ParticleSet, bool]:
    """Multiply weights by the transition likelihood of an observed step.

    With the usual post-resample convention the incoming weights are equal, in
    which case the output weight of particle i is exactly

        m_i = q(x_new; theta_i, x_prev, u_prev) / sum_j q(x_new; theta_j, ...).

    Args:
        ps: Particles to reweight.
        x_new: Observed successor state.
        x_prev: Previous state.
        u_prev: Input applied at x_prev.
        model: System whose transition kernel scores the step.

    Returns:
        Tuple (reweighted particles, degenerate) where `degenerate` is True
        when every particle's likelihood underflowed to zero and the weights
        were reset to uniform.
    """
    log_lik = transition_log_density(model, x_new, x_prev, u_prev, ps.thetas)
    with np.errstate(divide="ignore"):
        log_w = np.log(ps.weights) + log_lik
    peak = np.max(log_w)
    if not np.isfinite(peak):
        n = ps.n_particles
        return ParticleSet(np.array(ps.thetas, copy=True), np.full(n, 1.0 / n), ps.box), True
    w = np.exp(log_w - peak)
    w /= w.sum()
    return ParticleSet(np.array(ps.thetas, copy=True), w, ps.box), False


def resample_inverse_transform(ps: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    """Resample particles by inverting the cumulative weight distribution.

    Draws s_i ~ U[0, 1) independently and selects the particle j whose
    cumulative-weight bracket contains s_i, i.e. the smallest j with
    cumsum(w)[j] >= s_i.  Output weights are uniform.
    """
    cumw = np.cumsum(ps.weights)
    cumw /= cumw[-1]
    cumw[-1] = 1.0  # guard the top bracket against round-off
    draws = rng.random(ps.n_particles)
    idx = np.searchsorted(cumw, draws, side="left")
    n = ps.n_particles
    return ParticleSet(ps.thetas[idx].copy(), np.full(n, 1.0 / n), ps.box)


def effective_sample_size(ps: ParticleSet) -> float:
    """ESS = 1 / sum(w_i^2); equals n_particles for uniform weights."""
    return float(1.0 / np.sum(ps.weights**2))


def posterior_summary(ps: ParticleSet):
    """Weighted posterior mean and marginal quantile function.

    The quantile convention matches the credible-interval construction: the
    p-quantile of dimension k is the smallest particle value in that dimension
    whose cumulative weight (over value-sorted particles) reaches p.

    Args:
        ps: Nonempty particle set.

    Returns:
        Tuple (mean, quantile) with mean of shape (d,) and
        quantile(dim, p) -> float.
    """
    if ps.n_particles == 0:
        raise ValueError("posterior_summary requires a nonempty particle set")
    mean = ps.weights @ ps.thetas
    sorted_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def quantile(dim: int, p: float) -> float:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"quantile level must lie in [0, 1], got {p}")
        if not 0 <= dim < ps.thetas.shape[1]:
            raise ValueError(f"dimension {dim} out of range")
        if dim not in sorted_cache:
            order = np.argsort(ps.thetas[:, dim], kind="stable")
            cumw = np.cumsum(ps.weights[order])
            cumw /= cumw[-1]
            cumw[-1] = 1.0
            sorted_cache[dim] = (ps.thetas[order, dim], cumw)
        values, cumw = sorted_cache[dim]
        j = int(np.searchsorted(cumw, p, side="left"))
        return float(values[min(j, values.shape[0] - 1)])

    return mean, quantile
