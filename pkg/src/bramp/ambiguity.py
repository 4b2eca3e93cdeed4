"""Posterior credible boxes and forward-shrinking ambiguity sets.

The ambiguity set used by the risk-averse planner is an axis-aligned box
built from per-dimension credible intervals of the particle posterior.  To
keep worst-case plans from oscillating when the posterior temporarily
widens, a new credible box is only adopted when it is nested inside the
previous ambiguity set; otherwise the previous set is kept.  The set
radius (half the box diagonal) is therefore non-increasing over a run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bayes_filter import ParticleSet

#: Slack allowed on each endpoint when testing nestedness of a new box.
NESTING_TOL = 1e-12


@dataclass
class AmbiguitySet:
    """Axis-aligned parameter box adopted at a given filter step.

    Attributes:
        box: Shape (d, 2) with columns (lower, upper).
        step_index: Filter step at which this box was adopted or carried over.
        eps: Radius, half the Euclidean length of the box diagonal.
    """

    box: np.ndarray
    step_index: int
    eps: float = field(init=False)

    def __post_init__(self) -> None:
        self.box = np.asarray(self.box, dtype=float)
        if self.box.ndim != 2 or self.box.shape[1] != 2:
            raise ValueError("box must have shape (d, 2)")
        if np.any(self.box[:, 0] > self.box[:, 1]):
            raise ValueError("box lower bounds exceed upper bounds")
        self.eps = radius(self.box)


def radius(box) -> float:
    """Half the Euclidean diagonal of a box (0 for a point box).

    Accepts either an AmbiguitySet or a raw (d, 2) array.
    """
    if isinstance(box, AmbiguitySet):
        box = box.box
    box = np.asarray(box, dtype=float)
    return 0.5 * float(np.linalg.norm(box[:, 1] - box[:, 0]))


def credible_interval_eti(ps: ParticleSet, level: float) -> np.ndarray:
    """Per-dimension equal-tailed credible interval of the particle posterior.

    Dimension k gets [Q_k((1-level)/2), Q_k((1+level)/2)] where Q_k is the
    weighted quantile function of posterior_summary.

    Args:
        ps: Particle posterior.
        level: Credible mass, in (0, 1].

    Returns:
        Box of shape (d, 2).
    """
    _check_level(level)
    from .bayes_filter import posterior_summary

    _, quantile = posterior_summary(ps)
    d = ps.thetas.shape[1]
    lo_p = (1.0 - level) / 2.0
    hi_p = (1.0 + level) / 2.0
    box = np.empty((d, 2))
    for k in range(d):
        box[k, 0] = quantile(k, lo_p)
        box[k, 1] = quantile(k, hi_p)
    return box


def credible_interval_hpdi(ps: ParticleSet, level: float) -> np.ndarray:
    """Per-dimension highest-posterior-density interval.

    For each dimension the particles are sorted by value and the shortest
    contiguous window whose cumulative weight reaches `level` is returned
    (leftmost window on ties).  For multimodal posteriors this can be much
    tighter than the equal-tailed interval.
    """
    _check_level(level)
    if ps.n_particles == 0:
        raise ValueError("credible interval requires a nonempty particle set")
    d = ps.thetas.shape[1]
    box = np.empty((d, 2))
    for k in range(d):
        order = np.argsort(ps.thetas[:, k], kind="stable")
        values = ps.thetas[order, k]
        cumw = np.cumsum(ps.weights[order])
        cumw /= cumw[-1]
        cumw[-1] = 1.0
        box[k] = _shortest_window(values, cumw, level)
    return box


def _shortest_window(values: np.ndarray, cumw: np.ndarray, level: float) -> tuple[float, float]:
    """Shortest [values[i], values[j]] with window weight >= level (two-pointer)."""
    n = values.shape[0]
    best_lo, best_hi = values[0], values[-1]
    best_width = np.inf
    j = 0
    for i in range(n):
        floor = cumw[i - 1] if i > 0 else 0.0
        while j < n and cumw[j] - floor < level - 1e-15:
            j += 1
        if j == n:
            break  # no window starting at or after i reaches the level
        width = values[j] - values[i]
        if width < best_width:
            best_width = width
            best_lo, best_hi = values[i], values[j]
        if j == i:
            j += 1  # keep the window nonempty for the next start
    return float(best_lo), float(best_hi)


def update_ambiguity(prev: AmbiguitySet | None, ci: np.ndarray) -> AmbiguitySet:
    """Adopt a new credible box only if it is nested in the previous set.

    At the first step (prev is None) the credible box is adopted as is.
    Afterwards the box is adopted when every endpoint lies inside the
    previous box up to NESTING_TOL, in which case it is intersected with the
    previous box so that the radius sequence is exactly non-increasing;
    otherwise the previous set is carried over unchanged.

    Args:
        prev: Ambiguity set of the previous step, or None at step 0.
        ci: Candidate credible box, shape (d, 2).

    Returns:
        Ambiguity set for the next step index.
    """
    ci = np.asarray(ci, dtype=float)
    if ci.ndim != 2 or ci.shape[1] != 2:
        raise ValueError("ci must have shape (d, 2)")
    if prev is None:
        return AmbiguitySet(box=ci, step_index=0)
    if ci.shape != prev.box.shape:
        raise ValueError(
            f"ci shape {ci.shape} does not match ambiguity box shape {prev.box.shape}"
        )
    nested = bool(
        np.all(ci[:, 0] >= prev.box[:, 0] - NESTING_TOL)
        and np.all(ci[:, 1] <= prev.box[:, 1] + NESTING_TOL)
    )
    if nested:
        lo = np.maximum(ci[:, 0], prev.box[:, 0])
        hi = np.minimum(ci[:, 1], prev.box[:, 1])
        hi = np.maximum(hi, lo)
        box = np.stack([lo, hi], axis=1)
    else:
        box = prev.box
    return AmbiguitySet(box=box, step_index=prev.step_index + 1)


def _check_level(level: float) -> None:
    if not 0.0 < level <= 1.0:
        raise ValueError(f"credible level must lie in (0, 1], got {level}")
