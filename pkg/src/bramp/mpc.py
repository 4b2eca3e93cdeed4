"""Sub-optimal receding-horizon control with warm starts.

The planner never insists on a global optimum: each step shifts the previous
input sequence by one, pads with a zero fallback input, and spends a bounded
budget of local-search iterations improving it.  The returned sequence is
guaranteed to score no worse than the shifted warm start under the planning
objective, which is the property the closed-loop descent argument needs.

Four controller kinds share this machinery and differ only in how they fold
parameter uncertainty into the objective:

* ``nominal`` - certainty equivalence at the posterior mean,
* ``tube`` - worst case over a fixed parameter box (no learning),
* ``stochastic`` - posterior-averaged (risk-neutral) cost,
* ``risk_averse`` - worst case over the shrinking ambiguity set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ambiguity import AmbiguitySet
from .bayes_filter import ParticleSet
from .dynamics import SystemModel, step_stochastic
from .risk import (
    CostSpec,
    ScenarioSet,
    box_candidates,
    evaluate_costs,
    stage_cost,
    terminal_cost,
)

#: Supported controller kinds, in canonical reporting order.
KINDS = ("nominal", "tube", "stochastic", "risk_averse")


def rollout_cost(
    x0: np.ndarray,
    controls: np.ndarray,
    theta: np.ndarray,
    noise_path: np.ndarray,
    cost: CostSpec,
    model: SystemModel,
) -> float:
    """Total cost of one deterministic rollout along a fixed noise path.

    Reference single-path implementation: clips each input to the model
    bounds, accumulates stage costs on the clipped inputs, and adds the
    terminal cost.  The scenario-averaged evaluators reproduce this exactly
    when given a single scenario.

    Args:
        x0: Initial state, shape (n,).
        controls: Input sequence, shape (N,).
        theta: Parameter vector, shape (d,).
        noise_path: Standard-normal draws, shape (N, n).
        cost: Cost specification.
        model: System model.
    """
    controls = np.asarray(controls, dtype=float)
    noise_path = np.asarray(noise_path, dtype=float)
    if noise_path.shape != (controls.shape[0], model.state_dim):
        raise ValueError(
            f"noise_path shape {noise_path.shape} does not match "
            f"(horizon, state_dim) = ({controls.shape[0]}, {model.state_dim})"
        )
    lo, hi = model.control_bounds
    x = np.asarray(x0, dtype=float)
    total = 0.0
    for i in range(controls.shape[0]):
        u = float(np.clip(controls[i], lo, hi))
        total += float(stage_cost(cost, x, u))
        x = step_stochastic(model, x, u, theta, noise=noise_path[i])
    return total + float(terminal_cost(cost, x))


def shift_warm_start(v_prev: np.ndarray, v_f: float = 0.0) -> np.ndarray:
    """Drop the executed first input and append the fallback input v_f."""
    v_prev = np.asarray(v_prev, dtype=float)
    if v_prev.ndim != 1 or v_prev.size == 0:
        raise ValueError("v_prev must be a nonempty 1-D input sequence")
    return np.concatenate([v_prev[1:], [float(v_f)]])


def improve_policy(
    v_warm: np.ndarray,
    evaluator,
    bounds: tuple[float, float],
    budget: int,
    rng: np.random.Generator,
    method: str = "gradient",
) -> tuple[np.ndarray, float, float]:
    """Budgeted monotone improvement of an input sequence.

    The default method runs finite-difference gradient descent with a
    backtracking line search, falling back to random single-coordinate
    perturbations when the gradient stalls; ``method="lbfgs"`` delegates to
    scipy's L-BFGS-B instead.  Either way only strict improvements are
    accepted, so the returned value never exceeds the warm-start value.

    Args:
        v_warm: Starting sequence, shape (N,); clipped to bounds before use.
        evaluator: Deterministic map from a sequence to a scalar cost.
        bounds: Scalar input box (lo, hi).
        budget: Maximum number of improvement iterations; 0 returns the
            (clipped) warm start untouched.
        rng: Source for perturbation fallbacks.
        method: "gradient" or "lbfgs".

    Returns:
        Tuple (v, value, warm_value) with value = evaluator(v) and
        value <= warm_value.
    """
    lo, hi = bounds
    v0 = np.clip(np.asarray(v_warm, dtype=float), lo, hi)
    f0 = float(evaluator(v0))
    if budget < 0:
        raise ValueError(f"budget must be nonnegative, got {budget}")
    if budget == 0:
        return v0, f0, f0
    if method == "lbfgs":
        from scipy.optimize import minimize

        res = minimize(
            evaluator,
            v0,
            method="L-BFGS-B",
            bounds=[(lo, hi)] * v0.size,
            options={"maxiter": budget},
        )
        cand = np.clip(np.asarray(res.x, dtype=float), lo, hi)
        f_cand = float(evaluator(cand))
        if f_cand < f0:
            return cand, f_cand, f0
        return v0, f0, f0
    if method != "gradient":
        raise ValueError(f"unknown optimizer method {method!r}")

    span = hi - lo if np.isfinite(hi - lo) else 4.0
    eps = 1e-4 * span
    step = 0.1 * span
    best_v, best_f = v0.copy(), f0
    for _ in range(budget):
        grad = np.empty_like(best_v)
        for j in range(best_v.size):
            probe = best_v.copy()
            if best_v[j] + eps <= hi:
                probe[j] = best_v[j] + eps
                grad[j] = (float(evaluator(probe)) - best_f) / eps
            else:  # one-sided at the upper bound
                probe[j] = best_v[j] - eps
                grad[j] = (best_f - float(evaluator(probe))) / eps
        gmax = float(np.max(np.abs(grad)))
        improved = False
        if gmax > 1e-12:
            direction = grad / gmax
            s = step
            for attempt in range(8):
                cand = np.clip(best_v - s * direction, lo, hi)
                f_cand = float(evaluator(cand))
                if f_cand < best_f:
                    best_v, best_f = cand, f_cand
                    improved = True
                    if attempt == 0:
                        step = min(1.5 * s, span)
                    else:
                        step = s
                    break
                s *= 0.5
        if not improved:
            # gradient stalled (flat, or descent blocked by the box): try a
            # couple of random single-coordinate moves before giving up
            for _ in range(4):
                j = int(rng.integers(best_v.size))
                cand = best_v.copy()
                cand[j] = np.clip(cand[j] + 0.1 * span * (2.0 * rng.random() - 1.0), lo, hi)
                f_cand = float(evaluator(cand))
                if f_cand < best_f:
                    best_v, best_f = cand, f_cand
                    improved = True
                    break
            if not improved:
                break
            step = max(step * 0.5, 1e-3 * span)
    return best_v, best_f, f0


def stratified_subsample(ps: ParticleSet, n: int) -> np.ndarray:
    """Deterministic weight-stratified draw of n particle values.

    Inverts the cumulative weights at the stratum midpoints (i + 0.5)/n, so
    repeated calls on the same posterior give identical selections.
    """
    if n <= 0:
        raise ValueError(f"subsample size must be positive, got {n}")
    cumw = np.cumsum(ps.weights)
    cumw /= cumw[-1]
    cumw[-1] = 1.0
    positions = (np.arange(n) + 0.5) / n
    idx = np.searchsorted(cumw, positions, side="left")
    return ps.thetas[idx].copy()


@dataclass
class PlanResult:
    """Outcome of one receding-horizon planning call.

    Attributes:
        u0: First input of the improved sequence (the one to apply), clipped.
        controls: Full improved sequence, shape (N,).
        planned_value: Objective value of `controls`.
        warm_value: Objective value of the shifted warm start; always >=
            planned_value.
        worst_theta: Maximizing parameter candidate for the worst-case kinds,
            None for nominal and stochastic.
    """

    u0: float
    controls: np.ndarray
    planned_value: float
    warm_value: float
    worst_theta: np.ndarray | None


def plan(
    kind: str,
    x0: np.ndarray,
    ps: ParticleSet,
    amb: AmbiguitySet,
    scenarios: ScenarioSet,
    cost: CostSpec,
    model: SystemModel,
    v_prev: np.ndarray,
    budget: int,
    rng: np.random.Generator,
    *,
    tube_box: np.ndarray | None = None,
    subsample: int = 32,
    optimizer: str = "gradient",
    candidate_grid: int = 0,
) -> PlanResult:
    """One receding-horizon planning call for a given controller kind.

    Shifts the previous input sequence, builds the kind's planning objective
    over the common scenario block, improves within the iteration budget, and
    returns the first input of the result.

    Args:
        kind: One of KINDS.
        x0: Current state.
        ps: Current parameter posterior (used by nominal and stochastic).
        amb: Current ambiguity set (used by risk_averse).
        scenarios: Frozen noise block for this call.
        cost: Cost specification.
        model: System model.
        v_prev: Input sequence returned by the previous call (any sequence of
            the right length works for the first call; zeros are customary).
        budget: Improvement iterations for `improve_policy`.
        rng: Source for optimizer perturbation fallbacks.
        tube_box: Fixed box for the tube controller; defaults to the model's
            parameter prior box.
        subsample: Posterior subsample size for the stochastic controller.
        optimizer: Improvement method, "gradient" or "lbfgs".
        candidate_grid: Extra per-dimension grid points for the worst-case
            candidate set (0 = corners and centre only).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown controller kind {kind!r}; expected one of {KINDS}")
    v_shift = shift_warm_start(v_prev)

    if kind == "nominal":
        theta_hat = np.atleast_2d(ps.weights @ ps.thetas)

        def objective(v):
            return float(evaluate_costs(x0, v, theta_hat, scenarios, cost, model)[0])

    elif kind == "stochastic":
        thetas_sub = stratified_subsample(ps, subsample)

        def objective(v):
            return float(np.mean(evaluate_costs(x0, v, thetas_sub, scenarios, cost, model)))

    else:
        box = amb.box if kind == "risk_averse" else (
            model.param_box if tube_box is None else np.asarray(tube_box, dtype=float)
        )
        cand = box_candidates(box, grid_points=candidate_grid)

        def objective(v):
            return float(np.max(evaluate_costs(x0, v, cand, scenarios, cost, model)))

    v_best, planned, warm = improve_policy(
        v_shift, objective, model.control_bounds, budget, rng, method=optimizer
    )
    worst_theta = None
    if kind in ("tube", "risk_averse"):
        vals = evaluate_costs(x0, v_best, cand, scenarios, cost, model)
        worst_theta = cand[int(np.argmax(vals))].copy()
    lo, hi = model.control_bounds
    return PlanResult(
        u0=float(np.clip(v_best[0], lo, hi)),
        controls=v_best,
        planned_value=planned,
        warm_value=warm,
        worst_theta=worst_theta,
    )
