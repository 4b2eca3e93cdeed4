"""Risk functionals, scenario cost evaluation, and robust dynamic programming.

Planning objectives are Monte-Carlo averages of rollout costs over a fixed
set of pre-drawn noise scenarios (common random numbers), optionally wrapped
in a worst-case over a finite set of parameter candidates drawn from an
ambiguity box.  The scenario set is frozen at construction so that every
parameter candidate and every optimizer iterate within one planning call
sees identical noise.

The discrete DP solver exposes both orderings of expectation and worst case:
`nested` interleaves a per-stage sup over theta inside the Bellman recursion,
`joint` enumerates deterministic policies and takes the sup over theta of the
total expected cost.  The nested value always dominates the joint one; the
gap can be strict because the nested adversary may react to the realized
state.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .ambiguity import AmbiguitySet
from .dynamics import SystemModel, step_stochastic

# ---------------------------------------------------------------------------
# costs and scenarios
# ---------------------------------------------------------------------------


@dataclass
class CostSpec:
    """Quadratic tracking cost l(x, u) = (x - x*)' Q (x - x*) + R u^2.

    Attributes:
        q_weights: Diagonal of Q, shape (n,), entries >= 0.
        r_weight: Control weight R > 0.
        x_target: Setpoint x*, shape (n,).
        terminal_weight: Terminal cost is terminal_weight * (x - x*)' Q (x - x*).
    """

    q_weights: np.ndarray
    r_weight: float
    x_target: np.ndarray
    terminal_weight: float = 1.0

    def __post_init__(self) -> None:
        self.q_weights = np.asarray(self.q_weights, dtype=float)
        self.x_target = np.asarray(self.x_target, dtype=float)
        if np.any(self.q_weights < 0.0):
            raise ValueError("q_weights must be nonnegative")
        if self.r_weight <= 0.0:
            raise ValueError(f"r_weight must be positive, got {self.r_weight}")
        if self.terminal_weight < 0.0:
            raise ValueError("terminal_weight must be nonnegative")


def stage_cost(cost: CostSpec, x: np.ndarray, u) -> np.ndarray:
    """Stage cost, broadcasting over leading axes of x."""
    d = np.asarray(x, dtype=float) - cost.x_target
    return (d * d) @ cost.q_weights + cost.r_weight * np.square(u)


def terminal_cost(cost: CostSpec, x: np.ndarray) -> np.ndarray:
    """Terminal cost, the weighted state-tracking term without a control part."""
    d = np.asarray(x, dtype=float) - cost.x_target
    return cost.terminal_weight * ((d * d) @ cost.q_weights)


@dataclass
class ScenarioSet:
    """Frozen block of standard-normal noise draws, shape (S, N, n).

    One scenario is a length-N sequence of per-dimension draws; the block is
    made read-only so that candidate sweeps and optimizer iterates cannot
    perturb the common random numbers.
    """

    noise: np.ndarray

    def __post_init__(self) -> None:
        self.noise = np.array(self.noise, dtype=float)
        if self.noise.ndim != 3:
            raise ValueError("noise must have shape (n_scenarios, horizon, state_dim)")
        if not np.all(np.isfinite(self.noise)):
            raise ValueError("non-finite scenario noise")
        self.noise.setflags(write=False)

    @property
    def n_scenarios(self) -> int:
        return self.noise.shape[0]

    @property
    def horizon(self) -> int:
        return self.noise.shape[1]


def draw_scenarios(
    rng: np.random.Generator, n_scenarios: int, horizon: int, state_dim: int
) -> ScenarioSet:
    """Draw a fresh frozen scenario block."""
    if n_scenarios <= 0 or horizon <= 0 or state_dim <= 0:
        raise ValueError("scenario dimensions must be positive")
    return ScenarioSet(rng.standard_normal((n_scenarios, horizon, state_dim)))


# ---------------------------------------------------------------------------
# empirical risk measures
# ---------------------------------------------------------------------------


def _check_samples(samples) -> np.ndarray:
    z = np.asarray(samples, dtype=float)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("samples must be a nonempty 1-D array")
    if not np.all(np.isfinite(z)):
        raise ValueError("samples must be finite")
    return z


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def empirical_var(samples, alpha: float) -> float:
    """Value-at-risk of the empirical distribution.

    Returns the smallest sample value z with ECDF(z) >= alpha, i.e. the
    usual left-continuous alpha-quantile of the sample set.
    """
    z = _check_samples(samples)
    _check_alpha(alpha)
    z = np.sort(z)
    n = z.size
    a = alpha * n
    k = int(math.ceil(a - 1e-12))  # tolerate round-off when alpha*n is integral
    return float(z[max(k, 1) - 1])


def empirical_cvar(samples, alpha: float) -> float:
    """Conditional value-at-risk via the variational form.

    Computes inf_t { t + mean[(Z - t)_+] / alpha } exactly: the objective is
    convex and piecewise linear in t with breakpoints at the sample values,
    so the infimum is attained at one of them.  Smaller alpha is more
    risk-averse (alpha -> 0 approaches the sample maximum); the value is the
    mean of the worst alpha-tail.
    """
    z = _check_samples(samples)
    _check_alpha(alpha)
    z = np.sort(z)
    n = z.size
    # suffix[i] = sum of z[j] for j > i
    suffix = np.concatenate([np.cumsum(z[::-1])[::-1][1:], [0.0]])
    counts = n - 1 - np.arange(n)
    obj = z + (suffix - counts * z) / (alpha * n)
    return float(np.min(obj))


# ---------------------------------------------------------------------------
# scenario rollout costs
# ---------------------------------------------------------------------------


def evaluate_costs(
    x0: np.ndarray,
    controls: np.ndarray,
    thetas: np.ndarray,
    scenarios: ScenarioSet,
    cost: CostSpec,
    model: SystemModel,
) -> np.ndarray:
    """Scenario-averaged rollout cost for a batch of parameter values.

    Controls are clipped to the model's input bounds before both the dynamics
    and the control penalty, matching what a saturated actuator would apply.
    All parameter candidates share the scenario noise.

    Args:
        x0: Initial state, shape (n,).
        controls: Open-loop input sequence, shape (N,).
        thetas: Parameter batch, shape (C, d) (a single (d,) vector is
            promoted to C = 1).
        scenarios: Noise block with horizon N and state dimension n.
        cost: Stage/terminal cost specification.
        model: System model.

    Returns:
        Average total cost per candidate, shape (C,).
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    controls = np.asarray(controls, dtype=float)
    noise = scenarios.noise
    n_sc, horizon, state_dim = noise.shape
    if controls.shape != (horizon,):
        raise ValueError(
            f"controls shape {controls.shape} does not match scenario horizon {horizon}"
        )
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (state_dim,):
        raise ValueError(f"x0 shape {x0.shape} does not match state dim {state_dim}")

    lo, hi = model.control_bounds
    u_seq = np.clip(controls, lo, hi)
    n_cand = thetas.shape[0]
    x = np.broadcast_to(x0, (n_cand, n_sc, state_dim)).copy()
    th = thetas[:, None, :]
    total = np.zeros((n_cand, n_sc))
    for i in range(horizon):
        u = u_seq[i]
        total += stage_cost(cost, x, u)
        x = step_stochastic(model, x, u, th, noise=noise[None, :, i, :])
    total += terminal_cost(cost, x)
    return total.mean(axis=1)


def expected_cost(
    x0: np.ndarray,
    controls: np.ndarray,
    theta: np.ndarray,
    scenarios: ScenarioSet,
    cost: CostSpec,
    model: SystemModel,
) -> float:
    """Scenario average of the rollout cost for a single parameter value."""
    return float(evaluate_costs(x0, controls, np.atleast_2d(theta), scenarios, cost, model)[0])


def box_candidates(box: np.ndarray, grid_points: int = 0) -> np.ndarray:
    """Finite worst-case candidates for a parameter box.

    Always includes all corners and the centre; with grid_points >= 2 a
    per-dimension refinement grid (grid_points values per dimension, full
    cartesian product) is appended.

    Args:
        box: Shape (d, 2).
        grid_points: 0 disables the refinement grid; use 3 for a coarse sweep.

    Returns:
        Candidate array, shape (C, d); every row lies inside the box.
    """
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2:
        raise ValueError("box must have shape (d, 2)")
    corners = np.array(list(itertools.product(*box)), dtype=float)
    centre = box.mean(axis=1)[None, :]
    parts = [corners, centre]
    if grid_points >= 2:
        axes = [np.linspace(lo, hi, grid_points) for lo, hi in box]
        parts.append(np.array(list(itertools.product(*axes)), dtype=float))
    return np.concatenate(parts, axis=0)


def worst_case_value(
    x0: np.ndarray,
    controls: np.ndarray,
    amb,
    scenarios: ScenarioSet,
    cost: CostSpec,
    model: SystemModel,
    candidates=None,
) -> tuple[float, np.ndarray]:
    """Worst-case scenario-averaged cost over a parameter box.

    The sup is taken over a finite candidate set; ties resolve to the first
    candidate in construction order, which keeps repeated calls bit-stable.

    Args:
        x0: Initial state.
        controls: Open-loop input sequence.
        amb: AmbiguitySet or raw (d, 2) box.
        scenarios: Common-random-number noise block.
        cost: Cost specification.
        model: System model.
        candidates: Optional override; an explicit (C, d) array, or a callable
            mapping the box to one.  Defaults to `box_candidates`.

    Returns:
        Tuple (value, maximizing theta).
    """
    box = amb.box if isinstance(amb, AmbiguitySet) else np.asarray(amb, dtype=float)
    if candidates is None:
        cand = box_candidates(box)
    elif callable(candidates):
        cand = np.atleast_2d(np.asarray(candidates(box), dtype=float))
    else:
        cand = np.atleast_2d(np.asarray(candidates, dtype=float))
    vals = evaluate_costs(x0, controls, cand, scenarios, cost, model)
    j = int(np.argmax(vals))
    return float(vals[j]), cand[j].copy()


# ---------------------------------------------------------------------------
# discrete robust dynamic programming
# ---------------------------------------------------------------------------

#: Enumeration caps for the joint (policy-enumeration) mode.
JOINT_CAPS = {"n_states": 4, "n_controls": 3, "n_thetas": 3, "horizon": 3}


@dataclass
class DiscreteRiskMDP:
    """Finite MDP with a finite set of candidate transition models.

    Attributes:
        transitions: Shape (n_thetas, n_controls, n_states, n_states); each
            row transitions[t, u, x] is a probability vector over successors.
        stage_costs: Shape (n_states, n_controls), nonnegative.
        terminal_costs: Shape (n_states,).
        horizon: Number of decision stages, >= 0.
    """

    transitions: np.ndarray
    stage_costs: np.ndarray
    terminal_costs: np.ndarray
    horizon: int

    def __post_init__(self) -> None:
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.stage_costs = np.asarray(self.stage_costs, dtype=float)
        self.terminal_costs = np.asarray(self.terminal_costs, dtype=float)
        if self.transitions.ndim != 4:
            raise ValueError("transitions must have shape (n_thetas, n_controls, n_states, n_states)")
        n_th, n_u, n_x, n_x2 = self.transitions.shape
        if n_x != n_x2:
            raise ValueError("transition matrices must be square")
        if self.stage_costs.shape != (n_x, n_u):
            raise ValueError("stage_costs must have shape (n_states, n_controls)")
        if self.terminal_costs.shape != (n_x,):
            raise ValueError("terminal_costs must have shape (n_states,)")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if np.any(self.transitions < -1e-12):
            raise ValueError("transition probabilities must be nonnegative")
        rowsums = self.transitions.sum(axis=-1)
        if np.any(np.abs(rowsums - 1.0) > 1e-9):
            raise ValueError("transition rows must sum to 1")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[2]

    @property
    def n_controls(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_thetas(self) -> int:
        return self.transitions.shape[0]


@dataclass
class DPResult:
    """Value tables from a discrete DP solve.

    `values[i]` is the i-steps-to-go value vector over states (values[0] is
    the terminal table).  For nested mode `policies[i]` holds the greedy
    controls realizing values[i + 1]; joint mode has no stagewise policy
    tables, its minimizer is a full open-loop-in-feedback policy sequence.
    """

    mode: str
    values: list
    policies: list | None = None


def dp_solve_discrete(mdp: DiscreteRiskMDP, mode: str = "nested") -> DPResult:
    """Solve the finite robust control problem exactly.

    Args:
        mdp: Problem instance.
        mode: "nested" applies the worst case inside each Bellman step;
            "joint" enumerates deterministic feedback-policy sequences and
            applies the worst case to the total expected cost.

    Returns:
        DPResult with one value vector per sub-horizon 0..N.

    Raises:
        NotImplementedError: In joint mode when the instance exceeds the
            enumeration caps (4 states, 3 controls, 3 thetas, horizon 3).
    """
    if mode == "nested":
        return _dp_nested(mdp)
    if mode == "joint":
        return _dp_joint(mdp)
    raise ValueError(f"unknown mode {mode!r}")


def _dp_nested(mdp: DiscreteRiskMDP) -> DPResult:
    values = [mdp.terminal_costs.copy()]
    policies = []
    for _ in range(mdp.horizon):
        # expected[t, u, x] = E_theta-t [ V(x') | x, u ]
        expected = mdp.transitions @ values[-1]
        worst = expected.max(axis=0)  # (n_controls, n_states)
        q_table = mdp.stage_costs + worst.T
        values.append(q_table.min(axis=1))
        policies.append(q_table.argmin(axis=1))
    return DPResult(mode="nested", values=values, policies=policies)


def _dp_joint(mdp: DiscreteRiskMDP) -> DPResult:
    caps = JOINT_CAPS
    if (
        mdp.n_states > caps["n_states"]
        or mdp.n_controls > caps["n_controls"]
        or mdp.n_thetas > caps["n_thetas"]
        or mdp.horizon > caps["horizon"]
    ):
        raise NotImplementedError(
            "joint mode enumerates deterministic policies and is capped at "
            f"{caps['n_states']} states, {caps['n_controls']} controls, "
            f"{caps['n_thetas']} thetas, horizon {caps['horizon']}; "
            f"got ({mdp.n_states}, {mdp.n_controls}, {mdp.n_thetas}, {mdp.horizon})"
        )
    n_x, n_u, n_th = mdp.n_states, mdp.n_controls, mdp.n_thetas
    # All stagewise decision maps X -> U.
    maps = np.array(list(itertools.product(range(n_u), repeat=n_x)), dtype=int)
    n_maps = maps.shape[0]
    states = np.arange(n_x)
    # Row-select transitions and stage costs once per map:
    #   sel_p[m, t, x, :] = transitions[t, maps[m, x], x, :]
    sel_p = mdp.transitions[:, maps, states, :].transpose(1, 0, 2, 3)
    sel_l = mdp.stage_costs[states, maps]  # (n_maps, n_states)

    values = [mdp.terminal_costs.copy()]
    # cost_table[p, t, x]: expected cost of policy-suffix p from x under theta t.
    cost_table = mdp.terminal_costs[None, None, :].repeat(n_th, axis=1)
    for _ in range(mdp.horizon):
        # prepend one more stage: every map composed with every suffix policy
        nxt = np.einsum("mtxy,pty->mptx", sel_p, cost_table)
        nxt += sel_l[:, None, None, :]
        cost_table = nxt.reshape(n_maps * nxt.shape[1], n_th, n_x)
        values.append(cost_table.max(axis=1).min(axis=0))
    return DPResult(mode="joint", values=values)


def delta_relaxed(mdp: DiscreteRiskMDP) -> float:
    """Largest one-step rise of the terminal table under greedy play.

    delta = max_x min_u [ l(x, u) + max_theta E_theta V_f(x') - V_f(x) ];
    the nested values then satisfy V_{i+1} <= V_i + delta pointwise, and
    delta <= 0 certifies monotone descent of the value tables.
    """
    expected = mdp.transitions @ mdp.terminal_costs
    worst = expected.max(axis=0).T  # (n_states, n_controls)
    slack = mdp.stage_costs + worst - mdp.terminal_costs[:, None]
    return float(slack.min(axis=1).max())


# ---------------------------------------------------------------------------
# built-in instances
# ---------------------------------------------------------------------------


def strict_gap_instance() -> DiscreteRiskMDP:
    """Three-state instance where nested strictly exceeds joint at the start.

    From the start state both models move to one of two branch states with
    equal probability; the two models then disagree about which branch decays
    to the cheap absorbing state.  The nested adversary picks its model after
    seeing the branch, the joint adversary must commit, so the nested value
    at the start state is 1.0 against a joint value of 0.5.
    """
    n_x = 3  # 0 = start, 1 and 2 = branches
    p = np.zeros((2, 1, n_x, n_x))
    for t in range(2):
        p[t, 0, 0, 1] = 0.5
        p[t, 0, 0, 2] = 0.5
    p[0, 0, 1, 1] = 1.0  # theta 0: branch 1 stays expensive...
    p[0, 0, 2, 0] = 1.0  # ...branch 2 resets to the cheap start
    p[1, 0, 1, 0] = 1.0  # theta 1: the other way round
    p[1, 0, 2, 2] = 1.0
    return DiscreteRiskMDP(
        transitions=p,
        stage_costs=np.zeros((n_x, 1)),
        terminal_costs=np.array([0.0, 1.0, 1.0]),
        horizon=2,
    )


def monotone_instance(horizon: int = 3) -> DiscreteRiskMDP:
    """Instance whose terminal table admits a cost-decreasing action.

    Action 0 drives every state to the cheap state 0 under all models with a
    stage cost no larger than the terminal drop, so the greedy one-step rise
    `delta_relaxed` is <= 0 and the nested value tables decrease with the
    horizon.
    """
    p = np.zeros((2, 2, 2, 2))
    p[:, 0, :, 0] = 1.0  # action 0: go to state 0 under every model
    p[0, 1, 0] = [0.7, 0.3]
    p[0, 1, 1] = [0.2, 0.8]
    p[1, 1, 0] = [0.4, 0.6]
    p[1, 1, 1] = [0.9, 0.1]
    return DiscreteRiskMDP(
        transitions=p,
        stage_costs=np.array([[0.0, 1.0], [5.0, 2.0]]),
        terminal_costs=np.array([0.0, 10.0]),
        horizon=horizon,
    )


def positive_delta_instance(horizon: int = 3) -> DiscreteRiskMDP:
    """Instance violating the descent condition: every step costs 1.

    With a zero terminal table and unit stage costs the value tables rise by
    exactly delta_relaxed = 1 per stage, exercising the relaxed bound.
    """
    p = np.zeros((2, 2, 2, 2))
    p[:, :, :, 0] = 0.5
    p[:, :, :, 1] = 0.5
    return DiscreteRiskMDP(
        transitions=p,
        stage_costs=np.ones((2, 2)),
        terminal_costs=np.zeros(2),
        horizon=horizon,
    )


def random_mdp(
    rng: np.random.Generator,
    n_states: int = 3,
    n_controls: int = 2,
    n_thetas: int = 2,
    horizon: int = 2,
) -> DiscreteRiskMDP:
    """Random instance inside the joint enumeration caps (Dirichlet rows)."""
    transitions = rng.dirichlet(np.ones(n_states), size=(n_thetas, n_controls, n_states))
    return DiscreteRiskMDP(
        transitions=transitions,
        stage_costs=rng.random((n_states, n_controls)),
        terminal_costs=rng.random(n_states),
        horizon=horizon,
    )
