"""Identifiability and closed-loop diagnostics.

The central object is the likelihood matrix of a finite parameter candidate
set at a fixed context (state, input): column i is the discretized successor
distribution under candidate i.  Numerically dependent column subsets are
"blind zones" - candidate groups the context cannot tell apart - and the
union of zones is the context's blind region.  Combining the evidence of two
contexts shrinks blind zones to their pairwise intersections, dropping any
that the stacked likelihoods can distinguish; an empty combined region
certifies that the contexts jointly identify the parameter.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .dynamics import SystemModel, rk4_step, transition_density

#: Relative singular-value threshold for numeric rank decisions.
DEFAULT_RANK_TOL = 1e-8

#: Columns up to which blind zones are found by exhaustive subset rank checks.
EXHAUSTIVE_LIMIT = 6


@dataclass
class LikelihoodMatrix:
    """Discretized successor likelihoods of parameter candidates at a context.

    Attributes:
        matrix: Shape (n_grid, n_thetas); entry (g, i) approximates the
            transition-kernel mass of grid cell g under candidate i.
        thetas: Candidate values, shape (n_thetas, d).
        grid: Successor-state grid, shape (n_grid, n).
        cell_volume: Volume of one grid cell.
        context: Tuple (state, input) the matrix was evaluated at.
    """

    matrix: np.ndarray
    thetas: np.ndarray
    grid: np.ndarray
    cell_volume: float
    context: tuple

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 2 or self.matrix.shape[1] < 2:
            raise ValueError("likelihood matrix needs at least 2 grid rows and 2 candidates")
        if np.any(self.matrix < 0.0):
            raise ValueError("likelihood matrix entries must be nonnegative")


@dataclass
class BlindRegion:
    """Disjoint blind zones over a candidate index set.

    Attributes:
        zones: Sorted tuples of candidate indices, each of size >= 2,
            pairwise disjoint.
        n_thetas: Size of the candidate set the indices refer to.
    """

    zones: list
    n_thetas: int

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for zone in self.zones:
            if len(zone) < 2:
                raise ValueError(f"blind zones need at least two members, got {zone}")
            if seen & set(zone):
                raise ValueError("blind zones must be disjoint")
            seen |= set(zone)

    @property
    def is_empty(self) -> bool:
        return len(self.zones) == 0

    def member_indices(self) -> set[int]:
        out: set[int] = set()
        for zone in self.zones:
            out |= set(zone)
        return out


def slice_grid(
    model: SystemModel,
    x: np.ndarray,
    u,
    theta_ref: np.ndarray,
    dim: int = 0,
    n_points: int = 161,
    span_sigmas: float = 8.0,
) -> tuple[np.ndarray, float]:
    """1-D successor-state slice through the RK4 mean of a reference candidate.

    Varies coordinate `dim` over mean +/- span_sigmas * noise_std and pins the
    remaining coordinates at the mean.  Returns (grid, cell_volume) where the
    cell volume is the grid spacing along the varied coordinate.
    """
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    mean = rk4_step(model, np.asarray(x, dtype=float), u, np.asarray(theta_ref, dtype=float))
    sigma = model.noise_std[dim]
    lo = mean[dim] - span_sigmas * sigma
    hi = mean[dim] + span_sigmas * sigma
    values = np.linspace(lo, hi, n_points)
    grid = np.broadcast_to(mean, (n_points, mean.shape[0])).copy()
    grid[:, dim] = values
    return grid, float(values[1] - values[0])


def likelihood_matrix(
    model: SystemModel,
    thetas: np.ndarray,
    x: np.ndarray,
    u,
    grid: np.ndarray,
    cell_volume: float,
) -> LikelihoodMatrix:
    """Evaluate candidate successor likelihoods on a common grid.

    Args:
        model: System model.
        thetas: Candidate values, shape (n_thetas, d).
        x: Context state.
        u: Context input.
        grid: Successor states, shape (n_grid, n).
        cell_volume: Cell volume multiplying the density (> 0).

    Returns:
        LikelihoodMatrix; when the grid tiles the successor support each
        column sums to ~1.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if thetas.shape[0] < 2:
        raise ValueError("need at least two candidate thetas")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 2 or grid.shape[1] != model.state_dim:
        raise ValueError("grid must have shape (n_grid, state_dim)")
    if cell_volume <= 0.0:
        raise ValueError(f"cell_volume must be positive, got {cell_volume}")
    # density of every grid point under every candidate: (n_grid, n_thetas)
    dens = transition_density(
        model, grid[:, None, :], np.asarray(x, dtype=float), u, thetas[None, :, :]
    )
    return LikelihoodMatrix(
        matrix=dens * cell_volume,
        thetas=thetas,
        grid=grid,
        cell_volume=float(cell_volume),
        context=(np.asarray(x, dtype=float).copy(), u),
    )


def _numeric_rank(cols: np.ndarray, tol: float) -> int:
    sv = np.linalg.svd(cols, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv >= tol * sv[0]))


def _is_dependent(cols: np.ndarray, tol: float) -> bool:
    return _numeric_rank(cols, tol) < cols.shape[1]


def _merge_overlapping(sets: list) -> list:
    """Union-find merge of overlapping index sets, result sorted and disjoint."""
    parent = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for s in sets:
        for i in s:
            parent.setdefault(i, i)
    for s in sets:
        first = find(next(iter(s)))
        for i in s:
            parent[find(i)] = first
    groups: dict[int, set] = {}
    for i in parent:
        groups.setdefault(find(i), set()).add(i)
    return sorted(tuple(sorted(g)) for g in groups.values())


def blind_regions(lm, tol: float = DEFAULT_RANK_TOL) -> BlindRegion:
    """Find the blind region of one context from its likelihood matrix.

    For up to EXHAUSTIVE_LIMIT candidates every column subset is rank-tested
    and the minimal dependent subsets are kept; overlapping ones merge into a
    single zone.  Larger candidate sets fall back to grouping by the supports
    of the numerical null-space vectors.

    Args:
        lm: LikelihoodMatrix or raw (n_grid, n_thetas) array.
        tol: Relative singular-value threshold.

    Returns:
        BlindRegion with disjoint zones; empty when the columns are
        numerically full-rank.
    """
    matrix = lm.matrix if isinstance(lm, LikelihoodMatrix) else np.asarray(lm, dtype=float)
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    n = matrix.shape[1]
    if n == 0:
        raise ValueError("likelihood matrix has no candidate columns")
    if not _is_dependent(matrix, tol):
        return BlindRegion(zones=[], n_thetas=n)
    if n <= EXHAUSTIVE_LIMIT:
        minimal: list[tuple] = []
        for size in range(2, n + 1):
            for subset in itertools.combinations(range(n), size):
                if any(set(m) <= set(subset) for m in minimal):
                    continue  # supersets of a dependent set stay dependent
                if _is_dependent(matrix[:, subset], tol):
                    minimal.append(subset)
        zones = _merge_overlapping([set(m) for m in minimal])
    else:
        _, sv, vt = np.linalg.svd(matrix, full_matrices=False)
        null_rows = vt[sv < tol * sv[0]]
        supports = []
        for row in null_rows:
            support = set(np.nonzero(np.abs(row) > 1e-6 * np.max(np.abs(row)))[0].tolist())
            if len(support) >= 2:
                supports.append(support)
        zones = _merge_overlapping(supports)
    return BlindRegion(zones=[tuple(int(i) for i in z) for z in zones], n_thetas=n)


def combine_regions(r1: BlindRegion, r2: BlindRegion, joint_lm, tol: float = DEFAULT_RANK_TOL) -> BlindRegion:
    """Blind region under the combined evidence of two contexts.

    Candidate zones are the pairwise intersections of the two regions' zones;
    an intersection survives only if it keeps at least two members and its
    columns stay numerically dependent in the row-stacked joint likelihood
    matrix.  An empty result means the two contexts jointly identify the
    parameter among the candidates.

    Args:
        r1: Blind region of the first context.
        r2: Blind region of the second context.
        joint_lm: Row-stacked likelihood matrix over both contexts
            (LikelihoodMatrix or raw array with the same candidate columns).
        tol: Relative singular-value threshold.
    """
    matrix = joint_lm.matrix if isinstance(joint_lm, LikelihoodMatrix) else np.asarray(joint_lm, dtype=float)
    if r1.n_thetas != r2.n_thetas or matrix.shape[1] != r1.n_thetas:
        raise ValueError("regions and joint matrix must refer to the same candidate set")
    survivors = []
    for z1 in r1.zones:
        for z2 in r2.zones:
            inter = tuple(sorted(set(z1) & set(z2)))
            if len(inter) >= 2 and _is_dependent(matrix[:, inter], tol):
                survivors.append(set(inter))
    zones = _merge_overlapping(survivors)
    return BlindRegion(zones=[tuple(int(i) for i in z) for z in zones], n_thetas=r1.n_thetas)


def stack_matrices(lm1: LikelihoodMatrix, lm2: LikelihoodMatrix) -> np.ndarray:
    """Row-stack two likelihood matrices over the same candidate set."""
    if lm1.matrix.shape[1] != lm2.matrix.shape[1]:
        raise ValueError("likelihood matrices have different candidate counts")
    return np.vstack([lm1.matrix, lm2.matrix])


def kl_step(p: np.ndarray, q: np.ndarray, cell_volume: float) -> float:
    """KL divergence between two densities tabulated on a common grid.

    Uses the convention 0 * log(0/q) = 0; a cell with p > 0 but q = 0 makes
    the divergence infinite.

    Args:
        p: True density values on the grid.
        q: Approximating density values on the grid.
        cell_volume: Common cell volume; both densities must integrate to 1
            within 1e-6.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("densities must share the grid shape")
    if np.any(p < 0.0) or np.any(q < 0.0):
        raise ValueError("densities must be nonnegative")
    for label, dens in (("p", p), ("q", q)):
        mass = float(dens.sum() * cell_volume)
        if abs(mass - 1.0) > 1e-6:
            raise ValueError(f"density {label} integrates to {mass}, expected 1 within 1e-6")
    support = p > 0.0
    if np.any(support & (q == 0.0)):
        return float("inf")
    terms = np.zeros_like(p)
    terms[support] = p[support] * np.log(p[support] / q[support])
    total = float(terms.sum() * cell_volume)
    return max(total, 0.0)  # roundoff can push a near-zero divergence slightly negative


@dataclass
class DescentReport:
    """Per-step audit of the closed-loop value descent property.

    A step k is flagged when V_{k+1} - V_k > -l_k + slack.  Violation rates
    are reported, not asserted: with process noise occasional ascents are
    expected and the interesting signal is their trend over a run.
    """

    deltas: np.ndarray
    limits: np.ndarray
    violations: np.ndarray
    violation_rate: float

    def rate_on(self, steps: slice) -> float:
        """Violation rate restricted to a slice of steps."""
        window = self.violations[steps]
        return float(window.mean()) if window.size else 0.0


def descent_audit(values: np.ndarray, stage_costs: np.ndarray, slack: float = 0.0) -> DescentReport:
    """Compare successive planned values against the paid stage costs.

    Args:
        values: Planned objective values V_k, length m >= 2.
        stage_costs: Stage costs l_k actually paid, length m - 1 (a length-m
            array is accepted and its last entry ignored).
        slack: Allowed per-step ascent before a step is flagged.

    Returns:
        DescentReport over the m - 1 transitions.
    """
    values = np.asarray(values, dtype=float)
    stage_costs = np.asarray(stage_costs, dtype=float)
    if values.ndim != 1 or values.size < 2:
        raise ValueError("values must be 1-D with at least two entries")
    m = values.size
    if stage_costs.shape == (m,):
        stage_costs = stage_costs[:-1]
    if stage_costs.shape != (m - 1,):
        raise ValueError(
            f"stage_costs must have length {m - 1} (or {m}), got {stage_costs.shape}"
        )
    deltas = np.diff(values)
    limits = -stage_costs + slack
    violations = deltas > limits
    return DescentReport(
        deltas=deltas,
        limits=limits,
        violations=violations,
        violation_rate=float(violations.mean()),
    )


# ---------------------------------------------------------------------------
# constructed identifiability scenario
# ---------------------------------------------------------------------------


@dataclass
class ThreeThetaScenario:
    """Finite-candidate system with an input-dependent blind zone.

    At the blind input two of the three candidates produce identical
    transition kernels from any state; at the informative input all three
    separate.  Running the filter under inputs that visit both contexts
    identifies the true candidate, while staying at the blind input leaves
    posterior mass stranded on the blind partner.
    """

    model: SystemModel
    thetas: np.ndarray
    theta_star_index: int
    blind_pair: tuple
    u_blind: float
    u_informative: float
    x0: np.ndarray


def three_theta_scenario(noise_std: float = 0.05, dt: float = 0.1) -> ThreeThetaScenario:
    """Build the canonical three-candidate scenario.

    The drift is -x/2 + a(u) * theta + b(u) * theta^2 with a(u) = 5u - 4 and
    b(u) = 1 - u.  At u = 0 the theta-part is theta^2 - 4 theta, which takes
    the same value for theta = 1 and theta = 3 (the blind pair) but a
    different one for theta = 2; at u = 1 it is theta itself and all three
    candidates separate.  The x-part is candidate-independent, so the RK4
    means of the blind pair coincide exactly at u = 0 from any state.
    """

    def drift(state, u, theta):
        state = np.asarray(state, dtype=float)
        theta = np.asarray(theta, dtype=float)
        u = np.asarray(u, dtype=float)
        th = theta[..., 0]
        # theta part first: at u = 0 it is exactly -3.0 for both blind
        # candidates, so their drifts (and RK4 means) agree bitwise.
        val = (5.0 * u - 4.0) * th + (1.0 - u) * th**2 - 0.5 * state[..., 0]
        out = np.empty(np.broadcast(state[..., 0], val).shape + (1,))
        out[..., 0] = val
        return out

    model = SystemModel(
        name="three_theta",
        drift=drift,
        dt=dt,
        noise_std=np.full(1, float(noise_std)),
        param_box=np.array([[1.0, 3.0]]),
        control_bounds=(0.0, 1.0),
    )
    return ThreeThetaScenario(
        model=model,
        thetas=np.array([[1.0], [2.0], [3.0]]),
        theta_star_index=0,
        blind_pair=(0, 2),
        u_blind=0.0,
        u_informative=1.0,
        x0=np.zeros(1),
    )
