"""Closed-loop episodes, benchmark campaigns, and report writers.

An episode interleaves estimation and control exactly once per time step:
observe the state, update the parameter posterior on the latest transition
(from step 1 on), refresh the ambiguity set, plan from the shifted warm
start, and apply the first input with fresh process noise.

Randomness is split into purpose-keyed streams seeded by (seed, run index,
purpose) only - never by controller kind - so paired runs of different
controllers see identical disturbance realizations, and a repeated episode
is bit-identical.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from .ambiguity import AmbiguitySet, credible_interval_eti, credible_interval_hpdi, update_ambiguity
from .bayes_filter import (
    ParticleSet,
    effective_sample_size,
    init_particles,
    propagate,
    resample_inverse_transform,
    reweight,
)
from .config import ExperimentConfig
from .dynamics import step_stochastic
from .mpc import KINDS, plan
from .risk import draw_scenarios, stage_cost

#: Metric columns of the benchmark summary, in reporting order.
METRICS = ("total_cost", "tracking_error", "param_error", "violations")

#: CSV schemas (kept in one place so tests and readers can import them).
STEP_HEADER = (
    "run,step,kind,p,p_dot,q,q_dot,u,stage_cost,"
    "theta_m_hat,theta_l_hat,eps_k,planned_value,violation"
)
SUMMARY_HEADER = "kind,metric,mean,std,n_runs"

#: Episode abort threshold on the state magnitude.
BLOWUP_LIMIT = 1e6

# purpose tags for the per-episode random streams
_STREAM_INIT = 0
_STREAM_JITTER = 1
_STREAM_RESAMPLE = 2
_STREAM_SCENARIOS = 3
_STREAM_OPTIMIZER = 4
_STREAM_DISTURBANCE = 5


def _stream(seed: int, run_index: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, run_index, purpose]))


@dataclass
class EpisodeRecord:
    """Everything logged about one closed-loop episode.

    Per-step arrays hold step k's pre-control state x_k, the applied input
    u_k, the stage cost l(x_k, u_k), the posterior mean and ambiguity radius
    the planner saw, the planned and warm-start objective values, and the
    angle-violation flag |q_k| > pi.  Aborted episodes carry the truncated
    arrays up to the abort step.
    """

    kind: str
    run_index: int
    seed: int
    theta_true: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    stage_costs: np.ndarray
    theta_hats: np.ndarray
    eps: np.ndarray
    planned_values: np.ndarray
    warm_values: np.ndarray
    violations: np.ndarray
    final_state: np.ndarray
    final_theta_hat: np.ndarray
    final_eps: float
    degenerate_steps: int
    aborted: bool
    wall_time: float

    @property
    def n_steps(self) -> int:
        return self.states.shape[0]

    def total_cost(self) -> float:
        return float(self.stage_costs.sum())

    def tracking_error(self) -> float:
        if self.n_steps == 0:  # aborted before the first step was logged
            return float("nan")
        q_target = np.pi
        return float(np.mean((self.states[:, 2] - q_target) ** 2))

    def param_error(self) -> float:
        return float(np.linalg.norm(self.final_theta_hat - self.theta_true))

    def violation_count(self) -> int:
        return int(self.violations.sum())

    def metric(self, name: str) -> float:
        if name == "total_cost":
            return self.total_cost()
        if name == "tracking_error":
            return self.tracking_error()
        if name == "param_error":
            return self.param_error()
        if name == "violations":
            return float(self.violation_count())
        raise ValueError(f"unknown metric {name!r}")


def run_episode(cfg: ExperimentConfig, kind: str, run_index: int = 0) -> EpisodeRecord:
    """Run one closed-loop episode of `cfg.steps` steps for one controller.

    Args:
        cfg: Validated experiment configuration.
        kind: Controller kind, one of KINDS.
        run_index: Pairing index; episodes with equal (seed, run_index) share
            disturbance noise across kinds.

    Returns:
        EpisodeRecord; `aborted` is set when the state norm passed
        BLOWUP_LIMIT and the episode was cut short.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown controller kind {kind!r}; expected one of {KINDS}")
    t_start = time.perf_counter()
    model = cfg.build_model()
    cost = cfg.build_cost()
    theta_true = np.asarray(cfg.theta_true, dtype=float)
    n = model.state_dim
    horizon = cfg.horizon
    jitter = cfg.jitter_std()
    ci_fn = credible_interval_eti if cfg.interval == "eti" else credible_interval_hpdi

    rng_init = _stream(cfg.seed, run_index, _STREAM_INIT)
    rng_jit = _stream(cfg.seed, run_index, _STREAM_JITTER)
    rng_res = _stream(cfg.seed, run_index, _STREAM_RESAMPLE)
    rng_scen = _stream(cfg.seed, run_index, _STREAM_SCENARIOS)
    rng_opt = _stream(cfg.seed, run_index, _STREAM_OPTIMIZER)
    rng_dist = _stream(cfg.seed, run_index, _STREAM_DISTURBANCE)

    ps = init_particles(model.param_box, cfg.particles, rng_init)
    amb = update_ambiguity(None, ci_fn(ps, cfg.level))

    T = cfg.steps
    states = np.zeros((T, n))
    controls = np.zeros(T)
    stage_costs = np.zeros(T)
    theta_hats = np.zeros((T, model.param_dim))
    eps = np.zeros(T)
    planned_values = np.zeros(T)
    warm_values = np.zeros(T)
    violations = np.zeros(T, dtype=bool)

    x = np.asarray(cfg.x0, dtype=float)
    v_prev = np.zeros(horizon)
    x_prev = None
    u_prev = None
    degenerate = 0
    aborted = False
    steps_done = 0

    for k in range(T):
        if not np.all(np.isfinite(x)) or float(np.max(np.abs(x))) > BLOWUP_LIMIT:
            aborted = True
            break
        if k > 0:
            ps, amb, was_degenerate = _filter_update(
                cfg, model, ps, amb, ci_fn, x, x_prev, u_prev, jitter, rng_jit, rng_res
            )
            degenerate += int(was_degenerate)
        theta_hat = ps.weights @ ps.thetas
        scen = draw_scenarios(rng_scen, cfg.scenarios, horizon, n)
        result = plan(
            kind,
            x,
            ps,
            amb,
            scen,
            cost,
            model,
            v_prev,
            cfg.budget,
            rng_opt,
            tube_box=cfg.tube_box_array(),
            subsample=cfg.subsample,
            optimizer=cfg.optimizer,
            candidate_grid=cfg.candidate_grid,
        )
        states[k] = x
        controls[k] = result.u0
        stage_costs[k] = float(stage_cost(cost, x, result.u0))
        theta_hats[k] = theta_hat
        eps[k] = amb.eps
        planned_values[k] = result.planned_value
        warm_values[k] = result.warm_value
        violations[k] = bool(abs(x[2]) > np.pi)
        x_prev, u_prev = x, result.u0
        x = step_stochastic(model, x, result.u0, theta_true, rng=rng_dist)
        v_prev = result.controls
        steps_done = k + 1

    if not aborted and steps_done > 0:
        # fold the last observed transition into the final estimate
        ps, amb, was_degenerate = _filter_update(
            cfg, model, ps, amb, ci_fn, x, x_prev, u_prev, jitter, rng_jit, rng_res
        )
        degenerate += int(was_degenerate)
    final_theta_hat = ps.weights @ ps.thetas

    return EpisodeRecord(
        kind=kind,
        run_index=run_index,
        seed=cfg.seed,
        theta_true=theta_true,
        states=states[:steps_done],
        controls=controls[:steps_done],
        stage_costs=stage_costs[:steps_done],
        theta_hats=theta_hats[:steps_done],
        eps=eps[:steps_done],
        planned_values=planned_values[:steps_done],
        warm_values=warm_values[:steps_done],
        violations=violations[:steps_done],
        final_state=x.copy(),
        final_theta_hat=final_theta_hat,
        final_eps=amb.eps,
        degenerate_steps=degenerate,
        aborted=aborted,
        wall_time=time.perf_counter() - t_start,
    )


def _filter_update(cfg, model, ps, amb, ci_fn, x_new, x_prev, u_prev, jitter, rng_jit, rng_res):
    """One propagate/reweight/(resample)/ambiguity cycle."""
    ps = propagate(ps, rng_jit, jitter)
    ps, was_degenerate = reweight(ps, x_new, x_prev, u_prev, model)
    if cfg.ess_threshold <= 0.0 or effective_sample_size(ps) < cfg.ess_threshold * ps.n_particles:
        ps = resample_inverse_transform(ps, rng_res)
    amb = update_ambiguity(amb, ci_fn(ps, cfg.level))
    return ps, amb, was_degenerate


# ---------------------------------------------------------------------------
# campaigns
# ---------------------------------------------------------------------------


@dataclass
class BenchmarkTable:
    """Per-kind summary statistics of a campaign.

    Attributes:
        kinds: Controller kinds in reporting order.
        means / stds: (kind, metric) -> value over completed runs;
            population standard deviation (a single run reports 0).
        n_runs: kind -> number of completed (non-aborted) runs.
        aborted: kind -> number of aborted runs.
    """

    kinds: tuple
    means: dict
    stds: dict
    n_runs: dict
    aborted: dict


def _episode_args(cfg: ExperimentConfig):
    return [(cfg, kind, run) for kind in cfg.kinds for run in range(cfg.runs)]


def _run_one(args) -> EpisodeRecord:
    cfg, kind, run = args
    return run_episode(cfg, kind, run)


def resolve_workers(n_tasks: int) -> int:
    """Worker count: min(cpu count, tasks), capped by BRAMP_THREADS if set."""
    workers = min(os.cpu_count() or 1, n_tasks)
    cap = os.environ.get("BRAMP_THREADS")
    if cap is not None:
        try:
            cap_val = int(cap)
        except ValueError as exc:
            raise ValueError(f"BRAMP_THREADS must be an integer, got {cap!r}") from exc
        if cap_val < 1:
            raise ValueError(f"BRAMP_THREADS must be at least 1, got {cap_val}")
        workers = min(workers, cap_val)
    return max(workers, 1)


def run_benchmark(cfg: ExperimentConfig) -> tuple[BenchmarkTable, list]:
    """Run the paired campaign: cfg.runs episodes for every controller kind.

    Episodes are independent and run in parallel worker processes when more
    than one worker is available (BRAMP_THREADS caps the count); results are
    ordered by (kind, run) regardless of completion order, so campaign output
    is reproducible byte for byte.

    Returns:
        Tuple (table, records) with records sorted by (kind order, run).
    """
    tasks = _episode_args(cfg)
    workers = resolve_workers(len(tasks))
    if workers == 1:
        records = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as pool:
            records = list(pool.map(_run_one, tasks, chunksize=1))
    ordered = sorted(records, key=lambda r: (cfg.kinds.index(r.kind), r.run_index))
    return summarize(ordered, cfg.kinds), ordered


def summarize(records: list, kinds: tuple | None = None) -> BenchmarkTable:
    """Aggregate episode records into a BenchmarkTable."""
    if kinds is None:
        seen = []
        for r in records:
            if r.kind not in seen:
                seen.append(r.kind)
        kinds = tuple(seen)
    means: dict = {}
    stds: dict = {}
    n_runs: dict = {}
    aborted: dict = {}
    for kind in kinds:
        complete = [r for r in records if r.kind == kind and not r.aborted]
        aborted[kind] = sum(1 for r in records if r.kind == kind and r.aborted)
        n_runs[kind] = len(complete)
        for metric in METRICS:
            vals = np.array([r.metric(metric) for r in complete])
            means[(kind, metric)] = float(vals.mean()) if vals.size else float("nan")
            stds[(kind, metric)] = float(vals.std()) if vals.size else float("nan")
    return BenchmarkTable(kinds=tuple(kinds), means=means, stds=stds, n_runs=n_runs, aborted=aborted)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    """12-significant-digit decimal used in all CSV output."""
    return f"{float(value):.12g}"


def write_csv(obj, path: str) -> None:
    """Write either per-step rows (list of EpisodeRecords) or a summary table.

    Per-step schema: STEP_HEADER, one row per episode step.  Summary schema:
    SUMMARY_HEADER, one row per (kind, metric).  Floats carry 12 significant
    digits; rows end with a plain newline.
    """
    if isinstance(obj, BenchmarkTable):
        _write_summary_csv(obj, path)
    elif isinstance(obj, EpisodeRecord):
        _write_step_csv([obj], path)
    elif isinstance(obj, (list, tuple)) and all(isinstance(r, EpisodeRecord) for r in obj):
        _write_step_csv(list(obj), path)
    else:
        raise TypeError("write_csv expects EpisodeRecord(s) or a BenchmarkTable")


def _write_step_csv(records: list, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STEP_HEADER.split(","))
        for rec in records:
            for k in range(rec.n_steps):
                writer.writerow(
                    [
                        rec.run_index,
                        k,
                        rec.kind,
                        _fmt(rec.states[k, 0]),
                        _fmt(rec.states[k, 1]),
                        _fmt(rec.states[k, 2]),
                        _fmt(rec.states[k, 3]),
                        _fmt(rec.controls[k]),
                        _fmt(rec.stage_costs[k]),
                        _fmt(rec.theta_hats[k, 0]),
                        _fmt(rec.theta_hats[k, 1]),
                        _fmt(rec.eps[k]),
                        _fmt(rec.planned_values[k]),
                        int(rec.violations[k]),
                    ]
                )


def _write_summary_csv(table: BenchmarkTable, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER.split(","))
        for kind in table.kinds:
            for metric in METRICS:
                writer.writerow(
                    [
                        kind,
                        metric,
                        _fmt(table.means[(kind, metric)]),
                        _fmt(table.stds[(kind, metric)]),
                        table.n_runs[kind],
                    ]
                )


_PANEL_TITLES = {
    "total_cost": "Total cost",
    "tracking_error": "Tracking error",
    "param_error": "Parameter error",
    "violations": "Angle violations",
}

_BAR_FILLS = {
    "nominal": "#4878cf",
    "tube": "#d65f5f",
    "stochastic": "#6acc65",
    "risk_averse": "#956cb4",
}


def render_svg_summary(table: BenchmarkTable, path: str) -> None:
    """Render the campaign summary as a self-contained grouped-bar SVG.

    One panel per metric; within a panel one bar per controller kind with a
    +/- one-standard-deviation whisker.  The file is plain standalone SVG
    markup with no external references.
    """
    panel_w, panel_h = 250, 300
    margin_l, margin_b, margin_t = 52, 58, 30
    width = panel_w * len(METRICS)
    height = panel_h
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="Helvetica, Arial, sans-serif">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    for p_idx, metric in enumerate(METRICS):
        x_off = p_idx * panel_w
        plot_w = panel_w - margin_l - 16
        plot_h = panel_h - margin_t - margin_b
        vals = [table.means[(kind, metric)] for kind in table.kinds]
        errs = [table.stds[(kind, metric)] for kind in table.kinds]
        finite = [v + e for v, e in zip(vals, errs) if np.isfinite(v + e)]
        v_max = max(finite) if finite else 1.0
        if v_max <= 0:
            v_max = 1.0
        v_max *= 1.08

        def sy(value: float) -> float:
            # value -> svg y inside this panel, clipped to the axis range
            clipped = min(max(value, 0.0), v_max)
            return margin_t + plot_h * (1.0 - clipped / v_max)

        axis_x = x_off + margin_l
        parts.append(
            f'<text x="{x_off + margin_l + plot_w / 2:.1f}" y="18" text-anchor="middle" '
            f'font-size="13">{_PANEL_TITLES[metric]}</text>'
        )
        parts.append(
            f'<line x1="{axis_x}" y1="{margin_t}" x2="{axis_x}" '
            f'y2="{margin_t + plot_h}" stroke="black" stroke-width="1"/>'
        )
        parts.append(
            f'<line x1="{axis_x}" y1="{margin_t + plot_h}" x2="{axis_x + plot_w}" '
            f'y2="{margin_t + plot_h}" stroke="black" stroke-width="1"/>'
        )
        for tick in np.linspace(0.0, v_max, 5):
            ty = sy(tick)
            parts.append(
                f'<line x1="{axis_x - 4}" y1="{ty:.1f}" x2="{axis_x}" y2="{ty:.1f}" '
                f'stroke="black" stroke-width="1"/>'
            )
            parts.append(
                f'<text x="{axis_x - 7}" y="{ty + 3.5:.1f}" text-anchor="end" '
                f'font-size="9">{tick:.3g}</text>'
            )
        n_k = len(table.kinds)
        slot = plot_w / n_k
        bar_w = slot * 0.62
        for k_idx, kind in enumerate(table.kinds):
            mean = table.means[(kind, metric)]
            std = table.stds[(kind, metric)]
            if not np.isfinite(mean):
                continue
            bx = axis_x + slot * k_idx + (slot - bar_w) / 2
            by = sy(mean)
            parts.append(
                f'<rect class="bar" x="{bx:.1f}" y="{by:.1f}" width="{bar_w:.1f}" '
                f'height="{margin_t + plot_h - by:.1f}" '
                f'fill="{_BAR_FILLS.get(kind, "#999999")}"/>'
            )
            cx = bx + bar_w / 2
            if np.isfinite(std) and std > 0:
                y_hi, y_lo = sy(mean + std), sy(mean - std)
                parts.append(
                    f'<line class="whisker" x1="{cx:.1f}" y1="{y_hi:.1f}" '
                    f'x2="{cx:.1f}" y2="{y_lo:.1f}" stroke="black" stroke-width="1.2"/>'
                )
                for yy in (y_hi, y_lo):
                    parts.append(
                        f'<line x1="{cx - 4:.1f}" y1="{yy:.1f}" x2="{cx + 4:.1f}" '
                        f'y2="{yy:.1f}" stroke="black" stroke-width="1.2"/>'
                    )
            parts.append(
                f'<text x="{cx:.1f}" y="{margin_t + plot_h + 12:.1f}" font-size="9" '
                f'text-anchor="end" transform="rotate(-35 {cx:.1f} '
                f'{margin_t + plot_h + 12:.1f})">{kind}</text>'
            )
    parts.append("</svg>")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(parts) + "\n")
