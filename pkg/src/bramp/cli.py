"""Command-line entry points.

Subcommands:
    simulate     one closed-loop episode, per-step CSV
    benchmark    paired campaign, summary CSV + SVG (+ per-step CSV)
    consistency  blind-region report for the finite-candidate scenario
    validate-dp  nested-vs-joint and descent checks on built-in instances

Exit codes: 0 on success, 1 on argument/config validation errors, 2 on
runtime failures.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import diagnostics
from .ambiguity import update_ambiguity
from .bayes_filter import (
    ParticleSet,
    effective_sample_size,
    resample_inverse_transform,
    reweight,
)
from .config import load_config, replace_config
from .dynamics import step_stochastic
from .harness import METRICS, run_benchmark, run_episode, write_csv, render_svg_summary
from .mpc import KINDS
from .risk import (
    delta_relaxed,
    dp_solve_discrete,
    monotone_instance,
    positive_delta_instance,
    random_mdp,
    strict_gap_instance,
)


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with code 1 on usage errors, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _add_common(sub: argparse.ArgumentParser, *, runs: bool = False, kind: bool = False) -> None:
    sub.add_argument("--config", metavar="PATH", default=None, help="TOML config file")
    sub.add_argument("--seed", type=int, default=None, help="base random seed")
    sub.add_argument("--out", metavar="DIR", default=None, help="output directory")
    sub.add_argument("--steps", type=int, default=None, help="steps per episode")
    sub.add_argument("--particles", type=int, default=None, help="filter particle count")
    sub.add_argument("--horizon", type=int, default=None, help="planning horizon")
    sub.add_argument("--level", type=float, default=None, help="credible level")
    if runs:
        sub.add_argument("--runs", type=int, default=None, help="paired runs per kind")
    if kind:
        sub.add_argument("--kind", choices=KINDS, default=None, help="controller kind")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bramp", description="Bayesian risk-averse MPC benchmark tools")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_sim = sub.add_parser("simulate", help="run one episode")
    _add_common(p_sim, kind=True)

    p_bench = sub.add_parser("benchmark", help="run a paired campaign")
    _add_common(p_bench, runs=True, kind=True)

    p_cons = sub.add_parser(
        "consistency", help="blind-region and posterior-consistency report"
    )
    p_cons.add_argument("--seed", type=int, default=0, help="base random seed")
    p_cons.add_argument("--steps", type=int, default=500, help="filter steps per schedule")
    p_cons.add_argument("--particles", type=int, default=900, help="particles (multiple of 3)")

    p_dp = sub.add_parser(
        "validate-dp", help="check nested/joint DP relations"
    )
    p_dp.add_argument("--seed", type=int, default=0, help="seed for random instances")
    p_dp.add_argument("--instances", type=int, default=50, help="number of random instances")

    return parser


def _load_with_overrides(args) -> tuple:
    cfg = load_config(args.config)
    changes = {}
    for attr, field in (
        ("seed", "seed"),
        ("steps", "steps"),
        ("particles", "particles"),
        ("horizon", "horizon"),
        ("level", "level"),
        ("out", "out"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            changes[field] = value
    if getattr(args, "runs", None) is not None:
        changes["runs"] = args.runs
    kind = getattr(args, "kind", None)
    if kind is not None and args.command == "benchmark":
        changes["kinds"] = (kind,)
    if changes:
        cfg = replace_config(cfg, **changes)
    return cfg, kind


def _cmd_simulate(args) -> int:
    cfg, kind = _load_with_overrides(args)
    kind = kind or "risk_averse"
    record = run_episode(cfg, kind, run_index=0)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "steps.csv")
    write_csv([record], path)
    status = "aborted" if record.aborted else "completed"
    print(
        f"{kind} episode {status}: {record.n_steps} steps, "
        f"total cost {record.total_cost():.6g}, "
        f"tracking error {record.tracking_error():.6g}, "
        f"parameter error {record.param_error():.6g}, "
        f"{record.violation_count()} angle violations"
    )
    print(f"wrote {path}")
    if record.aborted:
        raise RuntimeError("episode aborted on state blow-up")
    return 0


def _cmd_benchmark(args) -> int:
    cfg, _ = _load_with_overrides(args)
    table, records = run_benchmark(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    steps_path = os.path.join(cfg.out, "steps.csv")
    summary_path = os.path.join(cfg.out, "summary.csv")
    svg_path = os.path.join(cfg.out, "summary.svg")
    write_csv(records, steps_path)
    write_csv(table, summary_path)
    render_svg_summary(table, svg_path)

    print(f"{'kind':<12} {'metric':<16} {'mean':>14} {'std':>14} {'n':>4}")
    for kind in table.kinds:
        for metric in METRICS:
            print(
                f"{kind:<12} {metric:<16} {table.means[(kind, metric)]:>14.6g} "
                f"{table.stds[(kind, metric)]:>14.6g} {table.n_runs[kind]:>4d}"
            )
    n_aborted = sum(table.aborted.values())
    if n_aborted:
        print(f"warning: {n_aborted} episode(s) aborted on state blow-up")
    print(f"wrote {steps_path}, {summary_path}, {svg_path}")
    return 0


def _zone_text(region) -> str:
    if region.is_empty:
        return "none (candidates identified)"
    return ", ".join("{" + ", ".join(str(i) for i in z) + "}" for z in region.zones)


def _cmd_consistency(args) -> int:
    if args.particles < 3 or args.steps < 1:
        raise ValueError("consistency needs at least 3 particles and 1 step")
    scen = diagnostics.three_theta_scenario()
    model = scen.model
    lm_blind = _scenario_matrix(scen, scen.u_blind)
    lm_info = _scenario_matrix(scen, scen.u_informative)
    r_blind = diagnostics.blind_regions(lm_blind)
    r_info = diagnostics.blind_regions(lm_info)
    joint = np.vstack([lm_blind.matrix, lm_info.matrix])
    combined = diagnostics.combine_regions(r_blind, r_info, joint)

    print(f"candidates: {[float(t[0]) for t in scen.thetas]} (true index {scen.theta_star_index})")
    print(f"blind zones at u={scen.u_blind}: {_zone_text(r_blind)}")
    print(f"blind zones at u={scen.u_informative}: {_zone_text(r_info)}")
    print(f"combined blind zones: {_zone_text(combined)}")

    for label, schedule in (
        ("alternating inputs", "alternate"),
        (f"stuck at u={scen.u_blind}", "stuck"),
    ):
        masses = _posterior_masses(scen, schedule, args.steps, args.particles, args.seed)
        mass_txt = ", ".join(
            f"theta={float(scen.thetas[i][0]):g}: {masses[i]:.3f}" for i in range(3)
        )
        print(f"posterior after {args.steps} steps ({label}): {mass_txt}")
    return 0


def _scenario_matrix(scen, u):
    grid, vol = diagnostics.slice_grid(scen.model, scen.x0, u, scen.thetas[1], dim=0)
    return diagnostics.likelihood_matrix(scen.model, scen.thetas, scen.x0, u, grid, vol)


def _posterior_masses(scen, schedule: str, steps: int, particles: int, seed: int) -> np.ndarray:
    """Run the finite-candidate filter under an input schedule; report masses."""
    model = scen.model
    reps = particles // 3
    thetas = np.repeat(scen.thetas, reps, axis=0)
    ps = ParticleSet(thetas, np.full(reps * 3, 1.0 / (reps * 3)), model.param_box)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0 if schedule == "stuck" else 1]))
    theta_star = scen.thetas[scen.theta_star_index]
    x = scen.x0.copy()
    for k in range(steps):
        if schedule == "stuck":
            u = scen.u_blind
        else:
            u = scen.u_informative if k % 2 else scen.u_blind
        x_next = step_stochastic(model, x, u, theta_star, rng=rng)
        ps, _ = reweight(ps, x_next, x, u, model)
        # resample only on low ESS: blanket resampling would random-walk the
        # mass split of the blind pair until one candidate absorbs the other
        if effective_sample_size(ps) < 0.5 * ps.n_particles:
            ps = resample_inverse_transform(ps, rng)
        x = x_next
    masses = np.array(
        [float(np.sum(ps.weights[np.isclose(ps.thetas[:, 0], t[0])])) for t in scen.thetas]
    )
    return masses


def _cmd_validate_dp(args) -> int:
    failures = []

    gap_mdp = strict_gap_instance()
    nested = dp_solve_discrete(gap_mdp, mode="nested")
    joint = dp_solve_discrete(gap_mdp, mode="joint")
    v_n = nested.values[-1][0]
    v_j = joint.values[-1][0]
    print(f"strict-gap instance: nested {v_n:.6g}, joint {v_j:.6g}, gap {v_n - v_j:.6g}")
    if v_n < v_j - 1e-9:
        failures.append("nested value below joint on strict-gap instance")
    if v_n - v_j <= 1e-3:
        failures.append("strict-gap instance gap not strict")

    mono = monotone_instance()
    delta = delta_relaxed(mono)
    values = dp_solve_discrete(mono, mode="nested").values
    worst_rise = max(
        float(np.max(values[i + 1] - values[i])) for i in range(len(values) - 1)
    )
    print(f"monotone instance: delta {delta:.6g}, worst value rise {worst_rise:.6g}")
    if delta > 0 or worst_rise > 1e-9:
        failures.append("monotone instance violated descent")

    relaxed = positive_delta_instance()
    delta_r = delta_relaxed(relaxed)
    values_r = dp_solve_discrete(relaxed, mode="nested").values
    worst_excess = max(
        float(np.max(values_r[i + 1] - values_r[i] - delta_r)) for i in range(len(values_r) - 1)
    )
    print(f"relaxed instance: delta {delta_r:.6g}, worst excess over bound {worst_excess:.6g}")
    if worst_excess > 1e-9:
        failures.append("relaxed bound violated")

    rng = np.random.default_rng(args.seed)
    worst_violation = -np.inf
    for _ in range(args.instances):
        mdp = random_mdp(rng)
        v_nested = dp_solve_discrete(mdp, mode="nested").values
        v_joint = dp_solve_discrete(mdp, mode="joint").values
        for a, b in zip(v_nested, v_joint):
            worst_violation = max(worst_violation, float(np.max(b - a)))
    print(
        f"{args.instances} random instances: max (joint - nested) = {worst_violation:.3g} "
        f"(<= tolerance 1e-9: {'yes' if worst_violation <= 1e-9 else 'NO'})"
    )
    if worst_violation > 1e-9:
        failures.append("nested dominance violated on random instance")

    if failures:
        raise RuntimeError("; ".join(failures))
    print("all DP checks passed")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "benchmark": _cmd_benchmark,
    "consistency": _cmd_consistency,
    "validate-dp": _cmd_validate_dp,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValueError as exc:
        print(f"bramp: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"bramp: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
