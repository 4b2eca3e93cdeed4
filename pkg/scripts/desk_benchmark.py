"""Desk-scale benchmark campaign with a per-kind median report.

The CLI `benchmark` subcommand prints means; for eyeballing orderings the
medians are the more robust view, so this script runs the same campaign and
prints both, then writes the usual CSV/SVG reports.

    python scripts/desk_benchmark.py --runs 10 --particles 500 --out out/desk
"""

import argparse
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from bramp.config import load_config, replace_config
from bramp.harness import METRICS, render_svg_summary, run_benchmark, write_csv


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None, help="TOML config file")
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--particles", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/desk")
    args = ap.parse_args()

    cfg = replace_config(
        load_config(args.config),
        runs=args.runs,
        particles=args.particles,
        seed=args.seed,
        out=args.out,
    )
    t0 = time.perf_counter()
    table, records = run_benchmark(cfg)
    wall = time.perf_counter() - t0

    print(f"{cfg.runs} runs x {len(cfg.kinds)} kinds x {cfg.steps} steps in {wall:.1f} s\n")
    print(f"{'kind':<12} {'metric':<16} {'mean':>12} {'median':>12} {'std':>12}")
    for kind in cfg.kinds:
        rows = [r for r in records if r.kind == kind and not r.aborted]
        for metric in METRICS:
            vals = np.array([r.metric(metric) for r in rows])
            print(
                f"{kind:<12} {metric:<16} {table.means[(kind, metric)]:>12.5g} "
                f"{np.median(vals):>12.5g} {table.stds[(kind, metric)]:>12.5g}"
            )

    os.makedirs(cfg.out, exist_ok=True)
    write_csv(records, os.path.join(cfg.out, "steps.csv"))
    write_csv(table, os.path.join(cfg.out, "summary.csv"))
    render_svg_summary(table, os.path.join(cfg.out, "summary.svg"))
    print(f"\nwrote steps.csv, summary.csv, summary.svg under {cfg.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
