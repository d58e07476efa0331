#!/usr/bin/env python3
"""Run every canonical scenario across engines and print the summary table.

Example:
    python scripts/run_sweep.py --seeds 0..4 --engine advisory
"""

from __future__ import annotations

import argparse
import time

from redlight.cli import _format_table, summarize
from redlight.scenarios import CANONICAL, variant
from redlight.sim import run_scenario


def parse_seeds(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(text)]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", default="0", help="seed or range a..b")
    parser.add_argument("--engine", default="all",
                        choices=["advisory", "baseline", "none", "all"])
    parser.add_argument("--scenario", default=None,
                        choices=[*CANONICAL, None],
                        help="restrict to one scenario")
    args = parser.parse_args()

    engines = (["advisory", "baseline", "none"] if args.engine == "all"
               else [args.engine])
    scenarios = [args.scenario] if args.scenario else list(CANONICAL)

    rows = []
    t_start = time.perf_counter()
    for sid in scenarios:
        for seed in parse_seeds(args.seeds):
            cfg = variant(CANONICAL[sid], seed)
            for engine in engines:
                t0 = time.perf_counter()
                metrics, _ = run_scenario(cfg, engine=engine)
                rows.append(metrics.to_json())
                print(f"{sid:20s} {engine:10s} seed {seed:3d}  "
                      f"peak {metrics.peak_decel:5.2f}  "
                      f"viol {metrics.red_violation!s:5s}  "
                      f"relax {metrics.relaxations}  "
                      f"[{time.perf_counter() - t0:5.2f} s]")
    print()
    print(_format_table(summarize(rows)))
    print(f"\ntotal {time.perf_counter() - t_start:.1f} s "
          f"for {len(rows)} runs")


if __name__ == "__main__":
    main()
