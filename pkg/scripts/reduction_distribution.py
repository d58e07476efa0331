#!/usr/bin/env python3
"""Peak-deceleration reduction of guided vs unguided approaches.

Runs the solo red-light scenario across seeded variants twice (advisory and
unguided) and prints the per-seed reduction plus its distribution.

Example:
    python scripts/reduction_distribution.py --n-seeds 30
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from redlight.cli import reduction_pct
from redlight.scenarios import SOLO_RED, variant
from redlight.sim import ENGINE_ADVISORY, ENGINE_NONE, run_scenario


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-seeds", type=int, default=30)
    args = parser.parse_args()

    reductions = []
    t_start = time.perf_counter()
    for seed in range(args.n_seeds):
        cfg = variant(SOLO_RED, seed)
        adv, _ = run_scenario(cfg, engine=ENGINE_ADVISORY)
        ung, _ = run_scenario(cfg, engine=ENGINE_NONE)
        red = reduction_pct(adv.peak_decel, ung.peak_decel)
        reductions.append(red)
        print(f"seed {seed:3d}: advisory {adv.peak_decel:5.2f}  "
              f"unguided {ung.peak_decel:5.2f}  reduction {red:5.1f}%")

    arr = np.array(reductions)
    print(f"\nn = {len(arr)}   mean {arr.mean():.1f}%   "
          f"median {np.median(arr):.1f}%   worst {arr.min():.1f}%   "
          f"best {arr.max():.1f}%")
    print(f"total {time.perf_counter() - t_start:.1f} s")


if __name__ == "__main__":
    main()
