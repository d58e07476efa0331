#!/usr/bin/env python3
"""Time one full estimator + prediction + advisory cycle.

The first cycle includes kernel compilation and is reported separately.
"""

from __future__ import annotations

import time

from redlight.engine import AdvisorySession, EngineConfig
from redlight.scenarios import SOLO_RED


def main() -> None:
    cfg = EngineConfig()
    session = AdvisorySession(SOLO_RED.timeline(), cfg)
    ego = (SOLO_RED.ego_start_position_m, SOLO_RED.ego_start_speed_mps)

    t0 = time.perf_counter()
    session.update(0.0, ego)
    print(f"cold cycle (includes compilation): "
          f"{1e3 * (time.perf_counter() - t0):7.1f} ms")

    times = []
    for k in range(1, 6):
        # whole advisory cadences force estimator, prediction and warning
        t0 = time.perf_counter()
        session.update(float(k), (ego[0] + 24.6 * k, ego[1]))
        times.append(time.perf_counter() - t0)
    for k, dt in enumerate(times, start=1):
        print(f"warm cycle {k}: {1e3 * dt:7.1f} ms")
    print(f"best warm cycle: {1e3 * min(times):.1f} ms")


if __name__ == "__main__":
    main()
