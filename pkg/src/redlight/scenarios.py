"""Canonical approach scenarios and seeded variants.

Each scenario is a :class:`~redlight.sim.ScenarioConfig`; manifests are JSON
files listing scenario ids (or inline configs) plus a seed range, consumed by
the batch runner.
"""

from __future__ import annotations

import json
from dataclasses import replace

import numpy as np

from .sim import (
    POLICY_COMPLIANT,
    POLICY_IGNORE,
    POLICY_UNGUIDED,
    ScenarioConfig,
)

V_FREE = 24.6
V_MAX = 1.1 * V_FREE

# Single vehicle approaching a light that stays red for the whole run.
SOLO_RED = ScenarioConfig(
    scenario_id="solo-red",
    ego_start_position_m=-400.0,
    ego_start_speed_mps=V_FREE,
    signal_green_s=0.0, signal_yellow_s=0.0, signal_red_s=120.0,
    driver_policy=POLICY_COMPLIANT,
)

# Green at first sight; turns yellow at 12 s and red at 16 s, before the
# vehicle can reach the bar (constant-speed arrival ~20.3 s).
SOLO_GREEN_TO_RED = ScenarioConfig(
    scenario_id="solo-green-to-red",
    ego_start_position_m=-500.0,
    ego_start_speed_mps=V_FREE,
    signal_green_s=12.0, signal_yellow_s=4.0, signal_red_s=44.0,
    driver_policy=POLICY_COMPLIANT,
)

# Driver ignores the advisory until 60 m from the bar, then complies.  The
# starting speed keeps a full-intensity warning from 60 m physically able to
# stop the vehicle (u = 100 commands -5 m/s^2).
SOLO_IGNORE = ScenarioConfig(
    scenario_id="solo-ignore",
    ego_start_position_m=-400.0,
    ego_start_speed_mps=22.0,
    signal_green_s=0.0, signal_yellow_s=0.0, signal_red_s=120.0,
    driver_policy=POLICY_IGNORE,
    ignore_distance_m=60.0,
)

# Connected platoon ahead of the ego, all facing a standing red.
PLATOON_RED = ScenarioConfig(
    scenario_id="platoon-red",
    ego_start_position_m=-400.0,
    ego_start_speed_mps=V_FREE,
    platoon=(
        (-340.0, V_FREE, True),
        (-310.0, V_FREE, True),
        (-280.0, V_FREE, True),
    ),
    signal_green_s=0.0, signal_yellow_s=0.0, signal_red_s=120.0,
    driver_policy=POLICY_COMPLIANT,
)

# The lead clears before red onset (12 s) but the ego cannot.
PLATOON_SPLIT = ScenarioConfig(
    scenario_id="platoon-split",
    ego_start_position_m=-350.0,
    ego_start_speed_mps=V_FREE,
    platoon=((-150.0, V_FREE, True),),
    signal_green_s=8.0, signal_yellow_s=4.0, signal_red_s=48.0,
    driver_policy=POLICY_COMPLIANT,
)

# Standing queue at the bar with the light turning green at t = 8 s.
PLATOON_QUEUE = ScenarioConfig(
    scenario_id="platoon-queue",
    ego_start_position_m=-400.0,
    ego_start_speed_mps=V_FREE,
    platoon=(
        (-20.0, 0.0, True),
        (-10.0, 0.0, True),
    ),
    signal_green_s=60.0, signal_yellow_s=4.0, signal_red_s=30.0,
    signal_offset_s=86.0,
    driver_policy=POLICY_COMPLIANT,
    t_max_s=80.0,
)

CANONICAL = {cfg.scenario_id: cfg for cfg in (
    SOLO_RED, SOLO_GREEN_TO_RED, SOLO_IGNORE,
    PLATOON_RED, PLATOON_SPLIT, PLATOON_QUEUE,
)}

# Unguided counterparts share geometry and timing with the compliant runs.
POLICY_OVERRIDES = {
    POLICY_COMPLIANT, POLICY_IGNORE, POLICY_UNGUIDED,
}


def variant(base: ScenarioConfig, seed: int) -> ScenarioConfig:
    """Seeded perturbation: initial speed scaled by +-20% (clamped to the
    physical speed band) and the signal offset shifted by up to +-3 s."""
    if seed == 0:
        return replace(base, rng_seed=0)
    rng = np.random.default_rng(seed)
    speed = base.ego_start_speed_mps * rng.uniform(0.8, 1.2)
    speed = float(np.clip(speed, 5.0, V_MAX))
    shift = float(rng.uniform(-3.0, 3.0))
    cycle = base.signal_green_s + base.signal_yellow_s + base.signal_red_s
    offset = (base.signal_offset_s + shift) % cycle
    return replace(base, ego_start_speed_mps=speed, signal_offset_s=offset,
                   rng_seed=seed)


def load_manifest(path) -> tuple[list[ScenarioConfig], range]:
    """Read a manifest file: {"scenarios": [...], "seeds": [lo, hi]}.

    Scenario entries are either canonical ids or inline config objects.
    """
    with open(path) as fh:
        payload = json.load(fh)
    configs = []
    for entry in payload.get("scenarios", []):
        if isinstance(entry, str):
            if entry not in CANONICAL:
                raise KeyError(f"unknown scenario id {entry!r}")
            configs.append(CANONICAL[entry])
        else:
            configs.append(ScenarioConfig.from_json(entry))
    lo, hi = payload.get("seeds", [0, 0])
    if hi < lo:
        raise ValueError("seed range is empty")
    return configs, range(int(lo), int(hi) + 1)
