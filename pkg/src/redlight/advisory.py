"""Advisory decision layer: signal timeline, configuration, driver model,
reference speed, horizon scheduling, constraint-mode selection, warning
classification and the single-stage baseline comparator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .prediction import PredictedTrajectory
from .traffic_flow import GREEN, RED, YELLOW, FlowParams

U_MIN = -20.0
U_MAX = 100.0
DRIVER_GAIN = 20.0  # warning units per m/s^2 of commanded deceleration

COLOR_GREEN = "green"
COLOR_YELLOW = "yellow"
COLOR_RED = "red"


@dataclass(frozen=True)
class SignalTimeline:
    """Deterministic cyclic signal schedule (green -> yellow -> red).

    ``offset`` is the time already elapsed in the cycle at t = 0.  Phase
    durations may be zero (an all-red approach is green=yellow=0).
    """

    green: float
    yellow: float
    red: float
    offset: float = 0.0
    stop_bar_position: float = 0.0

    def __post_init__(self):
        if min(self.green, self.yellow, self.red) < 0:
            raise ValueError("phase durations must be non-negative")
        if self.cycle <= 0:
            raise ValueError("cycle length must be positive")

    @property
    def cycle(self) -> float:
        return self.green + self.yellow + self.red

    def phase_at(self, t: float) -> str:
        s = (t + self.offset) % self.cycle
        if s < self.green:
            return GREEN
        if s < self.green + self.yellow:
            return YELLOW
        return RED

    def next_red_onset(self, t: float) -> float:
        """Earliest time >= t at which the phase is red (t itself if red)."""
        if self.red == 0:
            return math.inf
        if self.phase_at(t) == RED:
            return t
        s = (t + self.offset) % self.cycle
        return t + (self.green + self.yellow - s)

    def time_to_red(self, t: float) -> float:
        """Remaining green + yellow time before the next red onset (0 if the
        phase is already red)."""
        return self.next_red_onset(t) - t


@dataclass(frozen=True)
class MpcConfig:
    horizon: float = 10.0        # s (rescheduled near the stop bar)
    mpc_dt: float = 0.2          # s
    w_accel: float = 1.0         # w1
    w_jerk: float = 2.0          # w2
    w_speed: float = 0.5         # w3
    w_slack_speed: float = 1e4   # w_v
    w_slack_pos: float = 1e4     # w_x
    v_min: float = 0.0
    v_max: float = 1.1 * 24.6
    a_min: float = -4.5
    a_max: float = 2.6
    tau_tl: float = 1.0          # desired time headway for a red light (s)
    d_tl: float = 20.0           # terminal buffer (m, rescheduled)
    h_min: float = 1.5           # min time headway (s)
    d_min: float = 2.5           # min spacing (m)
    d_max: float = 5 * 24.6      # max spacing (m)
    beta: float = 1.0            # prediction confidence multiplier
    u_min: float = U_MIN
    u_max: float = U_MAX
    k_ref: float = 0.018         # sigmoid reference slope (1/m)
    x_off: float = 170.0         # sigmoid reference offset (m)
    ref_stop_offset: float = 20.0  # reference comes to rest this far before the bar

    def __post_init__(self):
        if not (self.u_min < 0 < self.u_max):
            raise ValueError("u bounds must straddle zero")
        if not (self.a_min < 0 < self.a_max):
            raise ValueError("accel bounds must straddle zero")
        if self.h_min <= 0 or self.d_min <= 0 or self.d_max <= self.d_min:
            raise ValueError("spacing parameters inconsistent")


@dataclass(frozen=True)
class WarningSignal:
    """Advisory intensity with its display classification."""

    u: float
    color: str
    diameter_fraction: float
    stale: bool = False

    def __post_init__(self):
        if not (U_MIN - 1e-9 <= self.u <= U_MAX + 1e-9):
            raise ValueError("warning intensity out of range")


VARIANTS = (
    "no-lead/no-red",
    "no-lead/red",
    "no-lead/red-terminal",
    "lead-both-stop",
    "lead-passes",
)


@dataclass(frozen=True)
class ConstraintMode:
    """Which constraint rows enter the transcription.

    ``red_rows`` and ``terminal`` are derived from the variant for the
    no-lead cases; the lead-passes variant may additionally pick up the
    terminal rows when the ego is predicted to reach the bar under red.
    """

    variant: str
    red_rows: bool = True
    terminal: bool = False
    has_lead: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant.startswith("lead") and not self.has_lead:
            raise ValueError("lead variant requires a lead trajectory")

    @property
    def min_spacing(self) -> bool:
        return self.variant in ("lead-both-stop", "lead-passes")

    @property
    def max_spacing(self) -> bool:
        return self.variant == "lead-both-stop"


def driver_accel(u: float) -> float:
    """Linear driver response: commanded acceleration -u/20 (m/s^2)."""
    if not (U_MIN - 1e-9 <= u <= U_MAX + 1e-9):
        raise ValueError("warning intensity out of range")
    return -u / DRIVER_GAIN


def classify(u: float) -> WarningSignal:
    """Map intensity to display color and circle size.

    Boundaries 10 and 60 classify as yellow; the diameter grows linearly
    with the positive part of u.
    """
    if u < 10.0:
        color = COLOR_GREEN
    elif u <= 60.0:
        color = COLOR_YELLOW
    else:
        color = COLOR_RED
    return WarningSignal(u=u, color=color,
                         diameter_fraction=float(np.clip(u, 0.0, 100.0)) / 100.0)


def reference_speed(x: float, red_ahead: bool, signal: SignalTimeline,
                    p: FlowParams, k_ref: float = 0.08, x_off: float = 40.0) -> float:
    """Desired approach speed: free flow under green, a sigmoid drop to near
    zero at the stop bar when a red must be respected."""
    x_tl = signal.stop_bar_position
    if not red_ahead or x >= x_tl:
        return p.v0
    return p.v0 / (1.0 + math.exp(-k_ref * (x_tl - x - x_off)))


def horizon_schedule(distance_to_stopbar: float) -> tuple[float, float]:
    """(prediction horizon s, terminal buffer m) as the stop bar nears;
    thresholds are inclusive on the smaller bucket."""
    if distance_to_stopbar < 0:
        raise ValueError("distance must be non-negative")
    if distance_to_stopbar <= 20.0:
        return 6.0, 5.0
    if distance_to_stopbar <= 40.0:
        return 8.0, 10.0
    if distance_to_stopbar <= 60.0:
        return 10.0, 15.0
    return 10.0, 20.0


def _crossing_time(traj: PredictedTrajectory, x_tl: float) -> float:
    """First predicted time at or beyond the stop bar (inf if never)."""
    beyond = np.flatnonzero(traj.x_hat >= x_tl - 1e-9)
    if beyond.size == 0:
        return math.inf
    return float(traj.t[beyond[0]])


def select_mode(ego_pred: PredictedTrajectory,
                lead_pred: PredictedTrajectory | None,
                signal: SignalTimeline, cfg: MpcConfig,
                t0: float | None = None) -> ConstraintMode:
    """Pick the constraint catalog from the predicted trajectories.

    Red rows are dropped when the ego is predicted to clear the stop bar
    before the next red onset; the terminal rows are added when the ego is
    predicted within d_tl of the bar at the end of the horizon under red.
    """
    if t0 is None:
        t0 = float(ego_pred.t[0])
    t_f = float(ego_pred.t[-1])
    x_tl = signal.stop_bar_position
    red_onset = signal.next_red_onset(t0)
    ego_cross = _crossing_time(ego_pred, x_tl)
    ego_clears = ego_cross < red_onset
    # the terminal rows put a floor on the end-of-horizon position; only add
    # them when that floor is reachable without speeding up, otherwise they
    # command a rush toward the stop bar
    reachable = (x_tl - cfg.d_tl - ego_pred.x_hat[0]
                 <= ego_pred.v_hat[0] * (t_f - t0))
    terminal = (
        signal.phase_at(t_f) == RED
        and ego_pred.x_hat[-1] >= x_tl - cfg.d_tl
        and reachable
        and not ego_clears
    )

    if lead_pred is None:
        if ego_clears or red_onset > t_f:
            return ConstraintMode("no-lead/no-red", red_rows=False)
        if terminal:
            return ConstraintMode("no-lead/red-terminal", terminal=True)
        return ConstraintMode("no-lead/red")

    lead_cross = _crossing_time(lead_pred, x_tl)
    lead_clears = lead_cross < red_onset
    if lead_clears or ego_clears:
        return ConstraintMode(
            "lead-passes", has_lead=True,
            red_rows=not ego_clears and red_onset <= t_f,
            terminal=terminal,
        )
    return ConstraintMode("lead-both-stop", has_lead=True)


def baseline_warning(position: float, speed: float, signal: SignalTimeline,
                     comm_range: float = 500.0, t: float = 0.0) -> bool:
    """Single-stage comparator: warn when the constant-speed travel time to
    the intersection exceeds the remaining green + yellow time.

    A stopped vehicle has infinite travel time, so it is warned whenever the
    schedule actually reaches red.  Vehicles outside the communication range
    or past the stop bar are never warned.
    """
    d_int = signal.stop_bar_position - position
    if d_int <= 0 or d_int > comm_range:
        return False
    if signal.red == 0:
        return False
    t_rem = signal.time_to_red(t)
    if speed <= 0:
        return math.isfinite(t_rem)
    return d_int / speed > t_rem
