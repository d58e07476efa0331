"""Deterministic microscopic simulator: IDM car following, a cyclic signal
controller, configurable ego driver policies and per-run metric extraction.

The stop bar sits at position 0 with upstream positions negative.  Vehicle
positions refer to the front bumper; follower gaps subtract the leader's
length.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .advisory import SignalTimeline, baseline_warning, driver_accel
from .engine import AdvisorySession, EngineConfig
from .traffic_flow import GREEN, RED

log = logging.getLogger(__name__)

SIM_DT = 0.1
HARD_DECEL_LIMIT = -8.0      # physical bound (m/s^2)
STOPBAR_MARGIN = 2.0         # late-braking drivers aim this far short of the bar

POLICY_COMPLIANT = "compliant"
POLICY_IGNORE = "ignore-until-distance"
POLICY_UNGUIDED = "unguided"
POLICY_HUMAN = "human"

ENGINE_ADVISORY = "advisory"
ENGINE_BASELINE = "baseline"
ENGINE_NONE = "none"


@dataclass(frozen=True)
class IdmParams:
    v0: float = 24.6
    headway: float = 1.0
    a_max: float = 2.6
    b: float = 4.5
    gap_min: float = 2.5
    delta: float = 4.0


@dataclass
class VehicleState:
    id: str
    position: float
    speed: float
    accel: float = 0.0
    length: float = 5.0
    connected: bool = False
    is_ego: bool = False

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if abs(self.accel) > 8.0 + 1e-9:
            raise ValueError("acceleration outside physical sanity bound")


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: str
    ego_start_position_m: float = -500.0
    ego_start_speed_mps: float = 24.6
    # platoon entries: (position_m, speed_mps, connected)
    platoon: tuple = ()
    signal_green_s: float = 0.0
    signal_yellow_s: float = 0.0
    signal_red_s: float = 120.0
    signal_offset_s: float = 0.0
    driver_policy: str = POLICY_COMPLIANT
    ignore_distance_m: float = 60.0
    unguided_trigger_decel: float = 4.2
    rng_seed: int = 0
    t_max_s: float = 60.0

    def timeline(self) -> SignalTimeline:
        return SignalTimeline(self.signal_green_s, self.signal_yellow_s,
                              self.signal_red_s, self.signal_offset_s)

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(payload: dict) -> "ScenarioConfig":
        payload = dict(payload)
        payload["platoon"] = tuple(tuple(v) for v in payload.get("platoon", ()))
        return ScenarioConfig(**payload)


@dataclass
class RunMetrics:
    scenario_id: str
    engine: str
    seed: int
    peak_decel: float
    red_violation: bool
    min_spacing: float
    stop_position: float
    first_brake_time: float
    yellow_onset_time: float       # first advisory u >= 10
    red_class_time: float          # first advisory u > 60
    baseline_onset_time: float
    crossed_at: float
    advisory_trace: list = field(default_factory=list)
    relaxations: int = 0

    def to_json(self) -> dict:
        out = asdict(self)
        out["advisory_trace"] = [[round(t, 3), u] for t, u in self.advisory_trace]
        return out


@dataclass
class Trace:
    """Per-step arrays for every vehicle plus signal/advisory channels."""

    t: np.ndarray
    phase: list
    vehicles: dict               # id -> dict of x, v, a arrays
    u: np.ndarray                # advisory intensity (nan when absent)
    baseline_flag: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,vehicle_id,x,v,a,phase,u,baseline_flag\n")
            for i, t in enumerate(self.t):
                for vid, cols in self.vehicles.items():
                    fh.write(
                        f"{t:.1f},{vid},{cols['x'][i]:.4f},{cols['v'][i]:.4f},"
                        f"{cols['a'][i]:.4f},{self.phase[i]},"
                        f"{self.u[i]:.4f},{int(self.baseline_flag[i])}\n"
                    )


def car_following_accel(follower: VehicleState, leader: VehicleState | None,
                        p: IdmParams) -> float:
    """IDM acceleration, clamped to [-8, a_max].  A negative gap triggers the
    emergency clamp and an incident log entry."""
    v = follower.speed
    free = p.a_max * (1.0 - (v / p.v0) ** p.delta)
    if leader is None:
        return float(np.clip(free, HARD_DECEL_LIMIT, p.a_max))
    gap = leader.position - leader.length - follower.position
    if gap <= 0:
        log.error("vehicle overlap: %s behind %s (gap %.2f m)",
                  follower.id, leader.id, gap)
        return HARD_DECEL_LIMIT
    dv = v - leader.speed
    s_star = p.gap_min + max(0.0, v * p.headway
                             + v * dv / (2.0 * math.sqrt(p.a_max * p.b)))
    a = p.a_max * (1.0 - (v / p.v0) ** p.delta - (s_star / gap) ** 2)
    return float(np.clip(a, HARD_DECEL_LIMIT, p.a_max))


def _virtual_stop_leader(length: float = 5.0) -> VehicleState:
    """Stopped phantom whose rear bumper sits exactly on the stop bar."""
    return VehicleState(id="__signal__", position=length, speed=0.0,
                        length=length)


def _commits_to_stop(vehicle: VehicleState, timeline: SignalTimeline,
                     t: float) -> bool:
    """Lawful yellow rule: stop unless the vehicle clears before red at its
    current speed."""
    phase = timeline.phase_at(t)
    if vehicle.position >= 0:
        return False
    if phase == RED:
        return True
    if phase == GREEN:
        return False
    if vehicle.speed <= 0.01:
        return True
    time_to_bar = -vehicle.position / vehicle.speed
    return time_to_bar > timeline.time_to_red(t)


def _required_stop_decel(vehicle: VehicleState, margin: float) -> float:
    d = -vehicle.position - margin
    if d <= 0.0:
        return math.inf
    return vehicle.speed ** 2 / (2.0 * d)


class World:
    """Single-lane world advanced at 0.1 s steps."""

    def __init__(self, cfg: ScenarioConfig, engine: str = ENGINE_NONE,
                 idm: IdmParams | None = None,
                 engine_cfg: EngineConfig | None = None,
                 driver_policy: str | None = None):
        self.cfg = cfg
        self.engine_kind = engine
        self.idm = idm or IdmParams()
        self.engine_cfg = engine_cfg or EngineConfig()
        self.timeline = cfg.timeline()
        self.policy = driver_policy or cfg.driver_policy
        self.t = 0.0
        self.u = float("nan")
        self.baseline_flag = False
        self.session: AdvisorySession | None = None
        self.relaxation_count = 0
        self._stop_latched = False
        self.pedal = (0.0, 0.0)   # throttle, brake (human policy)

        self.vehicles = [VehicleState(
            id="ego", position=cfg.ego_start_position_m,
            speed=cfg.ego_start_speed_mps, is_ego=True, connected=True)]
        for i, (pos, spd, conn) in enumerate(cfg.platoon):
            self.vehicles.append(VehicleState(
                id=f"lead{i}", position=pos, speed=spd, connected=bool(conn)))
        self.vehicles.sort(key=lambda veh: veh.position)
        self._check_no_overlap()

    def _check_no_overlap(self):
        for follower, leader in zip(self.vehicles, self.vehicles[1:]):
            if leader.position - leader.length - follower.position <= 0:
                raise ValueError(f"{follower.id} overlaps {leader.id}")

    @property
    def ego(self) -> VehicleState:
        return next(v for v in self.vehicles if v.is_ego)

    def _leader_of(self, vehicle: VehicleState) -> VehicleState | None:
        best = None
        for other in self.vehicles:
            if other is vehicle or other.position <= vehicle.position:
                continue
            if best is None or other.position < best.position:
                best = other
        return best

    def _update_engine(self) -> None:
        ego = self.ego
        in_range = -self.engine_cfg.comm_range <= ego.position <= 0
        self.baseline_flag = baseline_warning(
            ego.position, ego.speed, self.timeline,
            comm_range=self.engine_cfg.comm_range, t=self.t)
        if self.engine_kind != ENGINE_ADVISORY:
            return
        if not in_range and self.session is None:
            return
        if self.session is None:
            n_conn = sum(1 for v in self.vehicles
                         if v.connected and not v.is_ego)
            self.session = AdvisorySession(self.timeline, self.engine_cfg,
                                           n_connected_hint=n_conn)
        lead = self._leader_of(ego)
        lead_obs = (lead.position, lead.speed) if lead is not None else None
        connected = [(v.position, v.speed) for v in self.vehicles
                     if v.connected and not v.is_ego and v is not lead]
        signal = self.session.update(self.t, (ego.position, ego.speed),
                                     lead=lead_obs, connected=connected)
        self.u = signal.u
        if self.session.latest.relaxed:
            self.relaxation_count += len(self.session.latest.relaxed)

    def _ego_accel(self) -> float:
        ego = self.ego
        leader = self._leader_of(ego)
        if self.policy == POLICY_HUMAN:
            throttle, brake = self.pedal
            if brake > 0:
                return -self.idm.b * brake
            return self.idm.a_max * throttle
        if self.engine_kind == ENGINE_ADVISORY:
            if self.policy == POLICY_COMPLIANT:
                return driver_accel(self.u) if not math.isnan(self.u) else 0.0
            if self.policy == POLICY_IGNORE:
                if -ego.position > self.cfg.ignore_distance_m:
                    return 0.0
                return driver_accel(self.u) if not math.isnan(self.u) else 0.0
        if self.engine_kind == ENGINE_BASELINE:
            if self.baseline_flag and _commits_to_stop(ego, self.timeline, self.t):
                req = _required_stop_decel(ego, STOPBAR_MARGIN)
                stop_a = float(np.clip(-req, HARD_DECEL_LIMIT, 0.0))
                # the warned stop still respects the vehicle ahead
                return min(stop_a, car_following_accel(ego, leader, self.idm))
            return self._unguided_accel(ego, leader)
        return self._unguided_accel(ego, leader)

    def _unguided_accel(self, ego: VehicleState,
                        leader: VehicleState | None) -> float:
        """Late-braking driver: follows traffic normally and only reacts to
        the signal once the required deceleration reaches the trigger."""
        a = car_following_accel(ego, leader, self.idm)
        if not _commits_to_stop(ego, self.timeline, self.t):
            self._stop_latched = False
            return a
        req = _required_stop_decel(ego, STOPBAR_MARGIN)
        if req >= self.cfg.unguided_trigger_decel:
            self._stop_latched = True
        if self._stop_latched:
            # hold position once committed; while still moving, brake to a
            # stop with a floor so the last metre cannot re-trigger a free
            # acceleration
            a = min(a, 0.0)
            if ego.speed > 0:
                decel = max(1.05 * req, 1.0)
                a = min(a, float(np.clip(-decel, HARD_DECEL_LIMIT, 0.0)))
        return a

    def step(self) -> None:
        self._update_engine()
        accels = {}
        for vehicle in self.vehicles:
            if vehicle.is_ego:
                accels[vehicle.id] = self._ego_accel()
                continue
            leader = self._leader_of(vehicle)
            a = car_following_accel(vehicle, leader, self.idm)
            if _commits_to_stop(vehicle, self.timeline, self.t):
                a = min(a, car_following_accel(
                    vehicle, _virtual_stop_leader(), self.idm))
            accels[vehicle.id] = a

        for vehicle in self.vehicles:
            a = accels[vehicle.id]
            v_new = max(0.0, vehicle.speed + a * SIM_DT)
            vehicle.accel = (v_new - vehicle.speed) / SIM_DT
            vehicle.speed = v_new
            vehicle.position += v_new * SIM_DT
        self.t += SIM_DT


def run_scenario(cfg: ScenarioConfig, engine: str = ENGINE_NONE,
                 engine_cfg: EngineConfig | None = None,
                 driver_policy: str | None = None,
                 idm: IdmParams | None = None) -> tuple[RunMetrics, Trace]:
    """Run one scenario to completion; deterministic for a fixed config."""
    if engine not in (ENGINE_ADVISORY, ENGINE_BASELINE, ENGINE_NONE):
        raise ValueError(f"unknown engine {engine!r}")
    world = World(cfg, engine=engine, engine_cfg=engine_cfg,
                  driver_policy=driver_policy, idm=idm)
    n_max = int(round(cfg.t_max_s / SIM_DT))
    ids = [v.id for v in world.vehicles]
    rec = {vid: {"x": [], "v": [], "a": []} for vid in ids}
    ts, phases, us, flags = [], [], [], []
    crossed_at = math.inf
    stopped_steps = 0

    for k in range(n_max):
        world.step()
        ts.append(world.t)
        phases.append(world.timeline.phase_at(world.t))
        us.append(world.u)
        flags.append(world.baseline_flag)
        for vehicle in world.vehicles:
            rec[vehicle.id]["x"].append(vehicle.position)
            rec[vehicle.id]["v"].append(vehicle.speed)
            rec[vehicle.id]["a"].append(vehicle.accel)
        ego = world.ego
        if math.isinf(crossed_at) and ego.position >= 0:
            crossed_at = world.t
        if not math.isinf(crossed_at) and world.t - crossed_at > 2.0:
            break
        if (-80 < ego.position < 0
                and world.timeline.phase_at(world.t) == RED):
            x_hist = rec["ego"]["x"]
            settled = (len(x_hist) > 50
                       and x_hist[-1] - x_hist[-51] < 0.5)
            if ego.speed < 0.02 or settled:
                stopped_steps += 1
                if stopped_steps > 30:
                    break
            else:
                stopped_steps = 0
        else:
            stopped_steps = 0

    trace = Trace(
        t=np.array(ts), phase=phases,
        vehicles={vid: {k2: np.array(v2) for k2, v2 in cols.items()}
                  for vid, cols in rec.items()},
        u=np.array(us), baseline_flag=np.array(flags, dtype=bool),
    )
    metrics = extract_metrics(cfg, engine, trace, world.relaxation_count)
    return metrics, trace


def extract_metrics(cfg: ScenarioConfig, engine: str, trace: Trace,
                    relaxations: int = 0) -> RunMetrics:
    ego = trace.vehicles["ego"]
    x, v, a = ego["x"], ego["v"], ego["a"]
    t = trace.t

    peak_decel = float(max(0.0, np.max(-a, initial=0.0)))
    cross_idx = np.flatnonzero(x >= 0)
    crossed_at = float(t[cross_idx[0]]) if cross_idx.size else math.inf
    red_violation = bool(cross_idx.size
                         and trace.phase[cross_idx[0]] == RED)

    min_spacing = math.inf
    for vid, cols in trace.vehicles.items():
        if vid == "ego":
            continue
        ahead = cols["x"] > x
        if np.any(ahead):
            gaps = np.where(ahead, cols["x"] - 5.0 - x, math.inf)
            min_spacing = min(min_spacing, float(np.min(gaps)))

    stop_position = math.nan
    stopped = np.flatnonzero(v < 0.1)
    if stopped.size:
        stop_position = float(x[stopped[0]])
    elif not cross_idx.size and v[-1] < 1.0:
        # run ended settled but still creeping; the final position is the
        # effective stop
        stop_position = float(x[-1])

    brake_idx = np.flatnonzero(a < -0.15)
    first_brake = float(t[brake_idx[0]]) if brake_idx.size else math.inf

    with np.errstate(invalid="ignore"):
        yellow_idx = np.flatnonzero(trace.u >= 10.0)
        red_idx = np.flatnonzero(trace.u > 60.0)
    yellow_onset = float(t[yellow_idx[0]]) if yellow_idx.size else math.inf
    red_class = float(t[red_idx[0]]) if red_idx.size else math.inf
    base_idx = np.flatnonzero(trace.baseline_flag)
    baseline_onset = float(t[base_idx[0]]) if base_idx.size else math.inf

    adv_trace = [(float(ti), float(ui)) for ti, ui in zip(t[::10], trace.u[::10])
                 if not math.isnan(ui)]
    return RunMetrics(
        scenario_id=cfg.scenario_id, engine=engine, seed=cfg.rng_seed,
        peak_decel=peak_decel, red_violation=red_violation,
        min_spacing=min_spacing, stop_position=stop_position,
        first_brake_time=first_brake, yellow_onset_time=yellow_onset,
        red_class_time=red_class, baseline_onset_time=baseline_onset,
        crossed_at=crossed_at, advisory_trace=adv_trace,
        relaxations=relaxations,
    )


def write_metrics(metrics: RunMetrics, path) -> None:
    payload = metrics.to_json()
    for key, value in payload.items():
        if isinstance(value, float) and math.isinf(value):
            payload[key] = None
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
