"""Microscopic simulator: car following, stop rules, driver policies,
closed-loop runs, metrics extraction and serialization."""

import json
import math

import numpy as np
import pytest

from redlight.advisory import SignalTimeline
from redlight.scenarios import (
    CANONICAL,
    PLATOON_RED,
    SOLO_GREEN_TO_RED,
    SOLO_RED,
    load_manifest,
    variant,
)
from redlight.sim import (
    ENGINE_ADVISORY,
    ENGINE_BASELINE,
    ENGINE_NONE,
    HARD_DECEL_LIMIT,
    POLICY_HUMAN,
    SIM_DT,
    IdmParams,
    ScenarioConfig,
    Trace,
    VehicleState,
    World,
    _commits_to_stop,
    _virtual_stop_leader,
    car_following_accel,
    extract_metrics,
    run_scenario,
    write_metrics,
)

IDM = IdmParams()


class TestCarFollowing:
    def test_free_road_at_desired_speed(self):
        v = VehicleState(id="a", position=0.0, speed=IDM.v0)
        assert car_following_accel(v, None, IDM) == pytest.approx(0.0,
                                                                  abs=1e-12)

    def test_free_road_standing_start(self):
        v = VehicleState(id="a", position=0.0, speed=0.0)
        assert car_following_accel(v, None, IDM) == pytest.approx(2.6)

    def test_follower_behind_stopped_leader_hand_formula(self):
        follower = VehicleState(id="a", position=0.0, speed=10.0)
        leader = VehicleState(id="b", position=25.0, speed=0.0)  # gap 20 m
        gap = 20.0
        dv = 10.0
        s_star = IDM.gap_min + 10.0 * IDM.headway + 10.0 * dv / (
            2.0 * math.sqrt(IDM.a_max * IDM.b))
        expected = IDM.a_max * (1.0 - (10.0 / IDM.v0) ** IDM.delta
                                - (s_star / gap) ** 2)
        out = car_following_accel(follower, leader, IDM)
        assert out == pytest.approx(max(expected, HARD_DECEL_LIMIT),
                                    abs=1e-12)

    def test_negative_gap_emergency_clamp(self):
        follower = VehicleState(id="a", position=0.0, speed=10.0)
        leader = VehicleState(id="b", position=4.0, speed=0.0)  # overlap
        assert car_following_accel(follower, leader, IDM) == HARD_DECEL_LIMIT


class TestStopRules:
    RED_TL = SignalTimeline(green=0.0, yellow=0.0, red=120.0)

    def test_red_commits(self):
        v = VehicleState(id="a", position=-50.0, speed=20.0)
        assert _commits_to_stop(v, self.RED_TL, 0.0) is True

    def test_green_does_not_commit(self):
        tl = SignalTimeline(green=30.0, yellow=4.0, red=30.0)
        v = VehicleState(id="a", position=-50.0, speed=20.0)
        assert _commits_to_stop(v, tl, 0.0) is False

    def test_yellow_commits_only_when_cannot_clear(self):
        tl = SignalTimeline(green=0.0, yellow=4.0, red=30.0)
        fast = VehicleState(id="a", position=-20.0, speed=20.0)  # 1 s away
        slow = VehicleState(id="b", position=-100.0, speed=10.0)  # 10 s away
        assert _commits_to_stop(fast, tl, 0.0) is False
        assert _commits_to_stop(slow, tl, 0.0) is True

    def test_past_bar_never_commits(self):
        v = VehicleState(id="a", position=5.0, speed=20.0)
        assert _commits_to_stop(v, self.RED_TL, 0.0) is False

    def test_virtual_leader_rear_bumper_on_bar(self):
        ghost = _virtual_stop_leader()
        assert ghost.position - ghost.length == 0.0
        assert ghost.speed == 0.0


class TestWorld:
    def test_single_vehicle_green_advances_at_speed(self):
        cfg = ScenarioConfig(scenario_id="t", ego_start_position_m=-100.0,
                             ego_start_speed_mps=24.6,
                             signal_green_s=100.0, signal_red_s=0.0)
        world = World(cfg)
        world.step()
        assert world.ego.position == pytest.approx(-100.0 + 24.6 * SIM_DT)

    def test_overlapping_initial_vehicles_rejected(self):
        cfg = ScenarioConfig(scenario_id="t", ego_start_position_m=-100.0,
                             platoon=((-98.0, 10.0, True),))
        with pytest.raises(ValueError):
            World(cfg)

    def test_non_ego_vehicle_stops_before_red_bar(self):
        cfg = ScenarioConfig(
            scenario_id="t", ego_start_position_m=-400.0,
            ego_start_speed_mps=20.0,
            platoon=((-150.0, 20.0, True),),
            signal_red_s=120.0, t_max_s=40.0)
        world = World(cfg)
        lead_positions = []
        for _ in range(400):
            world.step()
            lead = next(v for v in world.vehicles if v.id == "lead0")
            lead_positions.append(lead.position)
        assert max(lead_positions) < 0.0            # never crosses
        assert lead_positions[-1] < -IDM.gap_min * 0.8   # settles short

    def test_human_policy_pedals(self):
        cfg = ScenarioConfig(scenario_id="t", ego_start_position_m=-100.0,
                             ego_start_speed_mps=10.0)
        world = World(cfg, driver_policy=POLICY_HUMAN)
        world.pedal = (0.0, 1.0)
        world.step()
        assert world.ego.accel == pytest.approx(-IDM.b, abs=1e-9)
        world.pedal = (0.5, 0.0)
        world.step()
        assert world.ego.accel == pytest.approx(0.5 * IDM.a_max, abs=1e-9)

    def test_brake_wins_over_throttle(self):
        cfg = ScenarioConfig(scenario_id="t", ego_start_position_m=-100.0,
                             ego_start_speed_mps=10.0)
        world = World(cfg, driver_policy=POLICY_HUMAN)
        world.pedal = (1.0, 1.0)
        world.step()
        assert world.ego.accel < 0.0


class TestClosedLoop:
    def test_unguided_brakes_late_and_hard(self):
        metrics, _ = run_scenario(SOLO_RED, engine=ENGINE_NONE)
        # the late-braking driver either runs the red or slams the brakes
        # at (or beyond) its trigger deceleration
        assert (metrics.red_violation
                or metrics.peak_decel
                >= SOLO_RED.unguided_trigger_decel - 1e-6)

    def test_determinism(self):
        m1, t1 = run_scenario(SOLO_RED, engine=ENGINE_NONE)
        m2, t2 = run_scenario(SOLO_RED, engine=ENGINE_NONE)
        assert m1 == m2
        assert np.array_equal(t1.vehicles["ego"]["x"], t2.vehicles["ego"]["x"])

    def test_baseline_stops_compliant_ego(self):
        metrics, _ = run_scenario(SOLO_RED, engine=ENGINE_BASELINE)
        assert metrics.red_violation is False
        assert metrics.stop_position < 0.0

    def test_baseline_respects_vehicle_ahead(self):
        metrics, _ = run_scenario(PLATOON_RED, engine=ENGINE_BASELINE)
        assert metrics.red_violation is False
        assert metrics.min_spacing > 0.0

    def test_advisory_stops_without_violation(self):
        metrics, _ = run_scenario(SOLO_RED, engine=ENGINE_ADVISORY)
        assert metrics.red_violation is False
        unguided, _ = run_scenario(SOLO_RED, engine=ENGINE_NONE)
        assert metrics.peak_decel < unguided.peak_decel

    def test_unknown_engine_rejected(self):
        with pytest.raises(ValueError):
            run_scenario(SOLO_RED, engine="autopilot")


def make_trace(x, v, a, phases=None, u=None, flags=None) -> Trace:
    n = len(x)
    return Trace(
        t=SIM_DT * np.arange(1, n + 1),
        phase=phases or ["red"] * n,
        vehicles={"ego": {"x": np.asarray(x, dtype=float),
                          "v": np.asarray(v, dtype=float),
                          "a": np.asarray(a, dtype=float)}},
        u=np.full(n, np.nan) if u is None else np.asarray(u, dtype=float),
        baseline_flag=(np.zeros(n, dtype=bool) if flags is None
                       else np.asarray(flags, dtype=bool)),
    )


class TestMetrics:
    CFG = ScenarioConfig(scenario_id="t")

    def test_violation_detected_on_red_crossing(self):
        trace = make_trace([-2.0, -1.0, 1.0], [10.0] * 3, [0.0] * 3)
        m = extract_metrics(self.CFG, ENGINE_NONE, trace)
        assert m.red_violation is True
        assert m.crossed_at == pytest.approx(trace.t[2])

    def test_green_crossing_is_not_a_violation(self):
        trace = make_trace([-2.0, -1.0, 1.0], [10.0] * 3, [0.0] * 3,
                           phases=["green"] * 3)
        m = extract_metrics(self.CFG, ENGINE_NONE, trace)
        assert m.red_violation is False

    def test_peak_decel_ignores_acceleration(self):
        trace = make_trace([-5.0, -4.0, -3.0], [10.0] * 3,
                           [2.0, -3.0, -1.0])
        m = extract_metrics(self.CFG, ENGINE_NONE, trace)
        assert m.peak_decel == pytest.approx(3.0)

    def test_stop_position_from_first_standstill(self):
        trace = make_trace([-10.0, -8.0, -7.5], [5.0, 1.0, 0.05],
                           [0.0, -4.0, -4.0])
        m = extract_metrics(self.CFG, ENGINE_NONE, trace)
        assert m.stop_position == pytest.approx(-7.5)

    def test_stop_position_fallback_when_creeping(self):
        # never below the standstill threshold, but ends settled
        trace = make_trace([-10.0, -9.95, -9.9], [0.6, 0.5, 0.5],
                           [0.0, -1.0, 0.0])
        m = extract_metrics(self.CFG, ENGINE_NONE, trace)
        assert m.stop_position == pytest.approx(-9.9)

    def test_onset_times(self):
        trace = make_trace([-10.0, -9.0, -8.0, -7.0],
                           [10.0] * 4, [0.0, -0.2, -1.0, 0.0],
                           u=[np.nan, 5.0, 15.0, 70.0],
                           flags=[False, False, True, True])
        m = extract_metrics(self.CFG, ENGINE_NONE, trace)
        assert m.first_brake_time == pytest.approx(trace.t[1])
        assert m.yellow_onset_time == pytest.approx(trace.t[2])
        assert m.red_class_time == pytest.approx(trace.t[3])
        assert m.baseline_onset_time == pytest.approx(trace.t[2])

    def test_min_spacing_subtracts_leader_length(self):
        trace = make_trace([-20.0, -19.0], [10.0] * 2, [0.0] * 2)
        trace.vehicles["lead"] = {"x": np.array([-10.0, -9.0]),
                                  "v": np.zeros(2), "a": np.zeros(2)}
        m = extract_metrics(self.CFG, ENGINE_NONE, trace)
        assert m.min_spacing == pytest.approx(5.0)

    def test_metrics_json_replaces_infinities(self, tmp_path):
        trace = make_trace([-10.0, -9.0], [10.0] * 2, [0.0] * 2)
        m = extract_metrics(self.CFG, ENGINE_NONE, trace)
        path = tmp_path / "m.json"
        write_metrics(m, path)
        payload = json.loads(path.read_text())
        assert payload["crossed_at"] is None
        assert payload["min_spacing"] is None

    def test_trace_csv(self, tmp_path):
        trace = make_trace([-10.0, -9.0], [10.0] * 2, [0.0] * 2)
        path = tmp_path / "trace.csv"
        trace.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("t,vehicle_id,x")
        assert len(lines) == 3


class TestScenarioCatalog:
    def test_config_json_round_trip(self):
        payload = PLATOON_RED.to_json()
        back = ScenarioConfig.from_json(payload)
        assert back == PLATOON_RED

    def test_variant_seed_zero_is_identity(self):
        assert variant(SOLO_RED, 0) == SOLO_RED

    def test_variant_deterministic_and_bounded(self):
        a = variant(SOLO_GREEN_TO_RED, 7)
        b = variant(SOLO_GREEN_TO_RED, 7)
        assert a == b
        assert a != SOLO_GREEN_TO_RED
        assert 5.0 <= a.ego_start_speed_mps <= 1.1 * 24.6
        cycle = (a.signal_green_s + a.signal_yellow_s + a.signal_red_s)
        assert 0.0 <= a.signal_offset_s < cycle

    def test_manifest_with_ids_and_inline(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({
            "scenarios": ["solo-red",
                          {"scenario_id": "inline",
                           "ego_start_position_m": -250.0}],
            "seeds": [0, 2],
        }))
        configs, seeds = load_manifest(path)
        assert configs[0] == SOLO_RED
        assert configs[1].scenario_id == "inline"
        assert list(seeds) == [0, 1, 2]

    def test_manifest_unknown_id_rejected(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"scenarios": ["nope"], "seeds": [0, 0]}))
        with pytest.raises(KeyError):
            load_manifest(path)

    def test_canonical_catalog_complete(self):
        assert set(CANONICAL) == {
            "solo-red", "solo-green-to-red", "solo-ignore",
            "platoon-red", "platoon-split", "platoon-queue",
        }
