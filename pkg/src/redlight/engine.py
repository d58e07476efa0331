"""Closed-loop advisory engine: estimator and prediction refresh on a 0.2 s
cadence, warning optimization on a 1 s cadence, with warm starting between
updates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimation, prediction
from .advisory import (
    ConstraintMode,
    MpcConfig,
    SignalTimeline,
    WarningSignal,
    classify,
    driver_accel,
    horizon_schedule,
    select_mode,
)
from .estimation import EstimatorState, UkfConfig
from .prediction import PREDICTION_MAX_AGE, PredictedTrajectory
from .qp import STATUS_SOLVED, solve_qp
from .traffic_flow import FlowParams
from .transcription import InitialCondition, rollout_plan, transcribe

log = logging.getLogger(__name__)

PREDICTION_CADENCE = 0.2
ADVISORY_CADENCE = 1.0

# relaxation order for conflicting hard rows; the min-spacing safety rows
# are never relaxed
RELAXATION_ORDER = ("max_spacing", "red_headway")


@dataclass(frozen=True)
class EngineConfig:
    flow: FlowParams = field(default_factory=FlowParams)
    ukf: UkfConfig = field(default_factory=UkfConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    comm_range: float = 500.0
    sigma_growth: float = 0.3     # m/s growth of predicted position spread
    grid_origin: float = -500.0
    grid_cells: int = 26          # covers [-500 m, +20 m] at dx = 20 m
    qp_tol: float = 1e-6
    qp_max_iter: int = 20000


@dataclass
class WarningResult:
    signal: WarningSignal
    plan_t: np.ndarray
    plan_x: np.ndarray
    plan_v: np.ndarray
    plan_a: np.ndarray
    mode: ConstraintMode
    status: str
    relaxed: tuple[str, ...] = ()
    dual: np.ndarray | None = None
    n_rows: int = 0


def compute_warning(init: InitialCondition,
                    ego_pred: PredictedTrajectory,
                    lead_pred: PredictedTrajectory | None,
                    signal: SignalTimeline,
                    cfg: EngineConfig,
                    t0: float = 0.0,
                    ref_positions: np.ndarray | None = None,
                    warm_start: np.ndarray | None = None,
                    warm_start_dual: np.ndarray | None = None) -> WarningResult:
    """One advisory update: schedule the horizon, pick the constraint mode,
    transcribe and solve.  Conflicting hard rows are relaxed in the
    documented order (max spacing, then red headway, never min spacing)."""
    distance = max(0.0, signal.stop_bar_position - init.position)
    horizon, d_tl = horizon_schedule(distance)
    mpc = replace(cfg.mpc, horizon=horizon, d_tl=d_tl)

    mode = select_mode(ego_pred, lead_pred, signal, mpc, t0=t0)
    lead = lead_pred if mode.has_lead else None

    relaxed: list[str] = []
    problem = transcribe(mpc, init, lead, signal, mode, cfg.flow,
                         t0=t0, ref_positions=ref_positions)
    n = int(round(mpc.horizon / mpc.mpc_dt))
    ws = None
    if warm_start is not None:
        ws = np.zeros(problem.n_vars)
        m = min(len(warm_start), n)
        ws[:m] = warm_start[:m]
    sol = solve_qp(problem, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter,
                   warm_start=ws, warm_start_dual=warm_start_dual)

    if sol.status != STATUS_SOLVED and mode.red_rows and not mode.terminal:
        # stopping short of the bar may be out of reach; retry with the
        # slack-penalized terminal rows so the optimizer can trade position
        # overshoot against braking effort instead of giving up
        variant = ("no-lead/red-terminal" if mode.variant.startswith("no-lead")
                   else mode.variant)
        mode = ConstraintMode(variant, red_rows=True, terminal=True,
                              has_lead=mode.has_lead)
        lead = lead_pred if mode.has_lead else None
        problem = transcribe(mpc, init, lead, signal, mode, cfg.flow,
                             t0=t0, ref_positions=ref_positions)
        ws_t = np.zeros(problem.n_vars)
        ws_t[:n] = sol.primal[:n]
        sol = solve_qp(problem, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter,
                       warm_start=ws_t)

    for group in RELAXATION_ORDER:
        if sol.status == STATUS_SOLVED:
            break
        idx = problem.row_groups.get(group)
        if not idx:
            continue
        problem.lower_bounds[idx] = -np.inf
        problem.upper_bounds[idx] = np.inf
        relaxed.append(group)
        log.warning("relaxing %s rows after status %s", group, sol.status)
        sol = solve_qp(problem, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter,
                       warm_start=sol.primal)

    u_seq = sol.primal[:n]
    u0 = float(np.clip(u_seq[0], mpc.u_min, mpc.u_max))
    t, x, v, a = rollout_plan(mpc, init, u_seq, t0=t0)
    return WarningResult(
        signal=classify(u0),
        plan_t=t, plan_x=x, plan_v=v, plan_a=a,
        mode=mode, status=sol.status, relaxed=tuple(relaxed),
        dual=sol.dual, n_rows=problem.n_rows,
    )


class AdvisorySession:
    """Per-ego advisory session driven by 0.1 s world snapshots.

    ``update(t, ego, lead, connected)`` ingests measurements and refreshes
    the estimator/predictions and warning on their respective cadences;
    vehicle arguments are (position m, speed m/s) pairs.
    """

    def __init__(self, signal: SignalTimeline, cfg: EngineConfig | None = None,
                 n_connected_hint: int = 0):
        self.cfg = cfg or EngineConfig()
        self.signal = signal
        self.est: EstimatorState = estimation.initial_state(
            self.cfg.grid_cells, self.cfg.grid_origin, self.cfg.flow.dx,
            self._signal_cell(), self.cfg.flow, n_connected=n_connected_hint,
        )
        self._est_time: float | None = None
        self._pred_time: float | None = None
        self._warn_time: float | None = None
        self._pending_obs: list[tuple[float, float]] = []
        self.ego_pred: PredictedTrajectory | None = None
        self.lead_pred: PredictedTrajectory | None = None
        self.latest: WarningResult | None = None
        self._warm_u: np.ndarray | None = None
        self._applied_accel = 0.0

    def _signal_cell(self) -> int:
        cell = int((self.signal.stop_bar_position - self.cfg.grid_origin)
                   // self.cfg.flow.dx)
        return min(max(cell, 0), self.cfg.grid_cells - 1)

    def _in_grid(self, position: float) -> bool:
        lo = self.cfg.grid_origin
        hi = lo + self.cfg.grid_cells * self.cfg.flow.dx
        return lo <= position <= hi

    def update(self, t: float, ego: tuple[float, float],
               lead: tuple[float, float] | None = None,
               connected: list[tuple[float, float]] | None = None) -> WarningSignal:
        obs = [ego]
        if lead is not None:
            obs.append(lead)
        if connected:
            obs.extend(connected)
        self._pending_obs = [o for o in obs if self._in_grid(o[0])]

        if self._pred_time is None or t - self._pred_time >= PREDICTION_CADENCE - 1e-9:
            self._refresh_estimate(t)
            self._refresh_predictions(t, ego, lead)
            self._pred_time = t

        if self._warn_time is None or t - self._warn_time >= ADVISORY_CADENCE - 1e-9:
            self._refresh_warning(t, ego)
            self._warn_time = t
        return self.latest.signal

    def _refresh_estimate(self, t: float) -> None:
        flow = self.cfg.flow
        if self._est_time is None:
            self._est_time = t
        n_steps = int(round((t - self._est_time) / flow.dt))
        for k in range(n_steps):
            phase = self.signal.phase_at(self._est_time + k * flow.dt)
            self.est = estimation.ukf_predict(self.est, phase, flow, self.cfg.ukf)
        self._est_time = t
        if self._pending_obs:
            self.est = estimation.ukf_update(self.est, self._pending_obs,
                                             self.cfg.ukf)

    def _refresh_predictions(self, t: float, ego, lead) -> None:
        horizon, _ = horizon_schedule(
            max(0.0, self.signal.stop_bar_position - ego[0]))
        starts = [self._clamp_to_grid(ego[0])]
        has_lead = lead is not None and self._in_grid(lead[0])
        if has_lead:
            starts.append(lead[0])
        trajs = prediction.predict_positions(
            self.est, self.signal, self.cfg.flow, horizon, t, starts)
        self.ego_pred = prediction.trajectory_uncertainty(
            self.est, trajs[0], self.cfg.sigma_growth)
        if has_lead:
            self.lead_pred = prediction.trajectory_uncertainty(
                self.est, trajs[1], self.cfg.sigma_growth)
        else:
            self.lead_pred = None

    def _clamp_to_grid(self, position: float) -> float:
        lo = self.cfg.grid_origin
        hi = lo + self.cfg.grid_cells * self.cfg.flow.dx
        return min(max(position, lo), hi)

    def _refresh_warning(self, t: float, ego) -> None:
        age = t - self._pred_time
        if age > PREDICTION_MAX_AGE + 1e-9:
            raise RuntimeError(f"prediction stale by {age:.3f} s at warning time")
        init = InitialCondition(position=ego[0], speed=ego[1],
                                accel=self._applied_accel)
        ref_positions = None
        if self.latest is not None and self.latest.status == STATUS_SOLVED:
            # sample the reference at the previous plan's positions
            n = int(round(self.cfg.mpc.horizon / self.cfg.mpc.mpc_dt))
            tk = t + self.cfg.mpc.mpc_dt * np.arange(1, n + 1)
            ref_positions = np.interp(
                tk, self.latest.plan_t, self.latest.plan_x,
                right=self.latest.plan_x[-1])
            ref_positions = np.maximum.accumulate(ref_positions)
        warm_dual = None
        if (self.latest is not None and self.latest.status == STATUS_SOLVED
                and not self.latest.relaxed):
            warm_dual = self.latest.dual
        try:
            result = compute_warning(
                init, self.ego_pred, self.lead_pred, self.signal, self.cfg,
                t0=t, ref_positions=ref_positions, warm_start=self._warm_u,
                warm_start_dual=warm_dual)
        except Exception:
            if self.latest is None:
                raise
            log.exception("advisory update failed; serving stale warning")
            self.latest = replace_stale(self.latest)
            return
        if result.status != STATUS_SOLVED and self.latest is not None:
            self.latest = replace_stale(self.latest)
            return
        self.latest = result
        u_seq = -result.plan_a[:-1] * 20.0
        shift = int(round(ADVISORY_CADENCE / self.cfg.mpc.mpc_dt))
        self._warm_u = np.concatenate([u_seq[shift:], u_seq[-1:].repeat(shift)])
        self._applied_accel = driver_accel(result.signal.u)

    @property
    def warning(self) -> WarningSignal | None:
        return self.latest.signal if self.latest else None


def replace_stale(result: WarningResult) -> WarningResult:
    sig = result.signal
    stale_sig = WarningSignal(u=sig.u, color=sig.color,
                              diameter_fraction=sig.diameter_fraction, stale=True)
    return WarningResult(
        signal=stale_sig, plan_t=result.plan_t, plan_x=result.plan_x,
        plan_v=result.plan_v, plan_a=result.plan_a, mode=result.mode,
        status=result.status, relaxed=result.relaxed,
    )
