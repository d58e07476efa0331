"""Condensed transcription of the warning optimization into a dense QP.

States are eliminated by forward substitution through the linear longitudinal
dynamics and the linear driver model, so the decision vector is just the
warning sequence u_0..u_{N-1} (0.2 s steps) plus the two terminal slack
variables when the stop-at-bar rows are active.  Everything downstream of
this module sees an ordinary box/inequality QP.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .advisory import (
    ConstraintMode,
    DRIVER_GAIN,
    MpcConfig,
    SignalTimeline,
    reference_speed,
)
from .prediction import PredictedTrajectory
from .qp import QpProblem
from .traffic_flow import RED, FlowParams


@dataclass(frozen=True)
class InitialCondition:
    position: float
    speed: float
    accel: float = 0.0   # previously applied acceleration, for jerk continuity


def _prediction_matrices(n: int, dt: float):
    """(T1, T2) with v = v0 + dt*T1 a and x = x0 + dt*v0*k + dt^2*T2 a,
    both for steps 1..N under explicit Euler (position integrates the old
    speed)."""
    t1 = np.tril(np.ones((n, n)))
    idx = np.arange(n)
    t2 = np.maximum(idx[:, None] - idx[None, :], 0).astype(float)
    return t1, t2


def _reference_profile(positions: np.ndarray, red_ahead: bool,
                       signal: SignalTimeline, flow: FlowParams,
                       cfg: MpcConfig) -> np.ndarray:
    """Reference speed samples along the horizon.

    Under a red the sigmoid is evaluated against a stop target a fixed
    offset short of the bar, then shifted and rescaled so the reference is
    exactly zero there: the raw sigmoid retains a residual crawl speed at
    its center of symmetry that would otherwise drag a stopped vehicle over
    the stop line.
    """
    positions = np.asarray(positions, dtype=float)
    if not red_ahead:
        return np.array([reference_speed(x, False, signal, flow,
                                         cfg.k_ref, cfg.x_off)
                         for x in positions])
    target = signal.stop_bar_position - cfg.ref_stop_offset
    ref_signal = replace(signal, stop_bar_position=target)
    eps = 1e-9
    raw = np.array([reference_speed(min(x, target - eps), True, ref_signal,
                                    flow, cfg.k_ref, cfg.x_off)
                    for x in positions])
    floor = reference_speed(target - eps, True, ref_signal, flow,
                            cfg.k_ref, cfg.x_off)
    return np.maximum(0.0, (raw - floor) * flow.v0 / (flow.v0 - floor))


def transcribe(cfg: MpcConfig, init: InitialCondition,
               lead: PredictedTrajectory | None,
               signal: SignalTimeline, mode: ConstraintMode,
               flow: FlowParams, t0: float = 0.0,
               ref_positions: np.ndarray | None = None) -> QpProblem:
    """Build the dense QP for one advisory update.

    ``ref_positions`` are the positions at which the reference speed is
    sampled (the previous plan's positions when warm-starting); without them
    a constant-speed extrapolation of the initial state is used.
    """
    if (mode.min_spacing or mode.max_spacing) and lead is None:
        raise ValueError("constraint mode requires a lead trajectory")

    n = int(round(cfg.horizon / cfg.mpc_dt))
    dt = cfg.mpc_dt
    x_tl = signal.stop_bar_position
    n_slack = 2 if mode.terminal else 0
    n_var = n + n_slack

    g_mat = -np.eye(n) / DRIVER_GAIN                 # a = G u
    t1, t2 = _prediction_matrices(n, dt)
    v_of_u = dt * (t1 @ g_mat)
    x_of_u = dt * dt * (t2 @ g_mat)
    steps = np.arange(1, n + 1)
    v_const = np.full(n, init.speed)
    x_const = init.position + dt * init.speed * steps

    # reference speed samples along the horizon
    if ref_positions is None:
        ref_positions = init.position + init.speed * dt * steps
    else:
        ref_positions = np.asarray(ref_positions, dtype=float)
        if len(ref_positions) >= n:
            ref_positions = ref_positions[:n]
        else:
            pad_tail = np.full(n - len(ref_positions), ref_positions[-1])
            ref_positions = np.concatenate([ref_positions, pad_tail])
    red_ref = mode.red_rows or mode.terminal
    v_ref = _reference_profile(ref_positions, red_ref, signal, flow, cfg)

    # objective: accel + jerk + reference tracking (+ slack penalties)
    d_jerk = np.eye(n) - np.eye(n, k=-1)
    m_jerk = (d_jerk @ g_mat) / dt
    b_jerk = np.zeros(n)
    b_jerk[0] = -init.accel / dt
    quad = (
        cfg.w_accel * g_mat.T @ g_mat
        + cfg.w_jerk * m_jerk.T @ m_jerk
        + cfg.w_speed * v_of_u.T @ v_of_u
    )
    lin = cfg.w_jerk * m_jerk.T @ b_jerk + cfg.w_speed * v_of_u.T @ (v_const - v_ref)

    hess = np.zeros((n_var, n_var))
    hess[:n, :n] = 2.0 * quad
    grad = np.zeros(n_var)
    grad[:n] = 2.0 * lin
    if mode.terminal:
        hess[n, n] = 2.0 * cfg.w_slack_speed
        hess[n + 1, n + 1] = 2.0 * cfg.w_slack_pos

    rows, lbs, ubs = [], [], []
    groups: dict[str, list[int]] = {}

    def add_rows(name, block, lo, hi):
        start = len(rows)
        for r, l, u in zip(block, np.atleast_1d(lo), np.atleast_1d(hi)):
            rows.append(r)
            lbs.append(l)
            ubs.append(u)
        groups.setdefault(name, []).extend(range(start, len(rows)))

    def pad(block):
        block = np.atleast_2d(block)
        return np.hstack([block, np.zeros((block.shape[0], n_slack))])

    # warning box, folded with the acceleration bounds (a = -u/20)
    u_lo = max(cfg.u_min, -DRIVER_GAIN * cfg.a_max)
    u_hi = min(cfg.u_max, -DRIVER_GAIN * cfg.a_min)
    add_rows("u_box", pad(np.eye(n)), np.full(n, u_lo), np.full(n, u_hi))

    add_rows("speed", pad(v_of_u),
             cfg.v_min - v_const, cfg.v_max - v_const)

    if mode.red_rows:
        red_steps = [i for i in range(n)
                     if signal.phase_at(t0 + (i + 1) * dt) == RED]
        if red_steps:
            block = x_of_u[red_steps] + cfg.tau_tl * v_of_u[red_steps]
            hi = (x_tl - x_const[red_steps] - cfg.tau_tl * v_const[red_steps])
            add_rows("red_headway", pad(block),
                     np.full(len(red_steps), -np.inf), hi)

    if mode.terminal:
        row_v = np.zeros(n_var)
        row_v[:n] = v_of_u[-1]
        row_v[n] = -1.0
        add_rows("terminal_speed", row_v[None, :],
                 [-v_const[-1]], [-v_const[-1]])
        row_x = np.zeros(n_var)
        row_x[:n] = x_of_u[-1]
        row_x[n + 1] = 1.0
        add_rows("terminal_pos", row_x[None, :],
                 [x_tl - cfg.d_tl - x_const[-1]], [np.inf])
        for k in range(2):
            row_s = np.zeros(n_var)
            row_s[n + k] = 1.0
            add_rows("slack_nonneg", row_s[None, :], [0.0], [np.inf])

    if mode.min_spacing or mode.max_spacing:
        lead_x = np.empty(n)
        lead_sigma = np.empty(n)
        for i, tk in enumerate(t0 + dt * steps):
            lead_x[i], lead_sigma[i] = lead.at_time(tk)
        margin = cfg.beta * lead_sigma
        if mode.min_spacing:
            block = x_of_u + cfg.h_min * v_of_u
            hi = lead_x - margin - cfg.d_min - x_const - cfg.h_min * v_const
            add_rows("min_spacing", pad(block), np.full(n, -np.inf), hi)
        # the platoon-cohesion rows only apply when the ego is actually in
        # the platoon; with the lead already farther than d_max they would
        # command a full-throttle chase instead
        gap_now = lead.at_time(t0)[0] - init.position
        if mode.max_spacing and gap_now <= cfg.d_max:
            lo = lead_x + margin - cfg.d_max - x_const
            # rows the ego could not satisfy even at full advisory
            # acceleration (respecting the speed cap) are unenforceable;
            # including them only forces a spurious infeasibility and a
            # relaxation pass
            a_reach = -u_lo / DRIVER_GAIN
            reach = np.empty(n)
            vv, disp = init.speed, 0.0
            for s in range(n):
                disp += vv * dt
                reach[s] = disp - dt * init.speed * (s + 1)
                vv += dt * min(a_reach, max(0.0, (cfg.v_max - vv) / dt))
            keep = np.flatnonzero(lo <= reach + 1e-9)
            if keep.size:
                add_rows("max_spacing", pad(x_of_u[keep]), lo[keep],
                         np.full(keep.size, np.inf))

    names = [f"u_{i}" for i in range(n)]
    if mode.terminal:
        names += ["gamma_v", "gamma_x"]
    return QpProblem(
        hessian=hess, gradient=grad,
        constraint_matrix=np.array(rows),
        lower_bounds=np.array(lbs), upper_bounds=np.array(ubs),
        var_names=names, row_groups=groups,
    )


def rollout_plan(cfg: MpcConfig, init: InitialCondition, u: np.ndarray,
                 t0: float = 0.0):
    """Expand a warning sequence into the planned (t, x, v, a) trajectory."""
    a = -np.asarray(u, dtype=float) / DRIVER_GAIN
    n = len(a)
    dt = cfg.mpc_dt
    v = init.speed + dt * np.concatenate([[0.0], np.cumsum(a)])
    x = init.position + dt * np.concatenate([[0.0], np.cumsum(v[:-1])])
    t = t0 + dt * np.arange(n + 1)
    return t, x, v, np.concatenate([a, [a[-1]]])
