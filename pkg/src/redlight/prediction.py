"""Horizon rollout of the estimated traffic state and vehicle trajectories.

The grid is rolled out deterministically from the estimator mean at 0.1 s
steps; vehicle positions are forward-integrated against the interpolated
cell speeds (the same interpolation that serves as the measurement model).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .estimation import EstimatorState
from .traffic_flow import RED, CellGrid, FlowParams, interpolation_weights

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a soft dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

ROLLOUT_DT = 0.1
PREDICTION_MAX_AGE = 0.2  # s of simulated time before a rollout is stale


@njit(cache=True)
def _rollout_kernel(rho, v, red_mask, signal_cell, v0, c, rho_jam, tau, c0,
                    eps, dx, dt):  # pragma: no cover - exercised via wrapper
    """Open-boundary model rollout; returns stacked (density, speed) arrays
    including the initial state as row 0."""
    n_steps = red_mask.shape[0]
    j = rho.shape[0]
    rho_c = rho_jam / (v0 / c + 1.0)
    out_rho = np.empty((n_steps + 1, j))
    out_v = np.empty((n_steps + 1, j))
    out_rho[0] = rho
    out_v[0] = v
    r = dt / dx
    for k in range(n_steps):
        rho = out_rho[k]
        v = out_v[k]
        for i in range(j):
            rho_up = rho[i - 1] if i > 0 else rho[0]
            v_up = v[i - 1] if i > 0 else v[0]
            rho_dn = rho[i + 1] if i < j - 1 else rho[j - 1]
            rho_n = rho[i] - r * (rho[i] * v[i] - rho_up * v_up)
            if rho[i] <= rho_c:
                ve = v0
            else:
                ve = c * (rho_jam / rho[i] - 1.0)
            v_n = (v[i] - r * v[i] * (v[i] - v_up)
                   + dt * (ve - v[i]) / tau
                   - r * c0 * c0 * (rho_dn - rho[i]) / (rho[i] + eps))
            if rho_n < 0.0:
                rho_n = 0.0
            elif rho_n > rho_jam:
                rho_n = rho_jam
            if v_n < 0.0:
                v_n = 0.0
            elif v_n > v0:
                v_n = v0
            out_rho[k + 1, i] = rho_n
            out_v[k + 1, i] = v_n
        if red_mask[k] and signal_cell >= 0:
            out_v[k + 1, signal_cell] = 0.0
    return out_rho, out_v


@dataclass(frozen=True, eq=False)
class PredictedTrajectory:
    """Predicted per-step times, positions, speeds and position uncertainty."""

    t: np.ndarray
    x_hat: np.ndarray
    v_hat: np.ndarray
    sigma_x: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        dt = np.diff(t)
        if len(dt) and (np.any(dt <= 0) or np.ptp(dt) > 1e-9):
            raise ValueError("times must be strictly increasing with constant step")
        if np.any(np.diff(self.x_hat) < -1e-9):
            raise ValueError("predicted positions must be non-decreasing")
        if np.any(np.diff(self.sigma_x) < -1e-12):
            raise ValueError("sigma_x must be non-decreasing")

    def at_time(self, t: float) -> tuple[float, float]:
        """(position, sigma) at an arbitrary time inside the horizon."""
        x = float(np.interp(t, self.t, self.x_hat))
        s = float(np.interp(t, self.t, self.sigma_x))
        return x, s


def predict_grid_horizon(est: EstimatorState, signal, p: FlowParams,
                         horizon: float, t0: float = 0.0) -> list[CellGrid]:
    """Roll the model forward from the estimator mean, applying the scheduled
    phase (and the red-signal speed zeroing) at each 0.1 s step."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    n_steps = int(round(horizon / ROLLOUT_DT))
    grid = est.as_grid()
    red_mask = np.array([signal.phase_at(t0 + k * ROLLOUT_DT) == RED
                         for k in range(n_steps)])
    signal_cell = -1 if grid.signal_cell is None else grid.signal_cell
    rhos, vs = _rollout_kernel(
        np.ascontiguousarray(np.clip(grid.densities, 0.0, p.rho_jam)),
        np.ascontiguousarray(np.clip(grid.speeds, 0.0, p.v0)),
        red_mask, signal_cell,
        p.v0, p.c, p.rho_jam, p.tau, p.c0, p.epsilon, p.dx, p.dt,
    )
    return [replace(grid, densities=rhos[k], speeds=vs[k], clamp_events=0)
            for k in range(n_steps + 1)]


@njit(cache=True)
def _integrate_kernel(speeds, x0, lo, hi, dx, dt):  # pragma: no cover
    """Euler vehicle integration against stacked per-step speed fields."""
    n = speeds.shape[0]
    j = speeds.shape[1]
    x = np.empty(n)
    v = np.empty(n)
    x[0] = x0
    for k in range(n):
        rel = (x[k] - lo) / dx
        if rel < 0.0:
            rel = 0.0
        elif rel > j:
            rel = float(j)
        jc = int(rel)
        if jc > j - 1:
            jc = j - 1
        alpha = rel - jc
        if jc + 1 < j:
            vk = (1.0 - alpha) * speeds[k, jc] + alpha * speeds[k, jc + 1]
        else:
            vk = speeds[k, jc]
        v[k] = vk
        if k + 1 < n:
            nxt = x[k] + vk * dt
            x[k + 1] = nxt if nxt < hi else hi
    return x, v


def predict_positions(est: EstimatorState, signal, p: FlowParams,
                      horizon: float, t0: float,
                      starts: list[float]) -> list[PredictedTrajectory]:
    """Rollout plus vehicle integration without materializing per-step grids;
    numerically identical to predict_grid_horizon + predict_vehicle."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    n_steps = int(round(horizon / ROLLOUT_DT))
    red_mask = np.array([signal.phase_at(t0 + k * ROLLOUT_DT) == RED
                         for k in range(n_steps)])
    signal_cell = -1 if est.signal_cell is None else est.signal_cell
    j = est.n_cells
    # the estimator mean is unconstrained; clamp to the model's physical
    # range before rolling out
    _, vs = _rollout_kernel(
        np.ascontiguousarray(np.clip(est.mean[:j], 0.0, p.rho_jam)),
        np.ascontiguousarray(np.clip(est.mean[j:], 0.0, p.v0)),
        red_mask, signal_cell,
        p.v0, p.c, p.rho_jam, p.tau, p.c0, p.epsilon, p.dx, p.dt,
    )
    lo = est.origin
    hi = est.origin + j * est.dx
    t = t0 + ROLLOUT_DT * np.arange(n_steps + 1)
    out = []
    for x0 in starts:
        if not (lo - 1e-9 <= x0 <= hi + 1e-9):
            raise ValueError("initial position outside grid extent")
        x, v = _integrate_kernel(vs, float(x0), lo, hi, est.dx, ROLLOUT_DT)
        out.append(PredictedTrajectory(t=t, x_hat=x, v_hat=v,
                                       sigma_x=np.zeros(n_steps + 1)))
    return out


def predict_vehicle(initial_position: float, grids: list[CellGrid],
                    t0: float = 0.0) -> PredictedTrajectory:
    """Forward-integrate a vehicle against the interpolated grid speeds.

    The position is clamped at the downstream end of the grid; speeds are the
    grid speeds sampled at the running position each 0.1 s step.
    """
    g0 = grids[0]
    lo, hi = g0.extent
    if not (lo - 1e-9 <= initial_position <= hi + 1e-9):
        raise ValueError("initial position outside grid extent")
    n = len(grids)
    j = g0.n_cells
    x = np.empty(n)
    v = np.empty(n)
    x[0] = initial_position
    for k, grid in enumerate(grids):
        # inline linear interpolation; last cell holds its speed constant
        rel = min(max((x[k] - lo) / g0.dx, 0.0), float(j))
        jc = min(int(rel), j - 1)
        alpha = rel - jc if jc + 1 < j else 0.0
        speeds = grid.speeds
        v[k] = (1.0 - alpha) * speeds[jc] + (alpha * speeds[jc + 1]
                                             if alpha else 0.0)
        if k + 1 < n:
            x[k + 1] = min(x[k] + v[k] * ROLLOUT_DT, hi)
    t = t0 + ROLLOUT_DT * np.arange(n)
    return PredictedTrajectory(t=t, x_hat=x, v_hat=v, sigma_x=np.zeros(n))


def trajectory_uncertainty(est: EstimatorState, traj: PredictedTrajectory,
                           growth: float = 0.3) -> PredictedTrajectory:
    """Attach a linearly growing position standard deviation.

    sigma_0 converts the estimator's speed variance at the vehicle's cells
    into a position-equivalent spread over one second; the growth rate (m/s)
    covers model error accumulated along the horizon.
    """
    j = est.n_cells
    w = interpolation_weights([traj.x_hat[0]], est.origin, est.dx, j)
    speed_cov = est.covariance[j:, j:]
    var = float((w @ speed_cov @ w.T)[0, 0])
    sigma0 = np.sqrt(max(var, 0.0)) * 1.0  # 1 s position-equivalent horizon
    sigma = sigma0 + growth * (traj.t - traj.t[0])
    return replace(traj, sigma_x=sigma)
