"""Discretized second-order Payne-Whitham traffic model on a 1-D cell grid.

Unit conventions (used consistently by every module that touches the grid):
densities are veh/km, speeds are m/s, positions are m.  The density update is
linear in density, and the pressure term only uses the dimensionless ratio
(rho_{j+1} - rho_j)/(rho_j + eps), so all terms are unit-consistent without an
explicit veh/km -> veh/m conversion.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

GREEN = "green"
YELLOW = "yellow"
RED = "red"

PHASES = (GREEN, YELLOW, RED)


@dataclass(frozen=True)
class FlowParams:
    """Parameters of the cell-based traffic model.

    Defaults follow the calibration used throughout this project: free-flow
    speed 24.6 m/s, congested slope 10.14 m/s, jam density 130 veh/km,
    adaptation time 1 s, cells of 20 m advanced at 0.1 s steps.
    """

    v0: float = 24.6          # free-flow speed (m/s)
    c: float = 10.14          # congested-branch slope (m/s)
    rho_jam: float = 130.0    # jam density (veh/km)
    tau: float = 1.0          # speed adaptation time (s)
    c0: float = 6.0           # traffic pressure coefficient (m/s)
    epsilon: float = 1e-3     # denominator regularizer (veh/km)
    dx: float = 20.0          # cell length (m)
    dt: float = 0.1           # step size (s)

    def __post_init__(self):
        for name in ("v0", "c", "rho_jam", "tau", "epsilon", "dx", "dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"FlowParams.{name} must be positive")
        if self.v0 * self.dt > self.dx + 1e-12:
            raise ValueError(
                f"CFL violation: v0*dt = {self.v0 * self.dt:.3f} exceeds dx = {self.dx}"
            )


@dataclass(frozen=True, eq=False)
class CellGrid:
    """Per-cell traffic density (veh/km) and speed (m/s) snapshot.

    ``origin`` is the longitudinal position of cell 0's upstream edge;
    ``signal_cell`` is the index of the cell containing the stop bar, if any.
    ``clamp_events`` counts cells that had to be clipped back into the
    physical box on the step that produced this grid.
    """

    densities: np.ndarray
    speeds: np.ndarray
    origin: float = 0.0
    dx: float = 20.0
    signal_cell: int | None = None
    clamp_events: int = 0

    def __post_init__(self):
        rho = np.asarray(self.densities, dtype=float)
        v = np.asarray(self.speeds, dtype=float)
        if rho.shape != v.shape:
            raise ValueError("densities and speeds must have the same shape")
        object.__setattr__(self, "densities", rho)
        object.__setattr__(self, "speeds", v)

    @property
    def n_cells(self) -> int:
        return self.densities.shape[-1]

    @property
    def extent(self) -> tuple[float, float]:
        return self.origin, self.origin + self.n_cells * self.dx


def critical_density(p: FlowParams) -> float:
    """Density separating the free-flow and congested branches."""
    return p.rho_jam / (p.v0 / p.c + 1.0)


def equilibrium_speed(rho, p: FlowParams):
    """Triangular fundamental diagram: v0 up to the critical density, then
    c*(rho_jam/rho - 1) down to zero at jam density.  Accepts scalars or
    arrays; raises on densities outside [0, rho_jam]."""
    rho_arr = np.asarray(rho, dtype=float)
    if np.any(rho_arr < 0) or np.any(rho_arr > p.rho_jam):
        raise ValueError("density outside [0, rho_jam]")
    rho_c = critical_density(p)
    with np.errstate(divide="ignore"):
        congested = p.c * (p.rho_jam / np.maximum(rho_arr, 1e-300) - 1.0)
    out = np.where(rho_arr <= rho_c, p.v0, congested)
    if np.isscalar(rho) or rho_arr.ndim == 0:
        return float(out)
    return out


def _step_arrays(rho, v, phase, p: FlowParams, signal_cell,
                 noise_rho=None, noise_v=None,
                 boundary="open", inflow_density=None):
    """One explicit step of the discretized model on (..., J) arrays.

    Returns (rho_next, v_next, clamp_count).  Batched leading dimensions are
    supported so the estimator can propagate all sigma points at once.
    Boundary handling: "open" copies the edge cells into ghost cells (the
    upstream ghost density may be overridden with a constant inflow);
    "periodic" wraps, which conserves total density exactly.
    """
    if boundary == "periodic":
        rho_up = np.roll(rho, 1, axis=-1)
        v_up = np.roll(v, 1, axis=-1)
        rho_dn = np.roll(rho, -1, axis=-1)
    elif boundary == "open":
        rho_up = np.concatenate([rho[..., :1], rho[..., :-1]], axis=-1)
        v_up = np.concatenate([v[..., :1], v[..., :-1]], axis=-1)
        rho_dn = np.concatenate([rho[..., 1:], rho[..., -1:]], axis=-1)
        if inflow_density is not None:
            rho_up = rho_up.copy()
            rho_up[..., 0] = inflow_density
    else:
        raise ValueError(f"unknown boundary {boundary!r}")

    r = p.dt / p.dx
    rho_next = rho - r * (rho * v - rho_up * v_up)
    ve = equilibrium_speed(np.clip(rho, 0.0, p.rho_jam), p)
    v_next = (
        v
        - r * v * (v - v_up)
        + p.dt * (ve - v) / p.tau
        - r * p.c0 ** 2 * (rho_dn - rho) / (rho + p.epsilon)
    )
    if noise_rho is not None:
        rho_next = rho_next + noise_rho
    if noise_v is not None:
        v_next = v_next + noise_v

    if signal_cell is not None and phase == RED:
        v_next[..., signal_cell] = 0.0

    clamped = (
        (rho_next < 0.0) | (rho_next > p.rho_jam)
        | (v_next < 0.0) | (v_next > p.v0)
    )
    clamp_count = int(np.count_nonzero(clamped))
    np.clip(rho_next, 0.0, p.rho_jam, out=rho_next)
    np.clip(v_next, 0.0, p.v0, out=v_next)
    return rho_next, v_next, clamp_count


def step(grid: CellGrid, phase: str, p: FlowParams, noise=None,
         boundary: str = "open", inflow_density: float | None = None) -> CellGrid:
    """Advance the grid one time step under the given signal phase.

    ``noise`` is an optional (density_perturbation, speed_perturbation) pair
    of per-cell arrays.  The signal cell's speed is forced to zero while the
    phase is red.  Outputs are clamped to [0, rho_jam] x [0, v0]; the number
    of clamped cells is reported on the returned grid.
    """
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    noise_rho, noise_v = noise if noise is not None else (None, None)
    rho_next, v_next, clamp_count = _step_arrays(
        grid.densities, grid.speeds, phase, p, grid.signal_cell,
        noise_rho, noise_v, boundary, inflow_density,
    )
    return replace(grid, densities=rho_next, speeds=v_next,
                   clamp_events=clamp_count)


def interpolation_weights(positions, origin: float, dx: float, n_cells: int) -> np.ndarray:
    """Row-stochastic (m, n_cells) matrix W with W @ speeds giving the
    linearly interpolated speed at each position.

    Position q maps to j_adj = floor((q - origin)/dx) and blends cells j_adj
    and j_adj + 1 with weight alpha = (q - origin)/dx - j_adj.  Positions in
    the last cell hold its speed constant.  This matrix doubles as the linear
    measurement model of the estimator.
    """
    pos = np.atleast_1d(np.asarray(positions, dtype=float))
    rel = (pos - origin) / dx
    if np.any(rel < -1e-9) or np.any(rel > n_cells + 1e-9):
        raise ValueError("position outside grid extent")
    rel = np.clip(rel, 0.0, n_cells)
    j = np.minimum(np.floor(rel).astype(int), n_cells - 1)
    alpha = rel - j
    j_up = np.minimum(j + 1, n_cells - 1)
    at_last = j_up == j
    alpha = np.where(at_last, 0.0, alpha)
    w = np.zeros((pos.shape[0], n_cells))
    rows = np.arange(pos.shape[0])
    w[rows, j] = 1.0 - alpha
    w[rows, j_up] += alpha
    return w


def interpolate_speed(grid: CellGrid, position: float) -> float:
    """Linearly interpolated speed between the two cells adjacent to a
    position.  Raises if the position is outside the grid extent."""
    w = interpolation_weights([position], grid.origin, grid.dx, grid.n_cells)
    return float((w @ grid.speeds)[0])
