"""Unscented Kalman filter over the full cell-grid state.

The joint state vector is ordered [rho_0 .. rho_{J-1}, v_0 .. v_{J-1}]; the
prediction step and the trajectory modules both rely on that ordering.
Measurements are connected-vehicle speeds observed at known positions, which
are linear in the speed half of the state through the cell interpolation
weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .traffic_flow import (
    CellGrid,
    FlowParams,
    _step_arrays,
    interpolation_weights,
)

log = logging.getLogger(__name__)

PSD_EIG_FLOOR = -1e-8
CHOL_JITTERS = (0.0, 1e-9, 1e-8, 1e-7)


class FactorizationError(RuntimeError):
    """Covariance square root could not be computed even with jitter."""


@dataclass(frozen=True)
class UkfConfig:
    sigma_spread: float = 1e-3      # sigma-point spread (alpha)
    sigma_secondary: float = 2.0    # distribution parameter (beta)
    sigma_scaling: float = 0.0      # secondary scaling (kappa)
    process_noise_density: float = 1.0   # (veh/km)^2 per step
    process_noise_speed: float = 0.5     # (m/s)^2 per step
    measurement_noise: float = 0.25      # (m/s)^2

    def __post_init__(self):
        if self.sigma_spread <= 0:
            raise ValueError("sigma_spread must be positive")
        for name in ("process_noise_density", "process_noise_speed", "measurement_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True, eq=False)
class EstimatorState:
    """Gaussian belief over the stacked grid state.

    The covariance is symmetrized on construction and must have smallest
    eigenvalue >= -1e-8.  ``clamp_warning`` is raised by the prediction step
    when more than half of the propagated cells had to be clamped.
    """

    mean: np.ndarray
    covariance: np.ndarray
    origin: float = 0.0
    dx: float = 20.0
    signal_cell: int | None = None
    clamp_warning: bool = False

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise ValueError("covariance shape does not match mean")
        cov = 0.5 * (cov + cov.T)
        # Cholesky of the floored matrix is a cheap sufficient PSD check;
        # only fall back to the eigenvalue test when it fails
        try:
            np.linalg.cholesky(cov - PSD_EIG_FLOOR * np.eye(n))
        except np.linalg.LinAlgError:
            if np.linalg.eigvalsh(cov)[0] < PSD_EIG_FLOOR:
                raise ValueError("covariance is not positive semidefinite") from None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def n_cells(self) -> int:
        return self.mean.shape[0] // 2

    def as_grid(self) -> CellGrid:
        j = self.n_cells
        return CellGrid(
            densities=self.mean[:j], speeds=self.mean[j:],
            origin=self.origin, dx=self.dx, signal_cell=self.signal_cell,
        )


def state_from_grid(grid: CellGrid, covariance: np.ndarray) -> EstimatorState:
    return EstimatorState(
        mean=np.concatenate([grid.densities, grid.speeds]),
        covariance=covariance,
        origin=grid.origin, dx=grid.dx, signal_cell=grid.signal_cell,
    )


def initial_state(n_cells: int, origin: float, dx: float, signal_cell: int | None,
                  p: FlowParams, n_connected: int = 0,
                  density_std: float = 10.0, speed_std: float = 5.0) -> EstimatorState:
    """Initial belief: density from the observed connected-vehicle count over
    the covered length (floored at 5 veh/km), speeds at free flow, diagonal
    covariance."""
    covered_km = n_cells * dx / 1000.0
    rho0 = max(5.0, n_connected / covered_km)
    mean = np.concatenate([
        np.full(n_cells, min(rho0, p.rho_jam)),
        np.full(n_cells, p.v0),
    ])
    cov = np.diag(np.concatenate([
        np.full(n_cells, density_std ** 2),
        np.full(n_cells, speed_std ** 2),
    ]))
    return EstimatorState(mean=mean, covariance=cov, origin=origin, dx=dx,
                          signal_cell=signal_cell)


def _sqrt_psd(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular square root with a diagonal jitter retry ladder."""
    if not np.any(cov):
        return np.zeros_like(cov)
    for jitter in CHOL_JITTERS:
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(
        f"covariance factorization failed (min eig {np.linalg.eigvalsh(cov)[0]:.3e})"
    )


def _project_psd(cov: np.ndarray) -> np.ndarray:
    """Eigenvalue clipping onto the PSD cone.

    The large negative center weight of the scaled sigma-point transform can
    produce slightly indefinite covariances through the clamped model step;
    projection keeps the belief valid without touching the PSD directions.
    """
    try:
        np.linalg.cholesky(cov)
        return cov
    except np.linalg.LinAlgError:
        pass
    w, q = np.linalg.eigh(cov)
    if w[0] >= 0.0:
        return cov
    cov = (q * np.maximum(w, 0.0)) @ q.T
    return 0.5 * (cov + cov.T)


def _bound_covariance(cov: np.ndarray, limits: np.ndarray) -> np.ndarray:
    """Scale rows/columns so no standard deviation exceeds its physical
    limit; symmetric congruence, so positive semidefiniteness is preserved.

    The scaled transform's large sigma-point weights can amplify clamping
    asymmetries in the unobserved directions without bound; a state's
    spread beyond its physical range carries no information anyway.
    """
    std = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(std > limits, limits / np.where(std > 0, std, 1.0), 1.0)
    if np.all(s == 1.0):
        return cov
    return s[:, None] * cov * s[None, :]


def sigma_weights(n: int, cfg: UkfConfig) -> tuple[float, np.ndarray, np.ndarray]:
    """Scaled sigma-point weights; returns (lambda, mean weights, cov weights)."""
    lam = cfg.sigma_spread ** 2 * (n + cfg.sigma_scaling) - n
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + 1.0 - cfg.sigma_spread ** 2 + cfg.sigma_secondary
    return lam, wm, wc


def generate_sigma_points(est: EstimatorState, cfg: UkfConfig):
    """2n+1 scaled sigma points whose weighted mean and covariance reproduce
    the belief.  Returns (points (2n+1, n), wm, wc)."""
    n = est.mean.shape[0]
    lam, wm, wc = sigma_weights(n, cfg)
    scale = np.sqrt(n + lam)
    root = _sqrt_psd(est.covariance)
    offsets = scale * root.T  # rows are the scaled covariance columns
    points = np.vstack([est.mean[None, :],
                        est.mean[None, :] + offsets,
                        est.mean[None, :] - offsets])
    return points, wm, wc


def _recombine(points: np.ndarray, wm: np.ndarray, wc: np.ndarray):
    mean = wm @ points
    dev = points - mean
    cov = (wc[:, None] * dev).T @ dev
    return mean, 0.5 * (cov + cov.T)


def ukf_predict(est: EstimatorState, phase: str, p: FlowParams,
                cfg: UkfConfig) -> EstimatorState:
    """Propagate the belief one model step and add process noise."""
    j = est.n_cells
    points, wm, wc = generate_sigma_points(est, cfg)
    rho, v, clamp_count = _step_arrays(
        points[:, :j], points[:, j:], phase, p, est.signal_cell,
    )
    propagated = np.hstack([rho, v])
    # the predicted mean is the propagated center point: identical to the
    # weighted mean under linear dynamics, but immune to the enormous
    # center weight amplifying one-sided clamping of the propagated
    # offsets when cells sit at a physical bound
    mean = propagated[0]
    dev = propagated - mean
    cov = (wc[:, None] * dev).T @ dev
    cov = 0.5 * (cov + cov.T)
    cov = cov + np.diag(np.concatenate([
        np.full(j, cfg.process_noise_density),
        np.full(j, cfg.process_noise_speed),
    ]))
    # the scaled transform's negative center weight can leave the recombined
    # covariance slightly indefinite; the process noise usually lifts the
    # spectrum, and the projection handles the remaining cases
    cov = _project_psd(cov)
    cov = _bound_covariance(cov, np.concatenate([
        np.full(j, p.rho_jam), np.full(j, p.v0),
    ]))
    warn = clamp_count > 0.5 * points.shape[0] * 2 * j
    if warn:
        log.warning("ukf_predict: clamp rate %.0f%% of propagated cells",
                    100.0 * clamp_count / (points.shape[0] * 2 * j))
    return replace(est, mean=mean, covariance=cov, clamp_warning=warn)


def measurement_matrix(est: EstimatorState, positions) -> np.ndarray:
    """Linear measurement model mapping the stacked state to interpolated
    speeds at the given positions."""
    j = est.n_cells
    w = interpolation_weights(positions, est.origin, est.dx, j)
    return np.hstack([np.zeros_like(w), w])


def ukf_update(est: EstimatorState, observations, cfg: UkfConfig) -> EstimatorState:
    """Measurement update from (position m, measured speed m/s) pairs.

    The interpolated-speed measurement model is linear in the state, so the
    sigma-point transform here is exact and the update coincides with a
    classical Kalman update.
    """
    if not observations:
        return est
    positions = [obs[0] for obs in observations]
    y = np.array([obs[1] for obs in observations], dtype=float)
    h = measurement_matrix(est, positions)

    points, wm, wc = generate_sigma_points(est, cfg)
    y_sigma = points @ h.T
    y_mean = wm @ y_sigma
    dy = y_sigma - y_mean
    dx = points - wm @ points
    s = (wc[:, None] * dy).T @ dy + cfg.measurement_noise * np.eye(len(y))
    pxy = (wc[:, None] * dx).T @ dy
    gain = np.linalg.solve(s.T, pxy.T).T
    mean = est.mean + gain @ (y - y_mean)
    # Joseph-form update: algebraically equal to P - K S K' for the exact
    # gain but numerically guaranteed to stay PSD
    i_kh = np.eye(est.mean.shape[0]) - gain @ h
    cov = (i_kh @ est.covariance @ i_kh.T
           + cfg.measurement_noise * gain @ gain.T)
    return replace(est, mean=mean, covariance=_project_psd(cov))
