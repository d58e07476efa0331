"""Horizon rollout and vehicle trajectory integration."""

import numpy as np
import pytest

from redlight.estimation import EstimatorState, state_from_grid
from redlight.advisory import SignalTimeline
from redlight.prediction import (
    ROLLOUT_DT,
    PredictedTrajectory,
    predict_grid_horizon,
    predict_positions,
    predict_vehicle,
    trajectory_uncertainty,
)
from redlight.traffic_flow import (
    GREEN,
    CellGrid,
    FlowParams,
    equilibrium_speed,
    step,
)

P = FlowParams()
ALL_GREEN = SignalTimeline(green=100.0, yellow=0.0, red=0.0)
ALL_RED = SignalTimeline(green=0.0, yellow=0.0, red=100.0)


def eq_state(rho: float, n: int = 5, signal_cell=None, cov_scale=0.0):
    grid = CellGrid(densities=np.full(n, rho),
                    speeds=np.full(n, equilibrium_speed(rho, P)),
                    signal_cell=signal_cell)
    return state_from_grid(grid, cov_scale * np.eye(2 * n))


class TestTrajectoryValidation:
    def test_decreasing_positions_rejected(self):
        with pytest.raises(ValueError):
            PredictedTrajectory(t=np.array([0.0, 0.1]),
                                x_hat=np.array([1.0, 0.5]),
                                v_hat=np.zeros(2), sigma_x=np.zeros(2))

    def test_non_uniform_times_rejected(self):
        with pytest.raises(ValueError):
            PredictedTrajectory(t=np.array([0.0, 0.1, 0.3]),
                                x_hat=np.zeros(3),
                                v_hat=np.zeros(3), sigma_x=np.zeros(3))

    def test_decreasing_sigma_rejected(self):
        with pytest.raises(ValueError):
            PredictedTrajectory(t=np.array([0.0, 0.1]),
                                x_hat=np.zeros(2), v_hat=np.zeros(2),
                                sigma_x=np.array([1.0, 0.5]))

    def test_at_time_interpolates(self):
        traj = PredictedTrajectory(t=np.array([0.0, 1.0]),
                                   x_hat=np.array([0.0, 10.0]),
                                   v_hat=np.full(2, 10.0),
                                   sigma_x=np.array([1.0, 3.0]))
        x, s = traj.at_time(0.5)
        assert x == pytest.approx(5.0)
        assert s == pytest.approx(2.0)


class TestGridHorizon:
    def test_equilibrium_all_green_is_constant(self):
        grids = predict_grid_horizon(eq_state(30.0), ALL_GREEN, P, 1.0)
        assert len(grids) == 11
        for g in grids:
            assert np.allclose(g.densities, 30.0, atol=1e-12)

    def test_all_red_zeroes_signal_cell_every_step(self):
        grids = predict_grid_horizon(eq_state(30.0, signal_cell=2),
                                     ALL_RED, P, 1.0)
        for g in grids[1:]:
            assert g.speeds[2] == 0.0

    def test_matches_repeated_step_composition(self):
        grid = CellGrid(densities=np.array([20.0, 60.0, 45.0]),
                        speeds=np.array([22.0, 8.0, 14.0]), signal_cell=1)
        state = state_from_grid(grid, np.zeros((6, 6)))
        grids = predict_grid_horizon(state, ALL_RED, P, 0.3)
        manual = grid
        for k in range(3):
            assert np.allclose(grids[k].densities, manual.densities,
                               atol=1e-12)
            assert np.allclose(grids[k].speeds, manual.speeds, atol=1e-12)
            from redlight.traffic_flow import RED
            manual = step(manual, RED, P)

    def test_entry_clamps_unphysical_mean(self):
        # the estimator mean is unconstrained; a slightly negative speed must
        # not produce a retreating trajectory
        state = EstimatorState(
            mean=np.concatenate([np.full(3, 20.0), [-0.5, 10.0, 10.0]]),
            covariance=np.zeros((6, 6)))
        grids = predict_grid_horizon(state, ALL_GREEN, P, 0.5)
        for g in grids:
            assert np.all(g.speeds >= 0.0)

    def test_non_positive_horizon_rejected(self):
        with pytest.raises(ValueError):
            predict_grid_horizon(eq_state(30.0), ALL_GREEN, P, 0.0)


class TestVehicleIntegration:
    def test_constant_speed_advance(self):
        grid = CellGrid(densities=np.zeros(10), speeds=np.full(10, 20.0))
        grids = [grid] * 11  # 1 s of 0.1 s steps
        traj = predict_vehicle(10.0, grids)
        assert traj.x_hat[-1] == pytest.approx(30.0)
        assert np.all(traj.v_hat == 20.0)

    def test_zero_speed_cell_is_a_barrier(self):
        speeds = np.array([10.0, 10.0, 0.0, 10.0])
        grid = CellGrid(densities=np.zeros(4), speeds=speeds)
        grids = [grid] * 100
        traj = predict_vehicle(30.0, grids)   # just upstream of cell 2
        assert np.all(traj.x_hat < 60.0)      # never passes the stopped cell

    def test_two_step_hand_euler(self):
        # speed ramp 10 -> 20 m/s across one cell
        g0 = CellGrid(densities=np.zeros(2), speeds=np.array([10.0, 20.0]))
        g1 = CellGrid(densities=np.zeros(2), speeds=np.array([12.0, 22.0]))
        g2 = CellGrid(densities=np.zeros(2), speeds=np.array([14.0, 24.0]))
        traj = predict_vehicle(10.0, [g0, g1, g2])
        v0 = 0.5 * 10.0 + 0.5 * 20.0          # alpha = 0.5
        x1 = 10.0 + v0 * ROLLOUT_DT
        alpha1 = x1 / 20.0
        v1 = (1 - alpha1) * 12.0 + alpha1 * 22.0
        x2 = x1 + v1 * ROLLOUT_DT
        assert traj.x_hat[1] == pytest.approx(x1, abs=1e-12)
        assert traj.v_hat[1] == pytest.approx(v1, abs=1e-12)
        assert traj.x_hat[2] == pytest.approx(x2, abs=1e-12)

    def test_clamped_at_downstream_end(self):
        grid = CellGrid(densities=np.zeros(2), speeds=np.full(2, 20.0))
        traj = predict_vehicle(39.0, [grid] * 20)
        assert traj.x_hat[-1] == pytest.approx(40.0)

    def test_outside_extent_rejected(self):
        grid = CellGrid(densities=np.zeros(2), speeds=np.zeros(2))
        with pytest.raises(ValueError):
            predict_vehicle(-1.0, [grid])


class TestFusedRollout:
    def test_equals_grid_rollout_plus_integration(self):
        grid = CellGrid(densities=np.array([25.0, 50.0, 40.0, 30.0]),
                        speeds=np.array([20.0, 9.0, 13.0, 22.0]),
                        signal_cell=2)
        state = state_from_grid(grid, np.zeros((8, 8)))
        horizon, t0 = 2.0, 1.5
        starts = [5.0, 41.0]
        fused = predict_positions(state, ALL_RED, P, horizon, t0, starts)
        grids = predict_grid_horizon(state, ALL_RED, P, horizon, t0=t0)
        for x0, traj in zip(starts, fused):
            ref = predict_vehicle(x0, grids, t0=t0)
            assert np.allclose(traj.x_hat, ref.x_hat, atol=1e-9)
            assert np.allclose(traj.v_hat, ref.v_hat, atol=1e-9)
            assert np.allclose(traj.t, ref.t)

    def test_start_outside_grid_rejected(self):
        state = eq_state(30.0)
        with pytest.raises(ValueError):
            predict_positions(state, ALL_GREEN, P, 1.0, 0.0, [1e6])


class TestUncertainty:
    def flat_traj(self, n=41):
        # vehicle parked exactly on a cell boundary so the interpolation
        # weight is 1 on a single cell
        return PredictedTrajectory(t=ROLLOUT_DT * np.arange(n),
                                   x_hat=np.full(n, 20.0),
                                   v_hat=np.zeros(n), sigma_x=np.zeros(n))

    def test_zero_growth_is_constant(self):
        state = eq_state(30.0, cov_scale=1.0)
        traj = trajectory_uncertainty(state, self.flat_traj(), growth=0.0)
        assert np.ptp(traj.sigma_x) == 0.0

    def test_linear_growth_formula(self):
        # speed variance 1 at the vehicle's cell -> sigma_0 = 1 m;
        # growth 0.5 m/s over 4 s -> 3 m
        state = eq_state(30.0, cov_scale=1.0)
        traj = trajectory_uncertainty(state, self.flat_traj(), growth=0.5)
        assert traj.sigma_x[0] == pytest.approx(1.0)
        assert traj.at_time(4.0)[1] == pytest.approx(3.0)

    def test_zero_covariance_gives_zero_initial_sigma(self):
        state = eq_state(30.0, cov_scale=0.0)
        traj = trajectory_uncertainty(state, self.flat_traj(), growth=0.3)
        assert traj.sigma_x[0] == 0.0
