"""Sigma-point estimator: point generation, prediction, measurement update
and the linear-measurement equivalence with a classical Kalman update."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from redlight.estimation import (
    EstimatorState,
    FactorizationError,
    UkfConfig,
    _bound_covariance,
    _project_psd,
    _sqrt_psd,
    generate_sigma_points,
    initial_state,
    measurement_matrix,
    sigma_weights,
    state_from_grid,
    ukf_predict,
    ukf_update,
)
from redlight.traffic_flow import (
    GREEN,
    RED,
    CellGrid,
    FlowParams,
    equilibrium_speed,
    step,
)

P = FlowParams()
CFG = UkfConfig()
NOISELESS = UkfConfig(process_noise_density=0.0, process_noise_speed=0.0,
                      measurement_noise=0.25)


def make_state(rho, v, cov=None, signal_cell=None) -> EstimatorState:
    rho = np.asarray(rho, dtype=float)
    v = np.asarray(v, dtype=float)
    n = 2 * rho.shape[0]
    if cov is None:
        cov = np.eye(n)
    return EstimatorState(mean=np.concatenate([rho, v]), covariance=cov,
                          signal_cell=signal_cell)


class TestStateValidation:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            EstimatorState(mean=np.zeros(4), covariance=np.eye(3))

    def test_indefinite_covariance_rejected(self):
        cov = np.diag([1.0, -1.0])
        with pytest.raises(ValueError):
            EstimatorState(mean=np.zeros(2), covariance=cov)

    def test_tiny_negative_eigenvalue_accepted(self):
        cov = np.diag([1.0, -5e-9])
        state = EstimatorState(mean=np.zeros(2), covariance=cov)
        assert state.covariance.shape == (2, 2)

    def test_covariance_symmetrized(self):
        cov = np.array([[1.0, 0.2], [0.1, 1.0]])
        state = EstimatorState(mean=np.zeros(2), covariance=cov)
        assert np.allclose(state.covariance, state.covariance.T)

    def test_grid_round_trip(self):
        grid = CellGrid(densities=np.array([10.0, 20.0]),
                        speeds=np.array([5.0, 6.0]), origin=-40.0,
                        signal_cell=1)
        state = state_from_grid(grid, np.eye(4))
        back = state.as_grid()
        assert np.allclose(back.densities, grid.densities)
        assert np.allclose(back.speeds, grid.speeds)
        assert back.origin == grid.origin
        assert back.signal_cell == 1


class TestInitialState:
    def test_density_from_connected_count(self):
        # 4 vehicles over 0.4 km -> 10 veh/km
        state = initial_state(20, -400.0, 20.0, None, P, n_connected=4)
        assert state.mean[0] == pytest.approx(10.0)
        assert np.all(state.mean[20:] == P.v0)

    def test_density_floor(self):
        state = initial_state(20, -400.0, 20.0, None, P, n_connected=0)
        assert state.mean[0] == pytest.approx(5.0)


class TestSigmaPoints:
    def test_weights_sum_to_one(self):
        _, wm, _ = sigma_weights(5, CFG)
        assert np.sum(wm) == pytest.approx(1.0, abs=1e-6)

    def test_zero_covariance_collapses_points(self):
        state = EstimatorState(mean=np.array([3.0, 4.0]),
                               covariance=np.zeros((2, 2)))
        points, _, _ = generate_sigma_points(state, CFG)
        assert np.allclose(points, state.mean)

    def test_one_dimensional_offsets_and_reconstruction(self):
        mu, var = 7.0, 4.0
        state = EstimatorState(mean=np.array([mu]),
                               covariance=np.array([[var]]))
        points, wm, wc = generate_sigma_points(state, CFG)
        lam, _, _ = sigma_weights(1, CFG)
        scale = np.sqrt(1 + lam)
        assert points[1, 0] == pytest.approx(mu + 2.0 * scale)
        assert points[2, 0] == pytest.approx(mu - 2.0 * scale)
        mean = wm @ points
        dev = points - mean
        cov = (wc[:, None] * dev).T @ dev
        assert mean[0] == pytest.approx(mu, abs=1e-9)
        assert cov[0, 0] == pytest.approx(var, abs=1e-9)

    def test_identity_covariance_reconstruction(self):
        state = EstimatorState(mean=np.array([1.0, -2.0]),
                               covariance=np.eye(2))
        points, wm, wc = generate_sigma_points(state, CFG)
        mean = wm @ points
        dev = points - mean
        cov = (wc[:, None] * dev).T @ dev
        assert np.allclose(mean, state.mean, atol=1e-9)
        assert np.allclose(cov, np.eye(2), atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(
        mean=st.lists(st.floats(-50.0, 50.0), min_size=2, max_size=6),
        diag=st.lists(st.floats(0.01, 25.0), min_size=2, max_size=6),
    )
    def test_reconstruction_property(self, mean, diag):
        n = min(len(mean), len(diag))
        state = EstimatorState(mean=np.array(mean[:n]),
                               covariance=np.diag(diag[:n]))
        points, wm, wc = generate_sigma_points(state, CFG)
        rec_mean = wm @ points
        dev = points - rec_mean
        rec_cov = (wc[:, None] * dev).T @ dev
        assert np.allclose(rec_mean, state.mean, atol=1e-6)
        assert np.allclose(rec_cov, state.covariance, atol=1e-6)


class TestFactorizationHelpers:
    def test_sqrt_recovers_matrix(self):
        cov = np.array([[4.0, 1.0], [1.0, 2.0]])
        root = _sqrt_psd(cov)
        assert np.allclose(root @ root.T, cov)

    def test_jitter_ladder_handles_tiny_indefiniteness(self):
        cov = np.diag([1.0, -1e-10])
        root = _sqrt_psd(cov)
        assert np.all(np.isfinite(root))

    def test_badly_indefinite_raises(self):
        with pytest.raises(FactorizationError):
            _sqrt_psd(np.diag([1.0, -1.0]))

    def test_project_psd_clips_negative_eigenvalues(self):
        cov = np.diag([2.0, -0.5])
        out = _project_psd(cov)
        assert np.linalg.eigvalsh(out)[0] >= -1e-12
        assert out[0, 0] == pytest.approx(2.0)

    def test_project_psd_leaves_psd_untouched(self):
        cov = np.array([[2.0, 0.5], [0.5, 1.0]])
        assert _project_psd(cov) is cov

    def test_bound_covariance_caps_std(self):
        cov = np.diag([100.0, 1.0])
        out = _bound_covariance(cov, np.array([5.0, 5.0]))
        assert np.sqrt(out[0, 0]) == pytest.approx(5.0)
        assert out[1, 1] == pytest.approx(1.0)
        assert np.linalg.eigvalsh(out)[0] >= -1e-12


class TestPredict:
    def test_zero_covariance_matches_deterministic_step(self):
        grid = CellGrid(densities=np.array([30.0, 50.0, 40.0]),
                        speeds=np.array([20.0, 10.0, 15.0]),
                        signal_cell=1)
        state = state_from_grid(grid, np.zeros((6, 6)))
        out = ukf_predict(state, GREEN, P, NOISELESS)
        expect = step(grid, GREEN, P)
        assert np.allclose(out.mean[:3], expect.densities, atol=1e-12)
        assert np.allclose(out.mean[3:], expect.speeds, atol=1e-12)

    def test_equilibrium_mean_is_fixed_point(self):
        rho = 30.0
        state = make_state([rho] * 4, [equilibrium_speed(rho, P)] * 4,
                           cov=np.zeros((8, 8)))
        out = ukf_predict(state, GREEN, P, NOISELESS)
        assert np.allclose(out.mean, state.mean, atol=1e-12)

    def test_process_noise_inflates_covariance(self):
        state = make_state([30.0, 30.0], [20.0, 20.0],
                           cov=0.01 * np.eye(4))
        out = ukf_predict(state, GREEN, P, CFG)
        assert np.trace(out.covariance) > np.trace(state.covariance)

    def test_red_phase_zeroes_signal_cell_mean_speed(self):
        state = make_state([30.0, 30.0], [20.0, 20.0],
                           cov=0.01 * np.eye(4), signal_cell=1)
        out = ukf_predict(state, RED, P, NOISELESS)
        assert out.mean[3] == 0.0

    def test_covariance_stays_psd_at_physical_bounds(self):
        # cells pinned at jam density / zero speed exercise the one-sided
        # clamping of sigma points
        state = make_state([P.rho_jam] * 3, [0.0] * 3,
                           cov=25.0 * np.eye(6), signal_cell=1)
        out = state
        for _ in range(50):
            out = ukf_predict(out, RED, P, CFG)
        assert np.linalg.eigvalsh(out.covariance)[0] >= -1e-8
        assert np.all(np.isfinite(out.mean))
        # spread bounded by the physical range
        stds = np.sqrt(np.diag(out.covariance))
        assert np.all(stds[:3] <= P.rho_jam + 1e-6)
        assert np.all(stds[3:] <= P.v0 + 1e-6)

    def test_matches_monte_carlo_propagation(self):
        """Moment propagation against a large-sample simulation of the same
        one-step dynamics, within three standard errors."""
        rng = np.random.default_rng(11)
        # densities kept away from the fundamental diagram's kink at the
        # critical density, where moment propagation is non-smooth
        mean_rho = np.array([30.0, 45.0, 25.0, 55.0])
        mean_v = np.array([18.0, 12.0, 15.0, 10.0])
        state = make_state(mean_rho, mean_v, cov=0.01 * np.eye(8))
        out = ukf_predict(state, GREEN, P, NOISELESS)

        n_samples = 1_000_000
        samples = rng.multivariate_normal(state.mean, state.covariance,
                                          size=n_samples)
        from redlight.traffic_flow import _step_arrays
        rho_s, v_s, _ = _step_arrays(samples[:, :4], samples[:, 4:],
                                     GREEN, P, None)
        prop = np.hstack([rho_s, v_s])
        mc_mean = prop.mean(axis=0)
        mc_std = prop.std(axis=0)
        se_mean = mc_std / np.sqrt(n_samples)
        assert np.all(np.abs(out.mean - mc_mean) <= 3.0 * se_mean + 1e-9)

        mc_cov = np.cov(prop.T)
        se_cov = np.sqrt(
            (np.outer(np.diag(mc_cov), np.diag(mc_cov)) + mc_cov ** 2)
            / n_samples)
        # 4 standard errors per entry: the bound is applied simultaneously
        # to all 36 unique covariance entries
        assert np.all(np.abs(out.covariance - mc_cov) <= 4.0 * se_cov + 1e-9)


def classical_kf_update(mean, cov, h, y, r_noise):
    """Textbook linear Kalman measurement update (independent oracle)."""
    s = h @ cov @ h.T + r_noise * np.eye(len(y))
    gain = cov @ h.T @ np.linalg.inv(s)
    mean_post = mean + gain @ (y - h @ mean)
    i_kh = np.eye(len(mean)) - gain @ h
    cov_post = i_kh @ cov @ i_kh.T + r_noise * gain @ gain.T
    return mean_post, cov_post


class TestUpdate:
    def test_no_observations_is_identity(self):
        state = make_state([30.0, 30.0], [20.0, 20.0])
        assert ukf_update(state, [], CFG) is state

    def test_exact_measurement_limit(self):
        cfg = UkfConfig(measurement_noise=0.0)
        state = EstimatorState(mean=np.concatenate([[30.0, 30.0],
                                                    [20.0, 20.0]]),
                               covariance=np.eye(4))
        # observation exactly at cell 0's upstream edge, 1 m/s discrepancy
        out = ukf_update(state, [(0.0, 21.0)], cfg)
        assert out.mean[2] == pytest.approx(21.0, abs=1e-6)

    def test_matches_hand_kalman_update(self):
        state = make_state([40.0, 35.0], [15.0, 18.0],
                           cov=np.diag([4.0, 4.0, 2.0, 3.0]))
        obs = [(30.0, 16.0)]
        h = measurement_matrix(state, [30.0])
        out = ukf_update(state, obs, CFG)
        mean_kf, cov_kf = classical_kf_update(
            state.mean, state.covariance, h, np.array([16.0]),
            CFG.measurement_noise)
        assert np.allclose(out.mean, mean_kf, atol=1e-8)
        assert np.allclose(out.covariance, cov_kf, atol=1e-8)

    def test_measurement_matrix_targets_speed_half(self):
        state = make_state([30.0] * 3, [20.0] * 3)
        h = measurement_matrix(state, [10.0])
        assert np.all(h[:, :3] == 0.0)
        assert h.sum() == pytest.approx(1.0)

    def test_update_reduces_speed_uncertainty(self):
        state = make_state([30.0, 30.0], [20.0, 20.0],
                           cov=np.diag([4.0, 4.0, 9.0, 9.0]))
        out = ukf_update(state, [(0.0, 18.0)], CFG)
        assert out.covariance[2, 2] < state.covariance[2, 2]

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_linear_update_equals_kalman_filter(self, seed):
        rng = np.random.default_rng(seed)
        j = int(rng.integers(2, 6))
        mean = np.concatenate([rng.uniform(5.0, 120.0, j),
                               rng.uniform(0.0, 24.0, j)])
        a = rng.normal(size=(2 * j, 2 * j))
        cov = a @ a.T / (2 * j) + 0.1 * np.eye(2 * j)
        state = EstimatorState(mean=mean, covariance=cov)
        n_obs = int(rng.integers(1, 4))
        positions = rng.uniform(0.0, j * 20.0, n_obs)
        obs = [(float(p), float(rng.uniform(0.0, 24.0))) for p in positions]
        h = measurement_matrix(state, [p for p, _ in obs])
        y = np.array([v for _, v in obs])
        out = ukf_update(state, obs, CFG)
        mean_kf, cov_kf = classical_kf_update(mean, cov, h, y,
                                              CFG.measurement_noise)
        assert np.allclose(out.mean, mean_kf, atol=1e-8)
        assert np.allclose(out.covariance, cov_kf, atol=1e-8)
