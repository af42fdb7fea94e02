import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alssm.alinf import sufficient_stats
from alssm.dists import ALParams
from alssm.errors import ParameterError
from alssm.lingauss import (
    AdaptiveFilterConfig,
    GaussianBelief,
    ModelParams,
    adaptive_filter,
    kalman_filter,
    kalman_smoother,
    predict_step,
    rts_backward_pass,
    update_step,
)

from conftest import condition, joint_gaussian, random_model


class TestModelParams:
    def test_build_and_round_trip(self):
        theta = ModelParams.build(A=[[0.9]], C=[[1.0], [2.0]], Q=[[0.1]], al=ALParams(0.1, 0.3, 0.4))
        assert theta.n_x == 1 and theta.n_y == 2
        assert ModelParams.from_dict(theta.to_dict()).to_dict() == theta.to_dict()
        assert theta.al == (ALParams(0.1, 0.3, 0.4),) * 2

    def test_arrays_are_read_only(self):
        theta = ModelParams.build(A=[[0.9]], C=[[1.0]], Q=[[0.1]], al=ALParams(0, 0.3, 0.4))
        with pytest.raises(ValueError):
            theta.A[0, 0] = 2.0

    @pytest.mark.parametrize(
        "change",
        [
            {"A": np.eye(2)},
            {"Q": [[1.0, 0.5], [0.0, 1.0]]},
            {"Q": [[-1.0]]},
            {"p": [1.0]},
            {"sigma": [0.0]},
            {"mu": [np.nan]},
            {"b": [[0.0]]},
        ],
    )
    def test_rejects_invalid(self, change):
        theta = ModelParams.build(A=[[0.9]], C=[[1.0]], Q=[[0.1]], al=ALParams(0, 0.3, 0.4))
        with pytest.raises(ParameterError):
            theta.replace(**change)

    def test_from_dict_errors(self):
        d = ModelParams.build(A=[[0.9]], C=[[1.0]], Q=[[0.1]], al=ALParams(0, 0.3, 0.4)).to_dict()
        with pytest.raises(ParameterError):
            ModelParams.from_dict({k: v for k, v in d.items() if k != "Q"})
        with pytest.raises(ParameterError):
            ModelParams.from_dict({**d, "n_x": 3})


class TestSingleStep:
    def test_predict(self):
        theta = ModelParams.build(A=[[0.5, 0.1], [0.0, 0.8]], C=[[1.0, 0.0]], Q=np.eye(2) * 0.2,
                                  al=ALParams(0, 0.5, 1), b=[1.0, -1.0])
        prev = GaussianBelief([1.0, 2.0], [[1.0, 0.2], [0.2, 0.5]])
        out = predict_step(theta, prev)
        np.testing.assert_allclose(out.mean, theta.A @ prev.mean + theta.b)
        np.testing.assert_allclose(out.cov, theta.A @ prev.cov @ theta.A.T + theta.Q)

    def test_update_scalar_hand_values(self):
        post, cache = update_step(GaussianBelief([0.0], [[2.0]]), [[1.0]], [3.0], [1.0], [[2.0]])
        # gain 2/(2+2) = 0.5, innovation 3 - 0 - 1 = 2
        np.testing.assert_allclose(post.mean, [1.0])
        np.testing.assert_allclose(post.cov, [[1.0]])
        np.testing.assert_allclose(cache.K, [[0.5]])
        np.testing.assert_allclose(cache.innovation, [2.0])

    def test_update_rejects_non_diagonal_noise(self):
        with pytest.raises(ParameterError):
            update_step(GaussianBelief([0.0, 0.0], np.eye(2)), np.eye(2), [1.0, 1.0], [0.0, 0.0], [[1.0, 0.1], [0.1, 1.0]])

    def test_update_rejects_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            update_step(GaussianBelief([0.0], [[1.0]]), [[1.0]], [1.0, 2.0], [0.0], [[1.0]])

    def test_rts_rejects_misaligned(self):
        with pytest.raises(ParameterError):
            rts_backward_pass([GaussianBelief([0.0], [[1.0]])], [], [[1.0]])


class TestAgainstJointGaussian:
    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("T", [1, 2, 4, 6])
    def test_filter_and_smoother_moments(self, seed, T):
        rng = np.random.default_rng(seed)
        nx, ny = [(1, 1), (2, 1), (2, 3), (3, 2), (1, 2), (2, 2)][seed]
        theta = random_model(rng, nx, ny)
        R = rng.uniform(0.1, 1.0, ny)
        m = rng.normal(0, 0.3, ny)
        y = rng.standard_normal((T, ny))
        mx, my, Sx, Sy, Sxy = joint_gaussian(theta, T, R, m)
        sm = kalman_smoother(theta, y, R, m)
        mean, cov = condition(mx, my, Sx, Sy, Sxy, y.ravel())
        np.testing.assert_allclose(sm.mean.ravel(), mean, atol=1e-8)
        for k in range(T):
            np.testing.assert_allclose(sm.cov[k], cov[k * nx : (k + 1) * nx, k * nx : (k + 1) * nx], atol=1e-8)
        if T > 1:
            stats = sufficient_stats(theta, sm.mean, sm.cov, sm.extras["L"], np.ones((T, ny)), np.ones((T, ny)))
            for k in range(1, T):
                cross = cov[k * nx : (k + 1) * nx, (k - 1) * nx : k * nx] + np.outer(mean[k * nx : (k + 1) * nx],
                                                                                   mean[(k - 1) * nx : k * nx])
                np.testing.assert_allclose(stats.P_cross[k - 1], cross, atol=1e-8)
        filt = kalman_filter(theta, y, R, m)
        for k in range(T):
            sub = slice(0, (k + 1) * ny)
            Sxy_k = Sxy[:, sub]
            G = np.linalg.solve(Sy[sub, sub], Sxy_k.T).T
            fm = mx + G @ (y[: k + 1].ravel() - my[sub])
            fc = Sx - G @ Sxy_k.T
            blk = slice(k * nx, (k + 1) * nx)
            np.testing.assert_allclose(filt.mean[k], fm[blk], atol=1e-8)
            np.testing.assert_allclose(filt.cov[k], fc[blk, blk], atol=1e-8)

    def test_single_step_pipeline_matches_batch(self):
        rng = np.random.default_rng(9)
        theta = random_model(rng, 2, 2)
        y = rng.standard_normal((5, 2))
        R, m = np.array([0.3, 0.5]), np.array([0.1, -0.2])
        prior = GaussianBelief(theta.pi1, theta.Sigma1)
        filtered, predicted = [], []
        for k in range(5):
            pred = prior if k == 0 else predict_step(theta, filtered[-1])
            post, _ = update_step(pred, theta.C, y[k], m, np.diag(R))
            predicted.append(pred)
            filtered.append(post)
        smoothed, _ = rts_backward_pass(filtered, predicted, theta.A)
        batch = kalman_smoother(theta, y, R, m)
        np.testing.assert_allclose([s.mean for s in smoothed], batch.mean, atol=1e-12)
        np.testing.assert_allclose([s.cov for s in smoothed], batch.cov, atol=1e-12)


class TestAdaptiveFilter:
    def test_uses_base_variance_before_window_fills(self):
        rng = np.random.default_rng(0)
        theta = ModelParams.build(A=[[1.0]], C=[[1.0]], Q=[[0.05]], al=ALParams(0, 0.5, 1))
        y = rng.standard_normal((40, 1))
        cfg = AdaptiveFilterConfig(n_win=30, base_variance=0.5)
        ad = adaptive_filter(cfg, theta, y)
        kf = kalman_filter(theta, y, 0.5)
        np.testing.assert_allclose(ad.mean[:30], kf.mean[:30], atol=1e-12)
        assert not np.allclose(ad.mean[30:], kf.mean[30:])

    def test_window_estimate_is_floored(self):
        theta = ModelParams.build(A=[[1.0]], C=[[1.0]], Q=[[1.0]], al=ALParams(0, 0.5, 1))
        y = np.zeros((20, 1))
        res = adaptive_filter(AdaptiveFilterConfig(n_win=3, base_variance=0.5, variance_floor=1e-3), theta, y)
        assert np.all(res.extras["r"][3:] >= 1e-3)
        assert np.all(np.isfinite(res.mean))

    @pytest.mark.parametrize("kwargs", [{"n_win": 0}, {"base_variance": 0.0}, {"variance_floor": -1.0}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ParameterError):
            AdaptiveFilterConfig(**kwargs)


class TestProperties:
    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), T=st.integers(2, 30))
    def test_smoothed_covariance_below_filtered(self, seed, T):
        rng = np.random.default_rng(seed)
        theta = random_model(rng, 2, 1)
        y = rng.standard_normal((T, 1))
        sm = kalman_smoother(theta, y, 0.5)
        for k in range(T):
            gap = sm.filtered_cov[k] - sm.cov[k]
            assert np.linalg.eigvalsh(0.5 * (gap + gap.T))[0] >= -1e-10
            assert np.linalg.eigvalsh(sm.cov[k])[0] > 0
        np.testing.assert_allclose(sm.mean[-1], sm.filtered_mean[-1], atol=1e-12)

    def test_rejects_bad_observation_shape(self):
        theta = ModelParams.build(A=[[1.0]], C=[[1.0], [1.0]], Q=[[1.0]], al=ALParams(0, 0.5, 1))
        with pytest.raises(ParameterError):
            kalman_filter(theta, np.zeros((5, 3)), 1.0)
        with pytest.raises(ParameterError):
            kalman_filter(theta, np.zeros((5, 2)), np.ones((4, 2)))
