import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from alssm.alinf import InferenceConfig, al_smoother
from alssm.dists import ALParams
from alssm.errors import ConfigError, ParameterError
from alssm.learn import (
    PARAM_NAMES,
    LearnConfig,
    MStepContext,
    double_loop_em,
    elbo,
    gaussian_em,
    h_of_p,
    initial_params,
    learn,
    m_step,
    m_step_closed_forms,
    mstep_context,
    p_update_mm,
    q_objective,
    quartic_coefficients,
    single_loop_em,
    surrogate_h,
    update_A,
    update_Ab,
    update_b,
    update_C,
    update_mu,
    update_pi1,
    update_Q,
    update_sigma,
    update_Sigma1,
)
from alssm.lingauss import ModelParams, kalman_filter

from conftest import random_model, random_stats, stationarity_residual

UPDATES = {
    "sigma": (update_sigma, ("sigma",)),
    "mu": (update_mu, ("mu",)),
    "pi1": (update_pi1, ("pi1",)),
    "Sigma1": (update_Sigma1, ("Sigma1",)),
    "A": (update_A, ("A",)),
    "C": (update_C, ("C",)),
    "Q": (update_Q, ("Q",)),
    "b": (update_b, ("b",)),
    "Ab": (update_Ab, ("A", "b")),
}


def simulate(theta: ModelParams, T: int, seed: int) -> np.ndarray:
    from alssm.dists import al_sample

    rng = np.random.default_rng(seed)
    x = np.empty((T, theta.n_x))
    x[0] = rng.multivariate_normal(theta.pi1, theta.Sigma1)
    for k in range(1, T):
        x[k] = theta.A @ x[k - 1] + theta.b + rng.multivariate_normal(np.zeros(theta.n_x), theta.Q)
    noise = np.column_stack([al_sample(al, seed + 17 * i, T) for i, al in enumerate(theta.al)])
    return x @ theta.C.T + noise


def gaussian_loglik(theta: ModelParams, y, R, m) -> float:
    res = kalman_filter(theta, y, R, m)
    ll = 0.0
    for k in range(y.shape[0]):
        S = theta.C @ res.predicted_cov[k] @ theta.C.T + np.diag(R)
        v = y[k] - theta.C @ res.predicted_mean[k] - m
        ll -= 0.5 * (np.linalg.slogdet(2 * np.pi * S)[1] + v @ np.linalg.solve(S, v))
    return ll


class TestObjective:
    def test_scalar_two_step_by_hand(self):
        theta = ModelParams.build(A=[[0.7]], C=[[1.5]], Q=[[0.3]], al=ALParams(0.2, 0.3, 0.6), b=[0.1],
                                  pi1=[0.5], Sigma1=[[2.0]])
        y = np.array([[1.0], [-0.4]])
        _, _, stats = al_smoother(theta, y)
        xs, Ps = stats.x_smooth[:, 0], stats.cov_smooth[:, 0, 0]
        E11 = Ps[1] + xs[1] ** 2
        E00 = Ps[0] + xs[0] ** 2
        E10 = stats.P_cross[0, 0, 0]
        a, b, Q = 0.7, 0.1, 0.3
        trans = E11 - 2 * a * E10 - 2 * b * xs[1] + a * a * E00 + 2 * a * b * xs[0] + b * b
        q = -0.5 * trans / Q - 0.5 * math.log(Q)
        q += -0.5 * (E00 - 2 * 0.5 * xs[0] + 0.25) / 2.0 - 0.5 * math.log(2.0)
        p, s, mu, c = 0.3, 0.6, 0.2, 1.5
        kap = p * (1 - p)
        for k in range(2):
            e = y[k, 0] - c * xs[k] - mu
            u = e**2 + c * c * Ps[k]
            el, eil = stats.e_lambda[k, 0], stats.e_inv_lambda[k, 0]
            q += -kap * el * u / (2 * s * s) + (0.5 - p) * e / s - eil * (0.5 - p) ** 2 / (2 * kap)
            q += -math.log(s) + 0.5 * math.log(kap)
        assert q_objective(theta, stats, y) == pytest.approx(q, rel=1e-12)

    def test_rejects_mismatched_stats(self):
        rng = np.random.default_rng(0)
        theta, stats, y = random_stats(rng, 1, 1, T=10)
        with pytest.raises(ParameterError):
            q_objective(theta, stats, y[:5])

    def test_elbo_needs_scale_posterior(self):
        rng = np.random.default_rng(0)
        theta, stats, y = random_stats(rng, 1, 1, T=10)
        stats.lambda_shape = None
        with pytest.raises(ParameterError):
            elbo(theta, stats, y)


class TestStationarity:
    @pytest.mark.parametrize("name", list(UPDATES))
    @pytest.mark.parametrize("seed", range(4))
    def test_update_zeroes_partials(self, name, seed):
        rng = np.random.default_rng(seed)
        n_x, n_y = [(1, 1), (2, 3), (3, 2), (2, 1)][seed]
        theta, stats, y = random_stats(rng, n_x, n_y)
        fn, blocks = UPDATES[name]
        new = fn(theta, stats, y)
        objective = lambda t: q_objective(t, stats, y)  # noqa: E731
        for block in blocks:
            assert stationarity_residual(new, block, objective) < 1e-5
            assert stationarity_residual(theta, block, objective) > 1e-5

    def test_closed_forms_never_decrease_q(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            theta, stats, y = random_stats(rng, 2, 2)
            assert q_objective(m_step_closed_forms(stats, y, theta), stats, y) >= q_objective(theta, stats, y) - 1e-9

    def test_joint_update_dominates_sequential(self):
        rng = np.random.default_rng(3)
        theta, stats, y = random_stats(rng, 2, 2)
        joint = update_Ab(theta, stats)
        seq = update_b(update_A(theta, stats), stats)
        assert q_objective(joint, stats, y) >= q_objective(seq, stats, y) - 1e-9


class TestAsymmetryStep:
    @settings(max_examples=200, deadline=None)
    @given(
        T=st.integers(5, 3000),
        a1=st.floats(0.5, 15.0),
        a2=st.floats(-4.0, 4.0),
        a3=st.floats(0.02, 8.0),
        p_old=st.floats(0.02, 0.98),
    )
    def test_mm_ascent_and_stationarity(self, T, a1, a2, a3, p_old):
        ctx = MStepContext(alpha1=T * a1, alpha2=T * a2, alpha3=T * a3)
        # the monic form is ill-scaled when its leading coefficient nearly vanishes
        assume(abs(ctx.zeta1(p_old)) > 1e-3 * T)
        p_new = p_update_mm(ctx, T, p_old)
        assert h_of_p(ctx, T, p_new) >= h_of_p(ctx, T, p_old) - 1e-10
        assert abs(np.polyval(quartic_coefficients(ctx, T, p_old), p_new)) < 1e-8

    def test_surrogate_minorizes_and_touches(self):
        ctx = MStepContext(alpha1=300.0, alpha2=-40.0, alpha3=120.0)
        grid = np.linspace(0.01, 0.99, 999)
        for anchor in (0.1, 0.4, 0.8):
            assert np.all(surrogate_h(ctx, 100, grid, anchor) <= h_of_p(ctx, 100, grid) + 1e-9)
            assert surrogate_h(ctx, 100, anchor, anchor) == pytest.approx(h_of_p(ctx, 100, anchor), rel=1e-12)

    def test_matches_grid_argmax(self):
        ctx = MStepContext(alpha1=800.0, alpha2=150.0, alpha3=90.0)
        grid = np.linspace(1e-5, 1 - 1e-5, 100001)
        for anchor in (0.2, 0.5, 0.7):
            best = grid[np.argmax(surrogate_h(ctx, 200, grid, anchor))]
            assert p_update_mm(ctx, 200, anchor) == pytest.approx(best, abs=1e-4)

    def test_context_from_stats(self):
        rng = np.random.default_rng(5)
        theta, stats, y = random_stats(rng, 1, 2)
        ctx = mstep_context(theta, stats, y, channel=1)
        assert ctx.alpha1 == pytest.approx(stats.e_inv_lambda[:, 1].sum())
        q = lambda p: q_objective(theta.replace(p=np.array([theta.p[0], p])), stats, y)  # noqa: E731
        # h differs from q by a constant in p
        diffs = [q(p) - h_of_p(ctx, stats.T, p) for p in (0.2, 0.5, 0.7)]
        np.testing.assert_allclose(diffs, diffs[0], rtol=1e-10)

    @pytest.mark.parametrize("kwargs", [{"alpha1": 0.0, "alpha2": 1.0, "alpha3": 1.0},
                                        {"alpha1": 1.0, "alpha2": 1.0, "alpha3": -1.0}])
    def test_context_validation(self, kwargs):
        with pytest.raises(ParameterError):
            MStepContext(**kwargs)

    def test_quartic_undefined_when_leading_term_vanishes(self):
        with pytest.raises(ParameterError):
            quartic_coefficients(MStepContext(1.0, 0.0, 1.0), 5, 0.5)

    def test_rejects_boundary_anchor(self):
        with pytest.raises(ParameterError):
            p_update_mm(MStepContext(1.0, 0.0, 1.0), 10, 1.0)


@pytest.fixture(scope="module")
def scalar_data():
    theta = ModelParams.build(A=[[0.9]], C=[[1.0]], Q=[[0.1]], al=ALParams(0.0, 0.25, 0.3), b=[0.2])
    return theta, simulate(theta, 300, 4)


class TestEM:
    def test_elbo_monotone_single_loop(self, scalar_data):
        theta, y = scalar_data
        theta0 = initial_params(y, 1)
        _, trace = single_loop_em(y, theta0, LearnConfig(outer_max_iters=60, outer_tol=1e-12))
        values = np.array([t["elbo"] for t in trace])
        assert np.all(np.diff(values) >= -1e-8 * np.abs(values).max())

    def test_double_loop_ascent(self, scalar_data):
        theta, y = scalar_data
        theta0 = initial_params(y, 1)
        _, trace = double_loop_em(y, theta0, LearnConfig(mode="double_loop", outer_max_iters=15, e_tol=1e-9))
        values = np.array([t["elbo"] for t in trace])
        assert np.all(np.diff(values) >= -1e-6 * np.abs(values).max())
        assert all(t["q"] >= t["q_before"] - 1e-9 for t in trace)

    def test_single_equals_double_with_unit_caps(self, scalar_data):
        _, y = scalar_data
        theta0 = initial_params(y, 1)
        a, ta = single_loop_em(y, theta0, LearnConfig(outer_max_iters=20, outer_tol=1e-12))
        cfg = LearnConfig(mode="double_loop", outer_max_iters=20, outer_tol=1e-12, e_max_iters=1, m_max_iters=1,
                          e_warm_start=True)
        b, tb = double_loop_em(y, theta0, cfg)
        for name in PARAM_NAMES:
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        assert [t["fb_passes"] for t in ta] == [t["fb_passes"] for t in tb]

    def test_fixed_blocks_are_bit_identical(self, scalar_data):
        _, y = scalar_data
        theta0 = initial_params(y, 1)
        fixed = {"A", "Q", "p"}
        out, _ = learn(y, theta0, LearnConfig(fixed=fixed, outer_max_iters=10))
        for name in fixed:
            assert np.array_equal(getattr(out, name), getattr(theta0, name))
        assert not np.array_equal(out.sigma, theta0.sigma)

    def test_all_fixed_returns_initial(self, scalar_data):
        _, y = scalar_data
        theta0 = initial_params(y, 1)
        out, trace = learn(y, theta0, LearnConfig(fixed=PARAM_NAMES))
        assert out is theta0 and len(trace) == 1

    def test_recovers_asymmetry_roughly(self, scalar_data):
        theta, y = scalar_data
        theta0 = initial_params(y, 1, warm_start_iters=20)
        out, _ = learn(y, theta0, LearnConfig(fixed={"C"}, outer_max_iters=300))
        assert abs(out.p[0] - 0.25) < 0.12
        assert abs(out.A[0, 0] - 0.9) < 0.1

    def test_m_step_mask(self):
        rng = np.random.default_rng(2)
        theta, stats, y = random_stats(rng, 2, 2)
        out = m_step(stats, y, theta, mask=frozenset({"C", "p", "mu"}))
        for name in ("C", "p", "mu"):
            assert np.array_equal(getattr(out, name), getattr(theta, name))


class TestLearnConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"mode": "triple"}, {"fixed": {"Z"}}, {"outer_max_iters": 0}, {"e_tol": 0.0}, {"m_max_iters": 0}],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ConfigError):
            LearnConfig(**kwargs)

    def test_fixed_is_frozen(self):
        cfg = LearnConfig(fixed=["A"])
        assert cfg.fixed == frozenset({"A"}) and not cfg.free("A") and cfg.free("C")


class TestGaussianEM:
    def test_recovers_gaussian_noise(self):
        rng = np.random.default_rng(1)
        T = 2000
        x = np.zeros(T)
        for k in range(1, T):
            x[k] = 0.8 * x[k - 1] + np.sqrt(0.2) * rng.standard_normal()
        y = (x + 0.3 + np.sqrt(0.5) * rng.standard_normal(T))[:, None]
        theta0 = ModelParams.build(A=[[0.5]], C=[[1.0]], Q=[[0.5]], al=ALParams(0, 0.5, 1))
        fit = gaussian_em(y, theta0, R0=1.0, fixed={"C", "b"}, max_iters=500, tol=1e-7)
        assert fit.theta.A[0, 0] == pytest.approx(0.8, abs=0.06)
        assert fit.R[0] == pytest.approx(0.5, abs=0.1)
        assert fit.m[0] == pytest.approx(0.3, abs=0.1)

    def test_likelihood_increases(self):
        rng = np.random.default_rng(2)
        theta = random_model(rng, 2, 2)
        y = rng.standard_normal((100, 2))
        lls = []
        R, m = np.ones(2), np.zeros(2)
        for iters in (1, 5, 25):
            fit = gaussian_em(y, theta, R0=R, m0=m, max_iters=iters, tol=1e-12)
            lls.append(gaussian_loglik(fit.theta, y, fit.R, fit.m))
        assert lls[0] <= lls[1] + 1e-8 and lls[1] <= lls[2] + 1e-8


class TestInitialParams:
    def test_overrides_and_shapes(self):
        y = np.random.default_rng(0).standard_normal((50, 3))
        theta = initial_params(y, 2, A=0.5 * np.eye(2))
        assert theta.C.shape == (3, 2)
        np.testing.assert_array_equal(theta.A, 0.5 * np.eye(2))

    def test_unknown_override(self):
        with pytest.raises(ParameterError):
            initial_params(np.zeros((10, 1)), 1, nonsense=1.0)

    def test_warm_start_respects_fixed(self):
        y = np.cumsum(np.random.default_rng(0).standard_normal(200))[:, None]
        theta = initial_params(y, 1, warm_start_iters=10, fixed={"A"}, A=[[1.0]], C=[[1.0]])
        assert theta.A[0, 0] == 1.0 and theta.p[0] == 0.5
        assert theta.sigma[0] > 0
