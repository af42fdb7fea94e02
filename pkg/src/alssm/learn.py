"""Variational EM for the AL state-space model.

The M-step maximizes the expected complete-data log-likelihood ``q_objective``
one parameter block at a time, always using the latest values of the blocks
already updated. Every block except the asymmetry ``p`` has a closed-form
maximizer; ``p`` is updated by maximizing a tangent minorizer of its
(non-concave) objective, which reduces to a quartic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from alssm.alinf import InferenceConfig, SufficientStats, al_smoother, sufficient_stats
from alssm.errors import ConfigError, NumericalError, ParameterError
from alssm.lingauss import ModelParams, _as_obs, kalman_smoother

log = logging.getLogger(__name__)

PARAM_NAMES = ("A", "C", "mu", "p", "sigma", "b", "Q", "pi1", "Sigma1")
P_CLAMP = 1e-4
EIG_FLOOR = 1e-10
RIDGE = 1e-10

__all__ = [
    "LearnConfig",
    "MStepContext",
    "SufficientStats",
    "double_loop_em",
    "elbo",
    "gaussian_em",
    "h_of_p",
    "initial_params",
    "m_step",
    "m_step_closed_forms",
    "mstep_context",
    "p_update_mm",
    "q_objective",
    "quartic_coefficients",
    "single_loop_em",
    "surrogate_h",
]


@dataclass(frozen=True)
class LearnConfig:
    mode: str = "single_loop"
    fixed: frozenset = frozenset()
    outer_tol: float = 1e-5
    outer_max_iters: int = 500
    e_tol: float = 1e-6
    e_max_iters: int = 200
    m_tol: float = 1e-8
    m_max_iters: int = 100
    lambda_init: float = 1.0
    e_warm_start: bool = False

    def __post_init__(self):
        object.__setattr__(self, "fixed", frozenset(self.fixed))
        if self.mode not in ("single_loop", "double_loop"):
            raise ConfigError(f"unknown EM mode {self.mode!r}")
        unknown = self.fixed - set(PARAM_NAMES)
        if unknown:
            raise ConfigError(f"unknown parameter names in fixed mask: {sorted(unknown)}")
        if self.fixed >= set(PARAM_NAMES):
            log.debug("all parameters frozen; EM will return the initial guess")
        if self.outer_max_iters < 1 or self.e_max_iters < 1 or self.m_max_iters < 1:
            raise ConfigError("iteration caps must be at least 1")
        if not (self.outer_tol > 0 and self.e_tol > 0 and self.m_tol > 0):
            raise ConfigError("tolerances must be positive")

    def free(self, name: str) -> bool:
        return name not in self.fixed


# --------------------------------------------------------------------------
# objective

def _check_stats(stats: SufficientStats, y: np.ndarray):
    if stats.T != y.shape[0]:
        raise ParameterError(f"statistics cover {stats.T} steps but y has {y.shape[0]}")


def _transition_sums(stats: SufficientStats):
    xs, P = stats.x_smooth, stats.P
    return (
        P[1:].sum(axis=0),
        stats.P_cross.sum(axis=0),
        P[:-1].sum(axis=0),
        xs[1:].sum(axis=0),
        xs[:-1].sum(axis=0),
    )


def _transition_scatter(A, b, stats: SufficientStats) -> np.ndarray:
    """sum_k E[(x_k - A x_{k-1} - b)(x_k - A x_{k-1} - b)^T] over k = 2..T."""
    S11, S10, S00, s1, s0 = _transition_sums(stats)
    n = stats.T - 1
    M = (
        S11
        - S10 @ A.T
        - A @ S10.T
        + A @ S00 @ A.T
        - np.outer(s1, b)
        - np.outer(b, s1)
        + np.outer(A @ s0, b)
        + np.outer(b, A @ s0)
        + n * np.outer(b, b)
    )
    return 0.5 * (M + M.T)


def _initial_scatter(pi1, stats: SufficientStats) -> np.ndarray:
    x1 = stats.x_smooth[0]
    M = stats.P[0] - np.outer(x1, pi1) - np.outer(pi1, x1) + np.outer(pi1, pi1)
    return 0.5 * (M + M.T)


def _residuals(theta: ModelParams, stats: SufficientStats, y: np.ndarray):
    """Residual means ``y - C x - mu`` and second moments ``u`` under the smoothed moments."""
    e = y - stats.x_smooth @ theta.C.T - theta.mu
    var = np.einsum("ij,tjk,ik->ti", theta.C, stats.cov_smooth, theta.C)
    return e, e**2 + var


def _logdet_pd(M: np.ndarray, name: str) -> float:
    sign, ld = np.linalg.slogdet(M)
    if sign <= 0 or not np.isfinite(ld):
        raise NumericalError(f"{name} is singular")
    return ld


def q_objective(theta: ModelParams, stats: SufficientStats, y) -> float:
    """Expected complete-data log-likelihood, dropping terms that do not depend on ``theta``.

    The latent-scale prior and ``E[log lam]`` contributions are constant in ``theta`` and omitted.
    """
    y = _as_obs(y, theta.n_y)
    _check_stats(stats, y)
    T = stats.T
    q = 0.0
    if T > 1:
        M = _transition_scatter(theta.A, theta.b, stats)
        q -= 0.5 * np.trace(np.linalg.solve(theta.Q, M)) if np.all(np.isfinite(M)) else np.inf
        q -= 0.5 * (T - 1) * _logdet_pd(theta.Q, "Q")
    q -= 0.5 * np.trace(np.linalg.solve(theta.Sigma1, _initial_scatter(theta.pi1, stats)))
    q -= 0.5 * _logdet_pd(theta.Sigma1, "Sigma1")
    e, u = _residuals(theta, stats, y)
    p, s = theta.p, theta.sigma
    kappa = p * (1.0 - p)
    e2 = (
        (u * stats.e_lambda).sum(axis=0) * kappa / (2.0 * s**2)
        - e.sum(axis=0) * (0.5 - p) / s
        + stats.e_inv_lambda.sum(axis=0) * (0.5 - p) ** 2 / (2.0 * kappa)
    )
    q += float(np.sum(-e2 - T * np.log(s) + 0.5 * T * np.log(kappa)))
    return float(q)


def _state_entropy(stats: SufficientStats) -> float:
    """Entropy of the joint Gaussian smoothing distribution, factored backwards in time."""
    n = stats.x_smooth.shape[1]
    Ps, L = stats.cov_smooth, stats.L
    cond = Ps[:-1] - np.einsum("tij,tjk,tlk->til", L, Ps[1:], L)
    covs = np.concatenate([cond, Ps[-1:]], axis=0)
    sign, ld = np.linalg.slogdet(0.5 * (covs + np.swapaxes(covs, 1, 2)))
    if np.any(sign <= 0):
        raise NumericalError("smoothing distribution is degenerate")
    return float(0.5 * (ld.sum() + stats.T * n * (1.0 + math.log(2.0 * math.pi))))


def elbo(theta: ModelParams, stats: SufficientStats, y) -> float:
    """Evidence lower bound for the factorized posterior summarized by ``stats``.

    Differs from ``q_objective`` only by terms that depend on the variational
    factors, so it is the quantity that every E- and M-update can only increase.
    """
    if stats.lambda_shape is None:
        raise ParameterError("statistics carry no latent-scale posterior")
    y = _as_obs(y, theta.n_y)
    T, n_y = y.shape
    n_x = theta.n_x
    log2pi = math.log(2.0 * math.pi)
    const = -0.5 * T * (n_y + n_x) * log2pi
    const += T * n_y * math.log(0.5) - 0.5 * float(stats.e_inv_lambda.sum())
    const += T * float(np.sum(0.5 - 0.5 * np.log(stats.lambda_shape / (2.0 * math.pi))))
    return q_objective(theta, stats, y) + const + _state_entropy(stats)


# --------------------------------------------------------------------------
# closed-form block updates

def _floor_cov(M: np.ndarray) -> np.ndarray:
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    if w[0] >= EIG_FLOOR:
        return M
    w = np.maximum(w, EIG_FLOOR)
    M = (V * w) @ V.T
    return 0.5 * (M + M.T)


def update_sigma(theta: ModelParams, stats: SufficientStats, y) -> ModelParams:
    T = stats.T
    e, u = _residuals(theta, stats, y)
    kappa = theta.p * (1.0 - theta.p)
    B = (0.5 - theta.p) * (-e).sum(axis=0) / T
    disc = B**2 + 4.0 / T * (u * stats.e_lambda).sum(axis=0) * kappa
    if np.any(disc < 0):
        raise NumericalError("negative discriminant in the scale update")
    return theta.replace(sigma=0.5 * (B + np.sqrt(disc)))


def update_mu(theta: ModelParams, stats: SufficientStats, y) -> ModelParams:
    T = stats.T
    kappa = theta.p * (1.0 - theta.p)
    inv_r = stats.e_lambda * kappa / theta.sigma**2
    resid = y - stats.x_smooth @ theta.C.T
    mu = ((resid * inv_r).sum(axis=0) - T * (1.0 - 2.0 * theta.p) / (2.0 * theta.sigma)) / inv_r.sum(axis=0)
    return theta.replace(mu=mu)


def update_pi1(theta: ModelParams, stats: SufficientStats, y=None) -> ModelParams:
    return theta.replace(pi1=stats.x_smooth[0])


def update_Sigma1(theta: ModelParams, stats: SufficientStats, y=None) -> ModelParams:
    return theta.replace(Sigma1=_floor_cov(_initial_scatter(theta.pi1, stats)))


def update_A(theta: ModelParams, stats: SufficientStats, y=None) -> ModelParams:
    if stats.T < 2:
        return theta
    _, S10, S00, _, s0 = _transition_sums(stats)
    rhs = S10 - np.outer(theta.b, s0)
    if np.linalg.cond(S00) > 1e12:
        log.warning("near-singular state second moment in transition update; adding ridge %g", RIDGE)
        S00 = S00 + RIDGE * np.eye(S00.shape[0])
    return theta.replace(A=np.linalg.solve(S00, rhs.T).T)


def update_C(theta: ModelParams, stats: SufficientStats, y) -> ModelParams:
    xs, P = stats.x_smooth, stats.P
    kappa = theta.p * (1.0 - theta.p)
    inv_r = stats.e_lambda * kappa / theta.sigma**2
    C = np.empty_like(theta.C)
    for i in range(theta.n_y):
        G = np.einsum("t,tjk->jk", inv_r[:, i], P)
        h = ((y[:, i] - theta.mu[i]) * inv_r[:, i]) @ xs - (1.0 - 2.0 * theta.p[i]) / (2.0 * theta.sigma[i]) * xs.sum(axis=0)
        C[i] = np.linalg.solve(0.5 * (G + G.T), h)
    return theta.replace(C=C)


def update_Q(theta: ModelParams, stats: SufficientStats, y=None) -> ModelParams:
    if stats.T < 2:
        return theta
    return theta.replace(Q=_floor_cov(_transition_scatter(theta.A, theta.b, stats) / (stats.T - 1)))


def update_b(theta: ModelParams, stats: SufficientStats, y=None) -> ModelParams:
    if stats.T < 2:
        return theta
    _, _, _, s1, s0 = _transition_sums(stats)
    return theta.replace(b=(s1 - theta.A @ s0) / (stats.T - 1))


def update_Ab(theta: ModelParams, stats: SufficientStats, y=None) -> ModelParams:
    """Joint maximizer over ``(A, b)``; sequential block updates crawl when the state level is far from zero."""
    if stats.T < 2:
        return theta
    _, S10, S00, s1, s0 = _transition_sums(stats)
    n = stats.T - 1
    G = np.block([[S00, s0[:, None]], [s0[None, :], np.array([[float(n)]])]])
    H = np.hstack([S10, s1[:, None]])
    if np.linalg.cond(G) > 1e12:
        log.warning("near-singular regressor moment in transition update; adding ridge %g", RIDGE)
        G = G + RIDGE * np.eye(G.shape[0])
    W = np.linalg.solve(0.5 * (G + G.T), H.T).T
    return theta.replace(A=W[:, :-1], b=W[:, -1])


def _transition_updates(theta: ModelParams, stats: SufficientStats, fixed) -> ModelParams:
    if "A" not in fixed and "b" not in fixed:
        return update_Ab(theta, stats)
    if "A" not in fixed:
        return update_A(theta, stats)
    if "b" not in fixed:
        return update_b(theta, stats)
    return theta


CLOSED_FORM_UPDATES = (
    ("sigma", update_sigma),
    ("mu", update_mu),
    ("pi1", update_pi1),
    ("Sigma1", update_Sigma1),
    ("A", update_A),
    ("C", update_C),
    ("Q", update_Q),
    ("b", update_b),
)


def m_step_closed_forms(stats: SufficientStats, y, theta_old: ModelParams, mask=frozenset()) -> ModelParams:
    """Apply every unmasked closed-form block update in sequence (``p`` excluded); ``A`` and ``b`` move jointly when both are free."""
    y = _as_obs(y, theta_old.n_y)
    _check_stats(stats, y)
    theta = theta_old
    joint = "A" not in mask and "b" not in mask
    for name, fn in CLOSED_FORM_UPDATES:
        if name in mask:
            continue
        if joint and name == "A":
            theta = update_Ab(theta, stats)
        elif not (joint and name == "b"):
            theta = fn(theta, stats, y)
    return theta


# --------------------------------------------------------------------------
# asymmetry update

@dataclass(frozen=True)
class MStepContext:
    """Coefficients of the asymmetry objective
    ``h(p) = T/2 log p(1-p) - alpha1 (1/2-p)^2 / (2p(1-p)) - alpha2 p - alpha3 p(1-p)``.
    """

    alpha1: float
    alpha2: float
    alpha3: float

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.alpha3 > 0):
            raise ParameterError("alpha1 and alpha3 must be positive")

    def zeta1(self, p_anchor: float) -> float:
        return -(self.alpha2 + self.alpha3 * (1.0 - 2.0 * p_anchor))

    @property
    def zeta2(self) -> float:
        return -0.5 * self.alpha1


def mstep_context(theta: ModelParams, stats: SufficientStats, y, channel: int = 0) -> MStepContext:
    e, u = _residuals(theta, stats, y)
    i = channel
    s = theta.sigma[i]
    return MStepContext(
        alpha1=float(stats.e_inv_lambda[:, i].sum()),
        alpha2=float(e[:, i].sum() / s),
        alpha3=float((u[:, i] * stats.e_lambda[:, i]).sum() / (2.0 * s**2)),
    )


def _check_p(p):
    if not np.all((np.asarray(p) > 0) & (np.asarray(p) < 1)):
        raise ParameterError(f"asymmetry must lie in (0, 1), got {p}")


def h_of_p(ctx: MStepContext, T: int, p):
    _check_p(p)
    p = np.asarray(p, dtype=float)
    k = p * (1.0 - p)
    return 0.5 * T * np.log(k) - ctx.alpha1 * (0.5 - p) ** 2 / (2.0 * k) - ctx.alpha2 * p - ctx.alpha3 * k


def surrogate_h(ctx: MStepContext, T: int, p, p_anchor: float):
    """Concave minorizer of ``h`` touching it at ``p_anchor`` (the convex ``alpha3 p^2`` term is linearized)."""
    _check_p(p)
    _check_p(p_anchor)
    p = np.asarray(p, dtype=float)
    k = p * (1.0 - p)
    return (
        0.5 * T * np.log(k)
        - ctx.alpha1 * (0.5 - p) ** 2 / (2.0 * k)
        - ctx.alpha2 * p
        - ctx.alpha3 * p * (1.0 - 2.0 * p_anchor)
        - ctx.alpha3 * p_anchor**2
    )


def quartic_coefficients(ctx: MStepContext, T: int, p_anchor: float) -> np.ndarray:
    """Monic quartic whose roots are the stationary points of the surrogate."""
    z1, z2 = ctx.zeta1(p_anchor), ctx.zeta2
    if z1 == 0.0:
        raise ParameterError("the stationarity polynomial is cubic at this anchor; no monic quartic form")
    return np.array([1.0, T / z1 - 2.0, 1.0 - 1.5 * T / z1, (T + z2) / (2.0 * z1), -z2 / (4.0 * z1)])


def _stationarity_poly(ctx: MStepContext, T: int, p_anchor: float) -> np.ndarray:
    # 8 p^2 (1-p)^2 times the surrogate's derivative; same roots as the monic quartic
    # but well defined when zeta1 vanishes
    G = ctx.alpha2 + ctx.alpha3 * (1.0 - 2.0 * p_anchor)
    a1 = ctx.alpha1
    return np.array([-8.0 * G, 16.0 * G + 8.0 * T, -8.0 * G - 12.0 * T, 4.0 * T - 2.0 * a1, a1])


def p_update_mm(ctx: MStepContext, T: int, p_old: float) -> float:
    """One minorize-maximize step for the asymmetry; never decreases ``h``."""
    _check_p(p_old)
    coeffs = _stationarity_poly(ctx, T, p_old)
    dcoeffs = np.polyder(coeffs)
    roots = np.roots(coeffs)
    scale = max(1.0, float(np.max(np.abs(roots)))) if roots.size else 1.0
    cands = []
    for z in roots:
        if abs(z.imag) > 1e-6 * scale:
            continue
        x = float(z.real)
        for _ in range(3):
            d = np.polyval(dcoeffs, x)
            if d == 0:
                break
            x -= np.polyval(coeffs, x) / d
        if 0.0 < x < 1.0:
            cands.append(x)
    if cands:
        vals = [float(surrogate_h(ctx, T, c, p_old)) for c in cands]
        p_new = cands[int(np.argmax(vals))]
    else:
        log.warning("no interior stationary point of the asymmetry surrogate; using grid search")
        grid = np.linspace(P_CLAMP, 1.0 - P_CLAMP, 100001)
        p_new = float(grid[np.argmax(surrogate_h(ctx, T, grid, p_old))])
    return float(min(max(p_new, P_CLAMP), 1.0 - P_CLAMP))


def update_p(theta: ModelParams, stats: SufficientStats, y) -> ModelParams:
    p = theta.p.copy()
    for i in range(theta.n_y):
        p[i] = p_update_mm(mstep_context(theta, stats, y, i), stats.T, float(theta.p[i]))
    return theta.replace(p=p)


def m_step(stats: SufficientStats, y, theta_old: ModelParams, mask=frozenset()) -> ModelParams:
    """Closed-form block updates followed by the asymmetry step."""
    theta = m_step_closed_forms(stats, y, theta_old, mask)
    if "p" not in mask:
        theta = update_p(theta, stats, _as_obs(y, theta.n_y))
    return theta


# --------------------------------------------------------------------------
# EM drivers

def _rel_change(new: ModelParams, old: ModelParams, names) -> float:
    worst = 0.0
    for n in names:
        a, b = getattr(new, n), getattr(old, n)
        worst = max(worst, float(np.max(np.abs(a - b))) / max(float(np.max(np.abs(b))), 1e-3))
    return worst


def _finite(theta: ModelParams) -> bool:
    return all(np.all(np.isfinite(getattr(theta, n))) for n in PARAM_NAMES)


def _em(y, theta0: ModelParams, cfg: LearnConfig, e_cfg: InferenceConfig, m_iters: int, m_tol: float, warm: bool = True):
    y = _as_obs(y, theta0.n_y)
    free = [n for n in PARAM_NAMES if cfg.free(n)]
    theta = theta0
    e_lam = np.full((y.shape[0], theta0.n_y), cfg.lambda_init)
    passes = 0
    trace = []
    for it in range(cfg.outer_max_iters):
        try:
            res, vs, stats = al_smoother(theta, y, e_cfg, e_lambda0=e_lam)
        except NumericalError as exc:
            raise NumericalError(f"E-step failed at EM iteration {it}: {exc}", last_iterate=theta) from None
        passes += res.fb_passes
        if warm:
            e_lam = vs.e_lambda
        q_before = q_objective(theta, stats, y)
        new = theta
        m_cycles = 0
        try:
            for _ in range(m_iters):
                nxt = m_step(stats, y, new, cfg.fixed)
                m_cycles += 1
                done = _rel_change(nxt, new, free) < m_tol if free else True
                new = nxt
                if done:
                    break
        except (ParameterError, np.linalg.LinAlgError, NumericalError) as exc:
            raise NumericalError(f"M-step failed at EM iteration {it}: {exc}", last_iterate=theta) from None
        if not _finite(new):
            raise NumericalError(f"non-finite parameters at EM iteration {it}", last_iterate=theta)
        change = _rel_change(new, theta, free) if free else 0.0
        entry = {
            "iteration": it + 1,
            "fb_passes": passes,
            "e_iterations": res.fb_passes,
            "m_cycles": m_cycles,
            "q_before": q_before,
            "q": q_objective(new, stats, y),
            "elbo": elbo(new, stats, y),
            "rel_change": change,
        }
        for i in range(theta.n_y):
            entry[f"p_{i + 1}"] = float(new.p[i])
            entry[f"sigma_{i + 1}"] = float(new.sigma[i])
            entry[f"mu_{i + 1}"] = float(new.mu[i])
        trace.append(entry)
        theta = new
        if change < cfg.outer_tol:
            break
    else:
        log.info("EM stopped at the %d-iteration cap", cfg.outer_max_iters)
    return theta, trace


def single_loop_em(y, theta0: ModelParams, cfg: LearnConfig = LearnConfig()):
    """One forward-backward pass and one sweep of block updates per iteration.

    Returns the final parameters and a per-iteration trace (cumulative
    forward-backward passes, objective before and after the M-step, parameter change).
    """
    e_cfg = InferenceConfig(tol=cfg.e_tol, max_iters=1, lambda_init=cfg.lambda_init)
    return _em(y, theta0, cfg, e_cfg, 1, cfg.m_tol)


def double_loop_em(y, theta0: ModelParams, cfg: LearnConfig = LearnConfig(mode="double_loop")):
    """Classic variational EM: converge the smoother, then cycle the M-step to convergence.

    Each E-step starts from ``lambda_init`` unless ``cfg.e_warm_start``; with warm starts and both
    inner caps at 1 the iterates coincide with ``single_loop_em``.
    """
    e_cfg = InferenceConfig(tol=cfg.e_tol, max_iters=cfg.e_max_iters, lambda_init=cfg.lambda_init)
    return _em(y, theta0, cfg, e_cfg, cfg.m_max_iters, cfg.m_tol, warm=cfg.e_warm_start)


def learn(y, theta0: ModelParams, cfg: LearnConfig = LearnConfig()):
    if cfg.mode == "single_loop":
        return single_loop_em(y, theta0, cfg)
    return double_loop_em(y, theta0, cfg)


# --------------------------------------------------------------------------
# Gaussian-noise EM (baselines)

@dataclass
class GaussianFit:
    theta: ModelParams
    R: np.ndarray
    m: np.ndarray
    trace: list = field(default_factory=list)


def gaussian_em(
    y,
    theta0: ModelParams,
    R0,
    m0=None,
    fixed=frozenset(),
    tol: float = 1e-5,
    max_iters: int = 500,
) -> GaussianFit:
    """EM for the same linear dynamics with Gaussian measurement noise ``N(m, diag(R))``.

    ``fixed`` may name any transition block plus ``"R"`` and ``"m"``.
    The AL fields of ``theta`` are carried along untouched.
    """
    y = _as_obs(y, theta0.n_y)
    T = y.shape[0]
    R = np.broadcast_to(np.asarray(R0, dtype=float), (theta0.n_y,)).copy()
    m = np.zeros(theta0.n_y) if m0 is None else np.broadcast_to(np.asarray(m0, dtype=float), (theta0.n_y,)).copy()
    theta = theta0
    free = [n for n in ("A", "C", "b", "Q", "pi1", "Sigma1") if n not in fixed]
    trace = []
    for it in range(max_iters):
        res = kalman_smoother(theta, y, R, m)
        xs, Ps, L = res.mean, res.cov, res.extras["L"]
        ones = np.ones((T, theta.n_y))
        stats = sufficient_stats(theta, xs, Ps, L, ones, ones)
        new = theta
        if "pi1" not in fixed:
            new = update_pi1(new, stats)
        if "Sigma1" not in fixed:
            new = update_Sigma1(new, stats)
        new = _transition_updates(new, stats, fixed)
        if "C" not in fixed:
            S = stats.P.sum(axis=0)
            rhs = (y - m).T @ xs
            new = new.replace(C=np.linalg.solve(S, rhs.T).T)
        if "Q" not in fixed:
            new = update_Q(new, stats)
        e = y - xs @ new.C.T
        var = np.einsum("ij,tjk,ik->ti", new.C, Ps, new.C)
        m_new = m if "m" in fixed else e.mean(axis=0)
        R_new = R if "R" in fixed else np.maximum(((e - m_new) ** 2 + var).mean(axis=0), EIG_FLOOR)
        change = _rel_change(new, theta, free) if free else 0.0
        change = max(
            change,
            float(np.max(np.abs(R_new - R))) / max(float(np.max(np.abs(R))), 1e-3),
            float(np.max(np.abs(m_new - m))) / max(float(np.max(np.abs(m))), 1e-3),
        )
        trace.append({"iteration": it + 1, "fb_passes": it + 1, "rel_change": change})
        theta, R, m = new, R_new, m_new
        if not (_finite(theta) and np.all(np.isfinite(R)) and np.all(np.isfinite(m))):
            raise NumericalError(f"non-finite parameters at Gaussian EM iteration {it}", last_iterate=theta)
        if change < tol:
            break
    return GaussianFit(theta, R, m, trace)


# --------------------------------------------------------------------------
# initialization

def initial_params(y, n_x: int, warm_start_iters: int = 0, fixed=frozenset(), **overrides) -> ModelParams:
    """Data-driven starting point for EM; any field may be overridden by keyword.

    With ``warm_start_iters > 0`` the transition blocks not in ``fixed`` are first
    fitted by Gaussian-noise EM, and the AL location and scale are set from the
    smoothed residuals (``p = 0.5``, location = median, scale = half the mean absolute deviation).
    """
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    T, n_y = y.shape
    C = overrides.get("C")
    if C is None:
        yc = y - y.mean(axis=0)
        if n_y >= n_x:
            U, s, Vt = np.linalg.svd(yc / math.sqrt(max(T, 1)), full_matrices=False)
            C = Vt[:n_x].T * np.maximum(s[:n_x], 1e-3)
        else:
            C = np.ones((n_y, n_x)) / n_x
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = np.diff(y, axis=0) if T > 1 else y - y.mean(axis=0)
    mad = np.median(np.abs(d - np.median(d, axis=0)), axis=0)
    sigma = np.maximum(mad / (2.0 * math.log(2.0)), 1e-3)
    A = 0.9 * np.eye(n_x)
    if "A" not in overrides and n_y >= n_x and T > n_x + 2:
        # lag-one regression of the back-projected observations
        z = y @ np.linalg.pinv(C).T
        z = z - z.mean(axis=0)
        A_ls, *_ = np.linalg.lstsq(z[:-1], z[1:], rcond=None)
        if np.all(np.isfinite(A_ls)):
            A = A_ls.T
    fields = {
        "A": A,
        "C": C,
        "b": np.zeros(n_x),
        "Q": 0.1 * np.eye(n_x),
        "mu": np.zeros(n_y),
        "p": np.full(n_y, 0.5),
        "sigma": sigma,
        "pi1": np.linalg.pinv(C) @ y[0],
        "Sigma1": np.eye(n_x),
    }
    for k, v in overrides.items():
        if k not in fields:
            raise ParameterError(f"unknown parameter {k!r}")
        fields[k] = v
    theta = ModelParams(**fields)
    if warm_start_iters <= 0:
        return theta
    fit = gaussian_em(
        y,
        theta,
        R0=(2.0 * theta.sigma) ** 2,
        m0=theta.mu,
        fixed=(frozenset(fixed) | frozenset(overrides)) & {"A", "C", "b", "Q", "pi1", "Sigma1"},
        max_iters=warm_start_iters,
    )
    res = kalman_smoother(fit.theta, y, fit.R, fit.m)
    e = y - res.mean @ fit.theta.C.T
    mu = np.median(e, axis=0)
    al = {"mu": mu, "p": np.full(n_y, 0.5), "sigma": np.maximum(np.mean(np.abs(e - mu), axis=0) / 2.0, 1e-3)}
    for k in ("mu", "p", "sigma"):
        if k in overrides or k in fixed:
            al[k] = getattr(theta, k)
    return fit.theta.replace(**al)
