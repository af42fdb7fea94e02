"""Variational inference for the AL state-space model.

Each measurement is a Gaussian scale mixture: given a latent scale ``lam`` the
noise is ``N(mu + (1/2 - p) sigma / (lam p(1-p)), sigma^2 / (lam p(1-p)))``
and ``lam ~ InvGamma(1, 1/2)``. Mean-field updates alternate a Gaussian pass
over the states (with per-step effective noise) and closed-form
inverse-Gaussian updates of the scales.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from alssm import _kernels as K
from alssm.dists import ALParams
from alssm.errors import ParameterError
from alssm.lingauss import ModelParams, RunResult, _as_obs, _model_arrays

log = logging.getLogger(__name__)

SMOOTHER_MAX_ITERS = 200
FILTER_MAX_ITERS = 50


@dataclass(frozen=True)
class InferenceConfig:
    """``max_iters=None`` selects 200 for smoother loops and 50 for per-step filter loops."""

    tol: float = 1e-6
    max_iters: int | None = None
    lambda_init: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ParameterError("convergence tolerance must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise ParameterError("max_iters must be at least 1")
        if not self.lambda_init > 0:
            raise ParameterError("initial E[lambda] must be positive")

    def smoother_iters(self) -> int:
        return SMOOTHER_MAX_ITERS if self.max_iters is None else self.max_iters

    def filter_iters(self) -> int:
        return FILTER_MAX_ITERS if self.max_iters is None else self.max_iters


@dataclass
class VariationalState:
    """Per-step scale expectations and the effective Gaussian noise they imply; arrays are ``(T, n_y)``."""

    e_lambda: np.ndarray
    e_inv_lambda: np.ndarray
    u: np.ndarray
    m: np.ndarray
    r: np.ndarray


@dataclass
class SufficientStats:
    """Smoothed moments consumed by the M-step.

    ``P[k] = E[x_k x_k^T]`` and ``P_cross[k-1] = E[x_k x_{k-1}^T]``.
    ``lambda_shape`` is the per-channel shape of the inverse-Gaussian scale posteriors.
    """

    x_smooth: np.ndarray
    cov_smooth: np.ndarray
    P: np.ndarray
    P_cross: np.ndarray
    L: np.ndarray
    u: np.ndarray
    e_lambda: np.ndarray
    e_inv_lambda: np.ndarray
    lambda_shape: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.x_smooth.shape[0]


def effective_noise(al: ALParams, e_lambda_k: float) -> tuple[float, float]:
    """Noise mean and variance of the Gaussian likelihood at a fixed ``E[lam]``."""
    if not e_lambda_k > 0:
        raise ParameterError(f"E[lambda] must be positive, got {e_lambda_k}")
    w = e_lambda_k * al.kappa
    return al.mu + (0.5 - al.p) * al.sigma / w, al.sigma**2 / w


def _variational_state(params: ModelParams, e_lam: np.ndarray, u: np.ndarray) -> VariationalState:
    kappa = params.p * (1.0 - params.p)
    w = e_lam * kappa
    return VariationalState(
        e_lambda=e_lam,
        e_inv_lambda=1.0 / e_lam + 4.0 * kappa,
        u=u,
        m=params.mu + (0.5 - params.p) * params.sigma / w,
        r=params.sigma**2 / w,
    )


def sufficient_stats(params: ModelParams, xs, Ps, L, u, e_lam) -> SufficientStats:
    P = Ps + np.einsum("ti,tj->tij", xs, xs)
    P_cross = np.einsum("tij,tkj->tik", Ps[1:], L) + np.einsum("ti,tj->tij", xs[1:], xs[:-1])
    kappa = params.p * (1.0 - params.p)
    return SufficientStats(
        x_smooth=xs,
        cov_smooth=Ps,
        P=P,
        P_cross=P_cross,
        L=L,
        u=u,
        e_lambda=e_lam,
        e_inv_lambda=1.0 / e_lam + 4.0 * kappa,
        lambda_shape=1.0 / (4.0 * kappa),
    )


def _al_arrays(params: ModelParams):
    return tuple(np.ascontiguousarray(a, dtype=float) for a in (params.mu, params.p, params.sigma))


def _scalar(params: ModelParams) -> bool:
    return params.n_x == 1 and params.n_y == 1


def _scalar_args(params: ModelParams):
    return tuple(float(np.ravel(a)[0]) for a in _model_arrays(params))


def _scalar_al(params: ModelParams):
    return float(params.mu[0]), float(params.p[0]), float(params.sigma[0])


def _vec(a):
    return a[:, None]


def _cov(a):
    return a[:, None, None]


def al_smoother(
    params: ModelParams,
    y,
    cfg: InferenceConfig = InferenceConfig(),
    e_lambda0=None,
) -> tuple[RunResult, VariationalState, SufficientStats]:
    """Variational smoother: forward-backward passes alternated with scale updates until the
    smoothed moments stop moving.

    ``e_lambda0`` warm-starts ``E[lam]`` (shape ``(T, n_y)``); otherwise every entry starts at
    ``cfg.lambda_init``.
    """
    y = _as_obs(y, params.n_y)
    T = y.shape[0]
    if e_lambda0 is None:
        e0 = np.full((T, params.n_y), cfg.lambda_init)
    else:
        e0 = np.ascontiguousarray(np.broadcast_to(e_lambda0, (T, params.n_y)), dtype=float)
        if np.any(e0 <= 0):
            raise ParameterError("initial E[lambda] must be positive")
    max_iters = cfg.smoother_iters()
    t0 = time.perf_counter()
    if _scalar(params):
        out = K.al_smoother_1d(*_scalar_args(params), y[:, 0].copy(), *_scalar_al(params), e0[:, 0].copy(), cfg.tol, max_iters)
        xs, xp, xf, e_lam, u = (_vec(out[i]) for i in (0, 3, 5, 7, 8))
        Ps, L, Pp, Pf = (_cov(out[i]) for i in (1, 2, 4, 6))
        n_iter, converged = out[9], out[10]
    else:
        xs, Ps, L, xp, Pp, xf, Pf, e_lam, u, n_iter, converged = K.al_smoother(
            *_model_arrays(params), y, *_al_arrays(params), e0, cfg.tol, max_iters
        )
    cpu = time.perf_counter() - t0
    if not converged and max_iters > 1:
        log.warning("AL smoother did not converge in %d iterations", max_iters)
    result = RunResult(
        "al-smoother",
        xs,
        Ps,
        xf,
        Pf,
        xp,
        Pp,
        iterations=int(n_iter),
        fb_passes=int(n_iter),
        converged=bool(converged),
        cpu_seconds=cpu,
        extras={"L": L},
    )
    return result, _variational_state(params, e_lam, u), sufficient_stats(params, xs, Ps, L, u, e_lam)


def fast_al_filter(params: ModelParams, y, cfg: InferenceConfig = InferenceConfig()) -> tuple[RunResult, VariationalState]:
    """Sequential filter with a Gaussian predictive and a fixed-point loop per measurement update."""
    y = _as_obs(y, params.n_y)
    max_iters = cfg.filter_iters()
    t0 = time.perf_counter()
    if _scalar(params):
        out = K.fast_al_filter_1d(
            *_scalar_args(params), y[:, 0].copy(), *_scalar_al(params), float(cfg.lambda_init), cfg.tol, max_iters
        )
        xp, xf, e_lam, u = (_vec(out[i]) for i in (0, 2, 4, 5))
        Pp, Pf = _cov(out[1]), _cov(out[3])
        iters, conv = out[6], out[7]
    else:
        xp, Pp, xf, Pf, e_lam, u, iters, conv = K.fast_al_filter(
            *_model_arrays(params), y, *_al_arrays(params), float(cfg.lambda_init), cfg.tol, max_iters
        )
    cpu = time.perf_counter() - t0
    bad = np.flatnonzero(~conv)
    if bad.size and max_iters > 1:
        log.warning("fast AL filter: %d steps hit the %d-iteration cap", bad.size, max_iters)
    result = RunResult(
        "fast-al",
        xf,
        Pf,
        xf,
        Pf,
        xp,
        Pp,
        iterations=int(iters.max()),
        fb_passes=1,
        converged=bool(conv.all()),
        step_iterations=iters,
        cpu_seconds=cpu,
        extras={"unconverged_steps": bad},
    )
    return result, _variational_state(params, e_lam, u)


def exact_al_filter(params: ModelParams, y, cfg: InferenceConfig = InferenceConfig()) -> RunResult:
    """Filtered moments from smoothing every prefix ``y[:k+1]``; scales warm-start across prefixes."""
    y = _as_obs(y, params.n_y)
    max_iters = cfg.smoother_iters()
    t0 = time.perf_counter()
    if _scalar(params):
        xf, Pf, e_lam, iters, conv = K.exact_al_filter_1d(
            *_scalar_args(params), y[:, 0].copy(), *_scalar_al(params), float(cfg.lambda_init), cfg.tol, max_iters
        )
        xf, Pf, e_lam = _vec(xf), _cov(Pf), _vec(e_lam)
    else:
        xf, Pf, e_lam, iters, conv = K.exact_al_filter(
            *_model_arrays(params), y, *_al_arrays(params), float(cfg.lambda_init), cfg.tol, max_iters
        )
    cpu = time.perf_counter() - t0
    return RunResult(
        "exact-al",
        xf,
        Pf,
        xf,
        Pf,
        iterations=int(iters.max()),
        fb_passes=int(iters.sum()),
        converged=bool(conv.all()),
        step_iterations=iters,
        cpu_seconds=cpu,
        extras={"e_lambda": e_lam, "unconverged_steps": np.flatnonzero(~conv)},
    )
