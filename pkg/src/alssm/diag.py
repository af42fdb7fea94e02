"""Robustness diagnostics for the scalar model with ``A = C = 1``.

All curves are returned as ordered column dicts so they can be written
straight to CSV.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from alssm.alinf import InferenceConfig, fast_al_filter
from alssm.dists import ALParams, al_moments
from alssm.errors import NumericalError, ParameterError
from alssm.lingauss import ModelParams

RESPONSE_COLUMNS = ("innovation", "exact", "fast_al", "kalman")
ADAPTATION_COLUMNS = ("sqrt_u", "r", "m")
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ScalarPrior:
    mean: float
    var: float

    def __post_init__(self):
        if not (self.var > 0 and math.isfinite(self.var)):
            raise ParameterError(f"prior variance must be positive, got {self.var}")
        if not math.isfinite(self.mean):
            raise ParameterError("prior mean must be finite")


def _mills(z: np.ndarray) -> np.ndarray:
    """phi(z) / Phi(z), evaluated in the log domain."""
    return np.exp(-0.5 * z**2 - _LOG_SQRT_2PI - log_ndtr(z))


def _dlog_evidence(a, P: float, al: ALParams):
    """Derivative in ``a`` of log E[f_AL(a + sqrt(P) Z)], with ``a = y - prior mean - mu``."""
    p, s = al.p, al.sigma
    sd = math.sqrt(P)
    z1 = (a - p * P / s) / sd
    z2 = -(a + (1.0 - p) * P / s) / sd
    t1 = -p * a / s + p**2 * P / (2.0 * s**2) + log_ndtr(z1)
    t2 = (1.0 - p) * a / s + (1.0 - p) ** 2 * P / (2.0 * s**2) + log_ndtr(z2)
    top = np.maximum(t1, t2)
    w1 = np.exp(t1 - top)
    w2 = np.exp(t2 - top)
    d1 = -p / s + _mills(z1) / sd
    d2 = (1.0 - p) / s - _mills(z2) / sd
    return (w1 * d1 + w2 * d2) / (w1 + w2)


def exact_scalar_update(prior: ScalarPrior, al: ALParams, y) -> float:
    """Exact posterior mean of ``x`` given ``x ~ N(prior)`` and ``y = x + v``, ``v ~ AL``.

    Uses ``E[x | y] = m + P d/dm log g(m)`` where ``g`` is the closed-form evidence.
    Vectorized over ``y``.
    """
    a = np.asarray(y, dtype=float) - prior.mean - al.mu
    out = prior.mean - prior.var * _dlog_evidence(a, prior.var, al)
    if not np.all(np.isfinite(out)):
        raise NumericalError("exact scalar update is not finite")
    return float(out) if out.ndim == 0 else out


def _fast_update(prior: ScalarPrior, al: ALParams, y: float, cfg: InferenceConfig) -> float:
    theta = ModelParams.build(A=[[1.0]], C=[[1.0]], Q=[[1.0]], al=al, pi1=[prior.mean], Sigma1=[[prior.var]])
    res, _ = fast_al_filter(theta, np.array([[y]]), cfg)
    return float(res.mean[0, 0])


def response_curve(prior: ScalarPrior, al: ALParams, innovation_grid, cfg: InferenceConfig | None = None) -> dict:
    """Change of the state estimate against the innovation ``y - prior mean``.

    The Kalman column uses a Gaussian with the AL noise's mean and variance.
    """
    grid = np.asarray(innovation_grid, dtype=float).ravel()
    if not np.all(np.isfinite(grid)):
        raise ParameterError("innovation grid must be finite")
    cfg = cfg or InferenceConfig(tol=1e-12, max_iters=1000)
    ys = prior.mean + grid
    exact = exact_scalar_update(prior, al, ys) - prior.mean
    fast = np.array([_fast_update(prior, al, y, cfg) for y in ys]) - prior.mean
    m, R, _, _ = al_moments(al)
    kalman = prior.var / (prior.var + R) * (grid - m)
    return dict(zip(RESPONSE_COLUMNS, (grid, np.atleast_1d(exact), fast, kalman)))


def adaptation_curve(al: ALParams, u_grid) -> dict:
    """Effective Gaussian noise ``(r, m)`` implied by a residual second moment ``u``."""
    u = np.asarray(u_grid, dtype=float).ravel()
    if np.any(u < 0):
        raise ParameterError("residual second moments must be non-negative")
    su = np.sqrt(u)
    return dict(zip(ADAPTATION_COLUMNS, (su, 2.0 * al.sigma * su, al.mu + (1.0 - 2.0 * al.p) * su)))
