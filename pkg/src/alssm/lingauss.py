"""Linear-Gaussian state-space primitives and the Gaussian baselines.

Model::

    x[k+1] = A x[k] + b + w[k],   w ~ N(0, Q)
    y[k]   = C x[k] + v[k],       v[k, i] ~ AL(mu_i, p_i, sigma_i) independently
    x[1]   ~ N(pi1, Sigma1)
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from alssm import _kernels as K
from alssm.dists import ALParams
from alssm.errors import NumericalError, ParameterError

SYM_TOL = 1e-10
EIG_TOL = 1e-10


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise ParameterError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} has non-finite entries")
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


def _check_cov(M: np.ndarray, name: str) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > SYM_TOL * scale:
        raise ParameterError(f"{name} is not symmetric")
    S = 0.5 * (M + M.T)
    if S.size and np.linalg.eigvalsh(S)[0] < -EIG_TOL * scale:
        raise ParameterError(f"{name} is not positive semidefinite")
    S = np.ascontiguousarray(S)
    S.setflags(write=False)
    return S


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))
        n = self.mean.shape[0]
        if self.cov.shape != (n, n):
            raise ParameterError(f"covariance shape {self.cov.shape} does not match mean of length {n}")


@dataclass(frozen=True)
class StepCache:
    K: np.ndarray
    innovation: np.ndarray
    L: np.ndarray | None = None


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set of the AL state-space model.

    ``mu``, ``p`` and ``sigma`` hold one AL component per measurement channel.
    """

    A: np.ndarray
    C: np.ndarray
    b: np.ndarray
    Q: np.ndarray
    mu: np.ndarray
    p: np.ndarray
    sigma: np.ndarray
    pi1: np.ndarray
    Sigma1: np.ndarray

    def __post_init__(self):
        s = object.__setattr__
        s(self, "A", _frozen(self.A, 2, "A"))
        s(self, "C", _frozen(self.C, 2, "C"))
        s(self, "b", _frozen(self.b, 1, "b"))
        s(self, "Q", _check_cov(_frozen(self.Q, 2, "Q"), "Q"))
        s(self, "mu", _frozen(self.mu, 1, "mu"))
        s(self, "p", _frozen(self.p, 1, "p"))
        s(self, "sigma", _frozen(self.sigma, 1, "sigma"))
        s(self, "pi1", _frozen(self.pi1, 1, "pi1"))
        s(self, "Sigma1", _check_cov(_frozen(self.Sigma1, 2, "Sigma1"), "Sigma1"))
        nx, ny = self.n_x, self.n_y
        shapes = {
            "A": (self.A.shape, (nx, nx)),
            "C": (self.C.shape, (ny, nx)),
            "b": (self.b.shape, (nx,)),
            "Q": (self.Q.shape, (nx, nx)),
            "mu": (self.mu.shape, (ny,)),
            "p": (self.p.shape, (ny,)),
            "sigma": (self.sigma.shape, (ny,)),
            "pi1": (self.pi1.shape, (nx,)),
            "Sigma1": (self.Sigma1.shape, (nx, nx)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise ParameterError(f"{name} has shape {got}, expected {want}")
        if np.any(self.p <= 0) or np.any(self.p >= 1):
            raise ParameterError(f"AL asymmetry must lie in (0, 1), got {self.p}")
        if np.any(self.sigma <= 0):
            raise ParameterError(f"AL scale must be positive, got {self.sigma}")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def al(self) -> tuple[ALParams, ...]:
        return tuple(ALParams(float(m), float(p), float(s)) for m, p, s in zip(self.mu, self.p, self.sigma))

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    @classmethod
    def build(cls, A, C, Q, al, b=None, pi1=None, Sigma1=None) -> "ModelParams":
        """Convenience constructor accepting scalars and an ``ALParams`` (or a sequence of them)."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        nx = A.shape[0]
        C = np.atleast_2d(np.asarray(C, dtype=float))
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if isinstance(al, ALParams):
            al = [al] * C.shape[0]
        return cls(
            A=A,
            C=C,
            b=np.zeros(nx) if b is None else np.atleast_1d(b),
            Q=Q,
            mu=[a.mu for a in al],
            p=[a.p for a in al],
            sigma=[a.sigma for a in al],
            pi1=np.zeros(nx) if pi1 is None else np.atleast_1d(pi1),
            Sigma1=np.eye(nx) if Sigma1 is None else np.atleast_2d(Sigma1),
        )

    def to_dict(self) -> dict:
        return {
            "n_x": self.n_x,
            "n_y": self.n_y,
            "A": self.A.tolist(),
            "C": self.C.tolist(),
            "b": self.b.tolist(),
            "Q": self.Q.tolist(),
            "mu": self.mu.tolist(),
            "p": self.p.tolist(),
            "sigma": self.sigma.tolist(),
            "pi1": self.pi1.tolist(),
            "Sigma1": self.Sigma1.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        try:
            params = cls(**{k: d[k] for k in ("A", "C", "b", "Q", "mu", "p", "sigma", "pi1", "Sigma1")})
        except KeyError as exc:
            raise ParameterError(f"parameter record is missing field {exc.args[0]!r}") from None
        if "n_x" in d and d["n_x"] != params.n_x or "n_y" in d and d["n_y"] != params.n_y:
            raise ParameterError("declared dimensions disagree with matrix shapes")
        return params


@dataclass(frozen=True)
class AdaptiveFilterConfig:
    n_win: int = 30
    base_variance: float = 0.5
    variance_floor: float = 1e-8

    def __post_init__(self):
        if self.n_win < 1:
            raise ParameterError("adaptive window must hold at least one innovation")
        if not (self.base_variance > 0 and self.variance_floor > 0):
            raise ParameterError("adaptive base variance and floor must be positive")


@dataclass
class RunResult:
    """Time-indexed state estimates plus run diagnostics.

    ``mean``/``cov`` hold the method's primary output (filtered for filters,
    smoothed for smoothers).
    """

    method: str
    mean: np.ndarray
    cov: np.ndarray
    filtered_mean: np.ndarray | None = None
    filtered_cov: np.ndarray | None = None
    predicted_mean: np.ndarray | None = None
    predicted_cov: np.ndarray | None = None
    iterations: int = 1
    fb_passes: int = 1
    converged: bool = True
    step_iterations: np.ndarray | None = None
    cpu_seconds: float = 0.0
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.mean.shape[0]

    def belief(self, k: int) -> GaussianBelief:
        return GaussianBelief(self.mean[k], self.cov[k])

    @property
    def beliefs(self) -> list[GaussianBelief]:
        return [self.belief(k) for k in range(self.T)]


# --------------------------------------------------------------------------
# single-step primitives

def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=float)


def predict_step(params: ModelParams, prev: GaussianBelief) -> GaussianBelief:
    if prev.mean.shape != (params.n_x,):
        raise ParameterError(f"belief dimension {prev.mean.shape[0]} does not match state dimension {params.n_x}")
    x, P = K.predict(_f64(params.A), _f64(params.b), _f64(params.Q), _f64(prev.mean), _f64(prev.cov))
    return GaussianBelief(x, P)


def update_step(pred: GaussianBelief, C, y, m, R) -> tuple[GaussianBelief, StepCache]:
    """Measurement update with noise mean ``m`` and diagonal covariance ``R``."""
    C = np.atleast_2d(_f64(C))
    y = np.atleast_1d(_f64(y))
    m = np.atleast_1d(_f64(m))
    R = np.atleast_2d(_f64(R))
    ny, nx = C.shape
    if pred.mean.shape != (nx,) or y.shape != (ny,) or m.shape != (ny,) or R.shape != (ny, ny):
        raise ParameterError("dimension mismatch in measurement update")
    r = np.diag(R).copy()
    if np.any(np.abs(R - np.diag(r)) > 0):
        raise ParameterError("measurement noise covariance must be diagonal")
    if np.any(r <= 0):
        raise ParameterError("measurement noise variances must be positive")
    try:
        x, P, gain, innov = K.update(_f64(pred.mean), _f64(pred.cov), C, y, m, r)
    except NumericalError as exc:
        raise NumericalError(f"singular innovation covariance in measurement update: {exc}") from None
    return GaussianBelief(x, P), StepCache(K=gain, innovation=innov)


def rts_backward_pass(filtered, predicted, A) -> tuple[list[GaussianBelief], np.ndarray]:
    """Rauch-Tung-Striebel recursion; ``predicted[k]`` is the one-step prediction of step ``k``."""
    if len(filtered) != len(predicted) or len(filtered) == 0:
        raise ParameterError("filtered and predicted sequences must be aligned and non-empty")
    xf = np.array([f.mean for f in filtered])
    Pf = np.array([f.cov for f in filtered])
    xp = np.array([f.mean for f in predicted])
    Pp = np.array([f.cov for f in predicted])
    try:
        xs, Ps, L = K.rts(_f64(np.atleast_2d(A)), xp, Pp, xf, Pf)
    except NumericalError as exc:
        raise NumericalError(f"singular predicted covariance in backward pass: {exc}") from None
    return [GaussianBelief(xs[k], Ps[k]) for k in range(len(filtered))], L


# --------------------------------------------------------------------------
# batch Gaussian baselines

def _as_obs(y, n_y: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[1] != n_y:
        raise ParameterError(f"observations must have shape (T, {n_y}), got {y.shape}")
    if y.shape[0] < 1:
        raise ParameterError("need at least one observation")
    return np.ascontiguousarray(y)


def _per_step(v, T: int, n_y: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim <= 1:
        v = np.broadcast_to(np.atleast_1d(v), (T, n_y))
    if v.shape != (T, n_y):
        raise ParameterError(f"{name} must broadcast to ({T}, {n_y}), got {v.shape}")
    return np.ascontiguousarray(v, dtype=float)


def _model_arrays(params: ModelParams):
    return tuple(_f64(a) for a in (params.A, params.b, params.Q, params.C, params.pi1, params.Sigma1))


def kalman_filter(params: ModelParams, y, R, m=0.0) -> RunResult:
    """Gaussian Kalman filter with noise mean ``m`` and diagonal variances ``R`` (per step or constant)."""
    y = _as_obs(y, params.n_y)
    T = y.shape[0]
    R = _per_step(R, T, params.n_y, "R")
    m = _per_step(m, T, params.n_y, "m")
    t0 = time.perf_counter()
    xp, Pp, xf, Pf = K.forward(*_model_arrays(params), y, m, R)
    cpu = time.perf_counter() - t0
    return RunResult("kalman", xf, Pf, xf, Pf, xp, Pp, cpu_seconds=cpu)


def kalman_smoother(params: ModelParams, y, R, m=0.0) -> RunResult:
    """One forward and one backward pass; exact posterior of the Gaussian-noise model."""
    y = _as_obs(y, params.n_y)
    T = y.shape[0]
    R = _per_step(R, T, params.n_y, "R")
    m = _per_step(m, T, params.n_y, "m")
    arrays = _model_arrays(params)
    t0 = time.perf_counter()
    xp, Pp, xf, Pf = K.forward(*arrays, y, m, R)
    xs, Ps, L = K.rts(arrays[0], xp, Pp, xf, Pf)
    cpu = time.perf_counter() - t0
    return RunResult("kalman-smoother", xs, Ps, xf, Pf, xp, Pp, cpu_seconds=cpu, extras={"L": L})


def adaptive_filter(config: AdaptiveFilterConfig, params: ModelParams, y, m=0.0) -> RunResult:
    """Kalman filter whose noise variance is re-estimated from a window of past innovations.

    Before the window fills, ``config.base_variance`` is used; negative window
    estimates are clamped at ``config.variance_floor``.
    """
    y = _as_obs(y, params.n_y)
    m = np.broadcast_to(np.atleast_1d(np.asarray(m, dtype=float)), (params.n_y,)).copy()
    t0 = time.perf_counter()
    xp, Pp, xf, Pf, r = K.adaptive_filter(
        *_model_arrays(params), y, m, int(config.n_win), float(config.base_variance), float(config.variance_floor)
    )
    cpu = time.perf_counter() - t0
    return RunResult("adaptive", xf, Pf, xf, Pf, xp, Pp, cpu_seconds=cpu, extras={"r": r})
