"""Synthetic data for the experiment scenarios."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from alssm.dists import ALParams, NoiseSpec, contaminated_gaussian, noise_sample
from alssm.errors import ConfigError
from alssm.lingauss import ModelParams
from alssm.rng import make_rng

ROTATION_ANGLE = 0.2 * math.pi


@dataclass(frozen=True)
class Scenario:
    """Ground-truth model and measurement noise; each channel draws independent noise."""

    model: ModelParams
    noise: NoiseSpec
    T_train: int
    T_eval: int = 0
    seeds: tuple = (0,)
    methods: tuple = ()
    name: str = "scenario"
    random_C: bool = field(default=False)

    def __post_init__(self):
        if self.T_train < 1 or self.T_eval < 0:
            raise ConfigError("scenario lengths must satisfy T_train >= 1 and T_eval >= 0")
        if len(self.seeds) == 0:
            raise ConfigError("scenario needs at least one seed")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "methods", tuple(self.methods))

    @property
    def T(self) -> int:
        return self.T_train + self.T_eval


def rotation_matrix(angle: float = ROTATION_ANGLE) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, s], [-s, c]])


def normalized_C(n_y: int, rng) -> np.ndarray:
    """Gaussian rows rescaled so that each row's signed entry sum has magnitude one."""
    while True:
        C = rng.standard_normal((n_y, 2))
        sums = np.abs(C.sum(axis=1, keepdims=True))
        if np.all(sums > 1e-8):
            return C / sums


def _sqrt_psd(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def scenario_model(scenario: Scenario, seed: int, *stream) -> ModelParams:
    """Generating parameters for one replication (draws C when the scenario asks for it)."""
    if not scenario.random_C:
        return scenario.model
    C = normalized_C(scenario.model.n_y, make_rng(seed, *stream, "C"))
    return scenario.model.replace(C=C)


def simulate(scenario: Scenario, seed: int, *stream) -> tuple[np.ndarray, np.ndarray]:
    """States ``(T, n_x)`` and observations ``(T, n_y)``; deterministic per ``(seed, *stream)``.

    ``stream`` keys separate independent data sets drawn under one seed (e.g. train vs test).
    """
    model = scenario_model(scenario, seed, *stream)
    T = scenario.T
    rng = make_rng(seed, *stream, "states")
    n_x, n_y = model.n_x, model.n_y
    x = np.empty((T, n_x))
    x[0] = model.pi1 + _sqrt_psd(model.Sigma1) @ rng.standard_normal(n_x)
    Lq = _sqrt_psd(model.Q)
    w = rng.standard_normal((T, n_x))
    for k in range(1, T):
        x[k] = model.A @ x[k - 1] + model.b + Lq @ w[k]
    v = np.column_stack([noise_sample(scenario.noise, make_rng(seed, *stream, "noise", i), T) for i in range(n_y)])
    return x, x @ model.C.T + v


# --------------------------------------------------------------------------
# presets

EXP1_NOISE = {
    "gaussian": NoiseSpec("gaussian", {"mean": 0.0, "std": 0.5}),
    "skew_normal": NoiseSpec("skew_normal", {"loc": 0.0, "scale": 0.5, "shape": 5.0}),
    "laplace": NoiseSpec("laplace", {"loc": 0.0, "scale": 0.3}),
    "student_t": NoiseSpec("student_t", {"loc": 0.0, "scale": 0.3, "nu": 3.0}),
    "asymmetric_laplace": NoiseSpec("asymmetric_laplace", {"mu": 0.0, "p": 0.2, "sigma": 0.3}),
    "gh_skew_t": NoiseSpec("gh_skew_t", {"mu": 0.0, "beta": 40.0, "nu": 6.0, "delta": 0.3}),
}


def exp1_scenario(noise: NoiseSpec, n_y: int = 1, T: int = 1000, seeds=range(10), q: float = 0.05) -> Scenario:
    """Two-state rotation model with random normalized measurement rows."""
    model = ModelParams(
        A=rotation_matrix(),
        C=np.ones((n_y, 2)) / 2.0,
        b=np.zeros(2),
        Q=q * np.eye(2),
        mu=np.zeros(n_y),
        p=np.full(n_y, 0.5),
        sigma=np.ones(n_y),
        pi1=np.zeros(2),
        Sigma1=np.eye(2),
    )
    half = T // 2
    return Scenario(model, noise, T - half, half, tuple(seeds), name=f"exp1-{noise.family}-ny{n_y}", random_C=True)


def exp2_model(q: float = 0.05) -> ModelParams:
    return ModelParams.build(A=[[1.0]], C=[[1.0]], Q=[[q]], al=ALParams(0.0, 0.5, 1.0), pi1=[0.0], Sigma1=[[1.0]])


def exp2_scenario(T: int = 1000, seeds=range(10), r: float = 0.01) -> Scenario:
    """Random walk observed through a sensor with a biased, high-variance failure mode."""
    return Scenario(exp2_model(), contaminated_gaussian(r), T, 0, tuple(seeds), name="exp2")


# --------------------------------------------------------------------------
# stochastic volatility

@dataclass(frozen=True)
class SVParams:
    phi: float = 0.95
    gamma: float = -0.5
    sigma_eta: float = 0.2

    def __post_init__(self):
        if not abs(self.phi) < 1:
            raise ConfigError("SV persistence must satisfy |phi| < 1")
        if not self.sigma_eta > 0:
            raise ConfigError("SV volatility-of-volatility must be positive")

    @property
    def stationary_mean(self) -> float:
        return self.gamma / (1.0 - self.phi)

    @property
    def stationary_var(self) -> float:
        return self.sigma_eta**2 / (1.0 - self.phi**2)


def simulate_sv(params: SVParams, T: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Log-variance path ``h`` and returns ``exp(h/2) z`` with ``h`` started from its stationary law."""
    rng = make_rng(seed, "sv")
    h = np.empty(T)
    h[0] = params.stationary_mean + math.sqrt(params.stationary_var) * rng.standard_normal()
    eta = params.sigma_eta * rng.standard_normal(T)
    for k in range(1, T):
        h[k] = params.phi * h[k - 1] + params.gamma + eta[k]
    z = make_rng(seed, "sv-returns").standard_normal(T)
    return h, np.exp(h / 2.0) * z
