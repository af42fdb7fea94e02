"""Asymmetric Laplace distribution and the measurement-noise families used in
the experiments.

The AL density with location ``mu``, asymmetry ``p`` and scale ``sigma`` is

    f(v) = p(1-p)/sigma * exp(-(|v-mu| + (2p-1)(v-mu)) / (2 sigma))

i.e. an exponential tail of rate ``p/sigma`` to the right of ``mu`` carrying
mass ``1-p`` and one of rate ``(1-p)/sigma`` to the left carrying mass ``p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from alssm.errors import KinkError, ParameterError
from alssm.rng import as_rng


@dataclass(frozen=True)
class ALParams:
    mu: float
    p: float
    sigma: float

    def __post_init__(self):
        if not (0.0 < self.p < 1.0):
            raise ParameterError(f"AL asymmetry p must lie in (0, 1), got {self.p}")
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise ParameterError(f"AL scale sigma must be positive, got {self.sigma}")
        if not math.isfinite(self.mu):
            raise ParameterError(f"AL location mu must be finite, got {self.mu}")

    @property
    def kappa(self) -> float:
        return self.p * (1.0 - self.p)


@dataclass(frozen=True)
class InvGaussianParams:
    """Inverse-Gaussian law with the given mean and shape."""

    mean: float
    shape: float

    def __post_init__(self):
        if not (self.mean > 0.0 and self.shape > 0.0):
            raise ParameterError(
                f"inverse-Gaussian mean and shape must be positive, got {self.mean}, {self.shape}"
            )

    @classmethod
    def from_al(cls, al: ALParams, u: float) -> "InvGaussianParams":
        """Variational posterior of the latent scale given the residual second moment ``u``."""
        if u <= 0.0:
            raise ParameterError(f"residual second moment must be positive, got {u}")
        return cls(al.sigma / (2.0 * al.kappa * math.sqrt(u)), 1.0 / (4.0 * al.kappa))


def al_logpdf(params: ALParams, v):
    """Log density; vectorized over ``v``."""
    d = np.asarray(v, dtype=float) - params.mu
    out = math.log(params.kappa / params.sigma) - (np.abs(d) + (2.0 * params.p - 1.0) * d) / (2.0 * params.sigma)
    return float(out) if out.ndim == 0 else out


def al_cdf(params: ALParams, v):
    d = np.asarray(v, dtype=float) - params.mu
    left = params.p * np.exp(np.minimum(d, 0.0) * (1.0 - params.p) / params.sigma)
    right = 1.0 - (1.0 - params.p) * np.exp(-np.maximum(d, 0.0) * params.p / params.sigma)
    out = np.where(d < 0.0, left, right)
    return float(out) if out.ndim == 0 else out


def al_influence(params: ALParams, v: float) -> float:
    """Derivative of the log density; ``-p/sigma`` right of the kink, ``(1-p)/sigma`` left of it."""
    d = float(v) - params.mu
    if d == 0.0:
        raise KinkError("AL log density is not differentiable at v == mu")
    return -(math.copysign(1.0, d) + 2.0 * params.p - 1.0) / (2.0 * params.sigma)


def al_sample(params: ALParams, rng_seed, n: int) -> np.ndarray:
    if n < 1:
        raise ParameterError(f"sample count must be >= 1, got {n}")
    rng = as_rng(rng_seed)
    right = rng.random(n) >= params.p
    e = rng.standard_exponential(n)
    # right branch has rate p/sigma, left branch rate (1-p)/sigma
    scale = np.where(right, params.sigma / params.p, -params.sigma / (1.0 - params.p))
    return params.mu + scale * e


def al_moments(params: ALParams) -> tuple[float, float, float, float]:
    """Mean and the 2nd, 3rd, 4th central moments."""
    p, s = params.p, params.sigma
    a = s / p  # mean of the right exponential
    c = s / (1.0 - p)  # mean of the left exponential
    raw = [(1.0 - p) * math.factorial(n) * a**n + p * (-1.0) ** n * math.factorial(n) * c**n for n in range(1, 5)]
    m1, m2, m3, m4 = raw
    var = m2 - m1**2
    mu3 = m3 - 3.0 * m1 * m2 + 2.0 * m1**3
    mu4 = m4 - 4.0 * m1 * m3 + 6.0 * m1**2 * m2 - 3.0 * m1**4
    return params.mu + m1, var, mu3, mu4


def al_conditional_given_lambda(params: ALParams, lam: float):
    """Gaussian law of ``v`` given the latent scale ``lam`` in the scale-mixture representation."""
    from alssm.lingauss import GaussianBelief

    if not lam > 0.0:
        raise ParameterError(f"latent scale must be positive, got {lam}")
    w = lam * params.kappa
    mean = params.mu + (0.5 - params.p) * params.sigma / w
    var = params.sigma**2 / w
    return GaussianBelief(np.array([mean]), np.array([[var]]))


def inv_gaussian_expectations(ig: InvGaussianParams) -> tuple[float, float]:
    """``(E[lam], E[1/lam])``."""
    return ig.mean, 1.0 / ig.mean + 1.0 / ig.shape


def inv_gamma_logpdf(lam, shape: float, scale: float):
    lam = np.asarray(lam, dtype=float)
    return shape * math.log(scale) - math.lgamma(shape) - (shape + 1.0) * np.log(lam) - scale / lam


# --------------------------------------------------------------------------
# measurement-noise families

_FAMILIES = {
    "gaussian": ("mean", "std"),
    "laplace": ("loc", "scale"),
    "student_t": ("loc", "scale", "nu"),
    "skew_normal": ("loc", "scale", "shape"),
    "gh_skew_t": ("mu", "beta", "nu", "delta"),
    "asymmetric_laplace": ("mu", "p", "sigma"),
    "contaminated_gaussian": ("weights", "means", "variances"),
}


@dataclass(frozen=True)
class NoiseSpec:
    """A measurement-noise family and its parameters.

    ``gh_skew_t`` is the normal variance-mean mixture
    ``mu + beta*W + sqrt(W)*Z`` with ``W ~ InvGamma(nu/2, delta**2/2)``.
    """

    family: str
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ParameterError(f"unknown noise family {self.family!r}; expected one of {sorted(_FAMILIES)}")
        missing = [k for k in _FAMILIES[self.family] if k not in self.params]
        if missing:
            raise ParameterError(f"{self.family} noise is missing parameters {missing}")
        q = self.params
        fam = self.family
        if fam == "gaussian" and not q["std"] >= 0:
            raise ParameterError("gaussian std must be non-negative")
        if fam in ("laplace", "student_t", "skew_normal") and not q["scale"] > 0:
            raise ParameterError(f"{fam} scale must be positive")
        if fam in ("student_t", "gh_skew_t") and not q["nu"] > 2:
            raise ParameterError(f"{fam} needs nu > 2 for finite variance, got {q['nu']}")
        if fam == "gh_skew_t" and not q["delta"] > 0:
            raise ParameterError("gh_skew_t delta must be positive")
        if fam == "asymmetric_laplace":
            ALParams(q["mu"], q["p"], q["sigma"])
        if fam == "contaminated_gaussian":
            w = np.asarray(q["weights"], dtype=float)
            means = np.asarray(q["means"], dtype=float)
            var = np.asarray(q["variances"], dtype=float)
            if not (w.shape == means.shape == var.shape) or w.ndim != 1:
                raise ParameterError("mixture weights, means and variances must be equal-length vectors")
            if np.any(w < 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-12:
                raise ParameterError("mixture weights must lie in [0, 1] and sum to 1")
            if np.any(var <= 0):
                raise ParameterError("mixture variances must be positive")

    def to_dict(self) -> dict:
        return {"family": self.family, "params": {k: _jsonable(v) for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NoiseSpec":
        return cls(d["family"], dict(d.get("params", {})))


def _jsonable(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return [float(x) for x in v]
    return float(v)


def contaminated_gaussian(r: float = 0.01) -> NoiseSpec:
    """Nominal ``N(0, r)`` sensor with a 20% ``N(2, 50 r)`` miscalibration component."""
    return NoiseSpec("contaminated_gaussian", {"weights": [0.8, 0.2], "means": [0.0, 2.0], "variances": [r, 50.0 * r]})


def noise_sample(spec: NoiseSpec, rng_seed, n: int) -> np.ndarray:
    if n < 1:
        raise ParameterError(f"sample count must be >= 1, got {n}")
    rng = as_rng(rng_seed)
    q = spec.params
    fam = spec.family
    if fam == "gaussian":
        return q["mean"] + q["std"] * rng.standard_normal(n)
    if fam == "laplace":
        return rng.laplace(q["loc"], q["scale"], n)
    if fam == "student_t":
        return q["loc"] + q["scale"] * rng.standard_t(q["nu"], n)
    if fam == "skew_normal":
        delta = q["shape"] / math.sqrt(1.0 + q["shape"] ** 2)
        z0 = np.abs(rng.standard_normal(n))
        z1 = rng.standard_normal(n)
        return q["loc"] + q["scale"] * (delta * z0 + math.sqrt(1.0 - delta**2) * z1)
    if fam == "gh_skew_t":
        nu = q["nu"]
        w = (q["delta"] ** 2 / 2.0) / rng.gamma(nu / 2.0, 1.0, n)
        return q["mu"] + q["beta"] * w + np.sqrt(w) * rng.standard_normal(n)
    if fam == "asymmetric_laplace":
        return al_sample(ALParams(q["mu"], q["p"], q["sigma"]), rng, n)
    if fam == "contaminated_gaussian":
        w = np.asarray(q["weights"], dtype=float)
        comp = rng.choice(w.size, size=n, p=w)
        means = np.asarray(q["means"], dtype=float)[comp]
        sd = np.sqrt(np.asarray(q["variances"], dtype=float))[comp]
        return means + sd * rng.standard_normal(n)
    raise ParameterError(f"unknown noise family {fam!r}")
