"""Robust state-space filtering, smoothing and learning with asymmetric Laplace noise."""

from alssm.errors import ConfigError, KinkError, NumericalError, ParameterError
from alssm.dists import ALParams, InvGaussianParams, NoiseSpec
from alssm.lingauss import GaussianBelief, ModelParams, RunResult
from alssm.alinf import InferenceConfig, VariationalState, al_smoother, exact_al_filter, fast_al_filter
from alssm.learn import LearnConfig, double_loop_em, single_loop_em

__version__ = "0.1.0"

__all__ = [
    "ALParams",
    "ConfigError",
    "GaussianBelief",
    "InferenceConfig",
    "InvGaussianParams",
    "KinkError",
    "LearnConfig",
    "ModelParams",
    "NoiseSpec",
    "NumericalError",
    "ParameterError",
    "RunResult",
    "VariationalState",
    "al_smoother",
    "double_loop_em",
    "exact_al_filter",
    "fast_al_filter",
    "single_loop_em",
]
