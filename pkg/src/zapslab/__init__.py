"""Desk-scale posterior-sampling diffusion solvers for linear inverse problems.

Analytic Gaussian-mixture priors stand in for a trained score network, so
every sampler step and every learned-parameter gradient can be checked
against a closed-form oracle.
"""

__version__ = "0.1.0"

from .kernels import BACKEND
from .operators import LinearOperator
from .prior import GaussianMixturePrior, ScoreProvider
from .sampler import GuidanceConfig, run_reverse
from .schedule import NoiseSchedule, SubSchedule, build_irregular_subschedule, build_linear_schedule
from .wavelet import WaveletBasis, dwt2_forward, dwt2_inverse
from .zaps import ZapsConfig, ZapsParams, finetune

__all__ = [
    "BACKEND",
    "GaussianMixturePrior",
    "GuidanceConfig",
    "LinearOperator",
    "NoiseSchedule",
    "ScoreProvider",
    "SubSchedule",
    "WaveletBasis",
    "ZapsConfig",
    "ZapsParams",
    "build_irregular_subschedule",
    "build_linear_schedule",
    "dwt2_forward",
    "dwt2_inverse",
    "finetune",
    "run_reverse",
]
