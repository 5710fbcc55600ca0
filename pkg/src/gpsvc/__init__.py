"""Gaussian-process based spatially varying coefficient models.

Maximum likelihood estimation with optional covariance tapering, EBLUP
prediction, simulation, and joint selection of fixed and random effects by
penalized likelihood.
"""
from .kernels import KERNELS, Taper, correlation, covariance
from .likelihood import LikelihoodEngine
from .mle import FitResult, MleControl, fit_mle
from .model import ParamVector, SvcData, ValidationError
from .predict import PredictionResult, predict_svc
from .sample import sample_full_svc, sample_gp
from .select import CdControl, SelectionResult, cd_pmle, select_grid, select_mbo

__version__ = "0.1.0"

__all__ = [
    "KERNELS",
    "CdControl",
    "FitResult",
    "LikelihoodEngine",
    "MleControl",
    "ParamVector",
    "PredictionResult",
    "SelectionResult",
    "SvcData",
    "Taper",
    "ValidationError",
    "cd_pmle",
    "correlation",
    "covariance",
    "fit_mle",
    "predict_svc",
    "sample_full_svc",
    "sample_gp",
    "select_grid",
    "select_mbo",
]
