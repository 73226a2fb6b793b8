"""Distributionally robust training for linear and kernelized models."""

from .bayesian import BayesianDRO, BayesianSpec, Prior
from .core import (CapabilityError, DataError, Dataset, FitReport, LinearModel, NotFittedError,
                   ParameterError, RobustaError, WorstCase, evaluate, score)
from .databench import GenSpec, export_csv, generate, import_csv
from .fdiv import CVaRDRO, Chi2DRO, FDivSpec, KLDRO, TVDRO, kl_dual_value, worst_case
from .kernel import NystroemMap, batched_transform, fit_map, transform
from .marginal import MarginalCVaRDRO, MarginalSpec
from .optim import NormSpec, SolverConfig, dual_norm
from .wasserstein import RSSpec, RSWassersteinDRO, TargetUnreachable, WassersteinDRO, WassersteinSpec

__version__ = "0.1.0"

__all__ = [
    "BayesianDRO", "BayesianSpec", "Prior", "CapabilityError", "DataError", "Dataset", "FitReport",
    "LinearModel", "NotFittedError", "ParameterError", "RobustaError", "WorstCase", "evaluate", "score",
    "GenSpec", "export_csv", "generate", "import_csv", "CVaRDRO", "Chi2DRO", "FDivSpec", "KLDRO", "TVDRO",
    "kl_dual_value", "worst_case", "NystroemMap", "batched_transform", "fit_map", "transform",
    "MarginalCVaRDRO", "MarginalSpec", "NormSpec", "SolverConfig", "dual_norm", "RSSpec",
    "RSWassersteinDRO", "TargetUnreachable", "WassersteinDRO", "WassersteinSpec",
]
