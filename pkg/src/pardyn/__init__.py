"""Dynamical variable separation for parametric evolution equations.

Reduced solutions ``u_N(x, t; xi) = sum_k zeta_k(t; xi) g_k(x, t)`` are built
greedily offline; the coefficients are evaluated online from stored scalars.
"""
from .benchmarks import BenchmarkSpec, build, run_table
from .discretization import Mesh, assemble
from .errors import (
    ConfigurationError,
    DivergenceError,
    DomainError,
    EstimatorError,
    ModelFormatError,
    NumericalError,
    PardynError,
    SingularSystemError,
    StateError,
)
from .fom import TimeGrid, solve
from .io import load_model, save_model
from .offline import OfflineConfig, ReducedModel, run_offline
from .online import evaluate_error_metric, online_zetas, reconstruct
from .problem import ParametricProblem, evaluate_coefficients, sample_parameters
from .vs import run_vs

__all__ = [
    "BenchmarkSpec", "build", "run_table", "Mesh", "assemble", "TimeGrid", "solve", "load_model",
    "save_model", "OfflineConfig", "ReducedModel", "run_offline", "evaluate_error_metric", "online_zetas",
    "reconstruct", "ParametricProblem", "evaluate_coefficients", "sample_parameters", "run_vs",
    "ConfigurationError", "DivergenceError", "DomainError", "EstimatorError", "ModelFormatError",
    "NumericalError", "PardynError", "SingularSystemError", "StateError",
]
