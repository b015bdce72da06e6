"""Composite likelihood evaluation and fitting."""

from .engine import (
    evaluate,
    fisher_information,
    hessian,
    log_cl,
    per_subject_scores,
    score,
)
from .fit import ConvergenceError, FitOptions, GodambeEstimate, fit, start_values
from .schemes import MarginScheme
from .structures import CholeskyCov, ModelSpec

__all__ = [
    "MarginScheme",
    "CholeskyCov",
    "ModelSpec",
    "FitOptions",
    "GodambeEstimate",
    "ConvergenceError",
    "fit",
    "start_values",
    "evaluate",
    "log_cl",
    "score",
    "hessian",
    "per_subject_scores",
    "fisher_information",
]
