"""Composite likelihood information criteria for clustered Gaussian data."""

from .clcore import ConvergenceError, GodambeEstimate, MarginScheme, ModelSpec, fit
from .qfdist import QuadFormLaw, QuadratureError, TailQuery, tail_prob
from .select import bmatrix_eigenvalues, criteria, empirical_blocks, expected_blocks

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "GodambeEstimate",
    "MarginScheme",
    "ModelSpec",
    "fit",
    "QuadFormLaw",
    "QuadratureError",
    "TailQuery",
    "tail_prob",
    "bmatrix_eigenvalues",
    "criteria",
    "empirical_blocks",
    "expected_blocks",
]
