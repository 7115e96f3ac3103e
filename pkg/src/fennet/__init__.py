"""Completion of functional network data on a symmetric Tucker manifold.

Typical use::

    from fennet import Problem, FitConfig, fit
    prob = Problem.build(Y, mask, alpha=0.1)
    point, report = fit(prob, FitConfig(s=3, K=8))
"""

from .errors import (
    DegenerateCoreError,
    DimensionError,
    FormatError,
    GenerationError,
    LineSearchError,
    UnderdeterminedError,
)
from .manifold import TangentVector, TuckerPoint, shosvd
from .objective import Grid, Problem
from .optimizer import FitConfig, FitReport, fit

__version__ = "0.1.0"

__all__ = [
    "DegenerateCoreError", "DimensionError", "FormatError", "GenerationError",
    "LineSearchError", "UnderdeterminedError", "TangentVector", "TuckerPoint", "shosvd",
    "Grid", "Problem", "FitConfig", "FitReport", "fit",
]
