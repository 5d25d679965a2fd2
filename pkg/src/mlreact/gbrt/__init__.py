"""Exact regression trees and gradient boosting.

The split search runs in a compiled kernel when available and falls back to
numpy otherwise; see :mod:`mlreact.gbrt._backend`.
"""

from ._backend import available_backends, current_backend, use_backend
from .boosting import (
    GbrtHyperParams,
    GbrtModel,
    fit_gbrt,
    iter_staged_predict,
    predict,
    staged_predict,
)
from .tree import RegressionTree, fit_tree

__all__ = [
    "GbrtHyperParams",
    "GbrtModel",
    "RegressionTree",
    "available_backends",
    "current_backend",
    "fit_gbrt",
    "fit_tree",
    "iter_staged_predict",
    "predict",
    "staged_predict",
    "use_backend",
]
