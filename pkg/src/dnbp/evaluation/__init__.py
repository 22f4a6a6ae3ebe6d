"""Metrics and evaluation reports.

Only the lightweight metrics are imported here; reports live in
:mod:`dnbp.evaluation.analysis`.
"""
from dnbp.evaluation.metrics import (
    ErrorReport,
    avg_euclidean_error,
    euclidean_errors_px,
    histogram_entropy,
    marginal_entropy,
)

__all__ = ["ErrorReport", "avg_euclidean_error", "euclidean_errors_px", "histogram_entropy",
           "marginal_entropy"]
