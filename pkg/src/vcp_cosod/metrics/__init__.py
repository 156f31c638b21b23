"""
Metrics module: saliency map evaluation (MAE, S/E/F-measure, PR curves).
"""

from .saliency_metrics import (
    THRESHOLDS,
    SaliencyEvaluator,
    e_measure,
    f_measure,
    mae,
    precision_recall_curves,
    s_measure,
)

__all__ = [
    "THRESHOLDS",
    "SaliencyEvaluator",
    "e_measure",
    "f_measure",
    "mae",
    "precision_recall_curves",
    "s_measure",
]
