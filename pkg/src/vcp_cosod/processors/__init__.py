"""
Processors module: training, inference, evaluation, checkpoints and parameter reports.
"""

from .checkpoint import apply_checkpoint, load_checkpoint, make_checkpoint, model_from_checkpoint, save_checkpoint
from .evaluator import evaluate_dataset, print_eval_table, write_report
from .inferencer import Inferencer
from .param_report import VARIANTS, ParamRow, count_params, print_param_table, report_params
from .trainer import (
    CHECKPOINT_NAME,
    LOSS_LOG_COLUMNS,
    LOSS_LOG_NAME,
    Trainer,
    TrainResult,
    build_optimizer,
    resolve_model_config,
    write_loss_log,
)

__all__ = [
    "apply_checkpoint",
    "load_checkpoint",
    "make_checkpoint",
    "model_from_checkpoint",
    "save_checkpoint",
    "evaluate_dataset",
    "print_eval_table",
    "write_report",
    "Inferencer",
    "VARIANTS",
    "ParamRow",
    "count_params",
    "print_param_table",
    "report_params",
    "Trainer",
    "TrainResult",
    "build_optimizer",
    "resolve_model_config",
    "write_loss_log",
    "CHECKPOINT_NAME",
    "LOSS_LOG_COLUMNS",
    "LOSS_LOG_NAME",
]
