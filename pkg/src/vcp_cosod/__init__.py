"""
VCP CoSOD

凍結した階層型 Transformer にコンセンサスプロンプトを注入して
共顕著物体検出を行う Python パッケージ
"""

__version__ = "1.0.0"

from .core import Config, ModelConfig
from .networks import VCPModel, build_model, count_tunable_params
from .processors import Inferencer, Trainer, evaluate_dataset
from .cli import VCPApp, main

__all__ = [
    "Config",
    "ModelConfig",
    "VCPModel",
    "build_model",
    "count_tunable_params",
    "Inferencer",
    "Trainer",
    "evaluate_dataset",
    "VCPApp",
    "main",
]
