"""
Core module for VCP co-salient object detection.
Contains configuration management, data models and exceptions.
"""

from .config import Config
from .exceptions import (
    BackboneWeightsError,
    CheckpointError,
    ConfigError,
    DatasetError,
    MetricInputError,
    NumericalInstabilityError,
    ShapeMismatchError,
    VCPError,
)
from .models import (
    BackboneConfig,
    CPDConfig,
    CPGConfig,
    HandcraftedConfig,
    HeadConfig,
    ImageGroup,
    InferConfig,
    LossWeights,
    ModelConfig,
    StageEmbedding,
    StageSpec,
    TrainConfig,
    TunableCheckpoint,
)

__all__ = [
    "Config",
    "VCPError",
    "ConfigError",
    "BackboneWeightsError",
    "ShapeMismatchError",
    "NumericalInstabilityError",
    "DatasetError",
    "CheckpointError",
    "MetricInputError",
    "BackboneConfig",
    "CPDConfig",
    "CPGConfig",
    "HandcraftedConfig",
    "HeadConfig",
    "ImageGroup",
    "InferConfig",
    "LossWeights",
    "ModelConfig",
    "StageEmbedding",
    "StageSpec",
    "TrainConfig",
    "TunableCheckpoint",
]
