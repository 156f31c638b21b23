"""
Networks module: frozen backbone, consensus prompts, prediction head and objectives.
"""

from .backbone import MixTransformer, build_backbone, load_pretrained
from .cpd import HandcraftedPromptEncoder, PromptDisperser, fuse_prompts, high_frequency_component
from .cpg import ConsensusPromptGenerator, select_top_k
from .head import PredictionHead, SegFormerHead, build_head
from .model import VCPModel, build_model, count_tunable_params
from .objectives import LossBreakdown, map_loss, total_loss

__all__ = [
    "MixTransformer",
    "build_backbone",
    "load_pretrained",
    "HandcraftedPromptEncoder",
    "PromptDisperser",
    "fuse_prompts",
    "high_frequency_component",
    "ConsensusPromptGenerator",
    "select_top_k",
    "PredictionHead",
    "SegFormerHead",
    "build_head",
    "VCPModel",
    "build_model",
    "count_tunable_params",
    "LossBreakdown",
    "map_loss",
    "total_loss",
]
