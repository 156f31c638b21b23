"""共通フィクスチャ"""

import numpy as np
import pytest
import torch

from vcp_cosod.core.config import Config
from vcp_cosod.core.models import BackboneConfig, CPGConfig, HeadConfig, ModelConfig
from vcp_cosod.data.toy_generator import synthesize_toy_dataset
from vcp_cosod.networks.model import build_model

TOY_OVERRIDES = {
    "backbone": {"variant": "tiny"},
    "cpg": {"k": 8},
    "head": {"head_dim": 32, "aspp_dim": 32, "aspp_rates": [1, 2, 3], "num_classes": 0},
    "train": {"lr": 1e-3, "lr_final": 1e-5, "max_steps": 4, "input_size": 64, "max_group_size": 4},
    "ui": {"show_progress": False},
}


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_config():
    return ModelConfig(
        backbone=BackboneConfig.tiny(),
        cpg=CPGConfig(k=4),
        head=HeadConfig(d=32, aspp_dim=32, aspp_rates=(1, 2, 3), num_classes=6),
    )


@pytest.fixture
def tiny_model(tiny_config):
    torch.manual_seed(0)
    return build_model(tiny_config, None, init_seed=0)


@pytest.fixture
def toy_config():
    return Config(overrides=TOY_OVERRIDES)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """6グループ × 5枚、64×64 のトイデータセット"""
    return synthesize_toy_dataset(tmp_path_factory.mktemp("toy"), seed=0, n_groups=6, n_images=5, canvas=64)


@pytest.fixture
def make_config():
    """トイ設定に [train] などの上書きを重ねた Config を作る"""
    def factory(**sections):
        overrides = {name: dict(values) for name, values in TOY_OVERRIDES.items()}
        for name, values in sections.items():
            overrides.setdefault(name, {}).update(values)
        return Config(overrides=overrides)
    return factory
