"""
設定ファイル管理モジュール

TOML 形式の設定ファイルを読み込み、既定値とマージした上で
各モジュール用の型付き設定オブジェクトを提供する。
"""

import copy
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from .exceptions import ConfigError
from .models import (
    BackboneConfig,
    CPDConfig,
    CPGConfig,
    HandcraftedConfig,
    HeadConfig,
    InferConfig,
    LossWeights,
    ModelConfig,
    TrainConfig,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


DEFAULTS: Dict[str, Dict[str, Any]] = {
    "backbone": {
        "arch": "mit",
        "variant": "b4",
        "weights": "",
        "init_seed": 0,
        "stage_mask": [True, True, True, True],
    },
    "cpg": {"r": 4, "j": 35, "k": 32, "seed_mlp_hidden": 256, "seed_mlp_depth": 2},
    "cpd": {
        "fusion": "concat",
        "mlp_sharing": "adaptive",
        "fft_mask_ratio": 0.25,
        "use_handcrafted": True,
        "use_consensus": True,
    },
    "head": {
        "head_dim": 128,
        "aspp_dim": 160,
        "aspp_rates": [1, 6, 12, 18],
        "num_classes": 291,
        "use_segformer_head": False,
    },
    "loss": {"alpha": 10.0, "beta": 2.0, "lambda": 0.1, "use_classifier": True},
    "train": {
        "lr": 5e-4,
        "lr_final": 1e-4,
        "epochs": 100,
        "steps_per_epoch": 0,
        "max_steps": 0,
        "weight_decay": 0.01,
        "input_size": 288,
        "seed": 0,
        "max_group_size": 16,
        "log_every": 10,
        "device": "cpu",
    },
    "infer": {"chunk_size": 0},
    "ui": {"show_progress": True},
}


def _merge(defaults: Dict[str, Dict[str, Any]], override: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
    """既定値に上書き値をマージ（未知のセクション・キーはエラー）"""
    merged = copy.deepcopy(defaults)
    for section, values in override.items():
        if section not in merged:
            raise ConfigError(f"未知の設定セクションです: [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] はテーブルである必要があります")
        for key, value in values.items():
            if key not in merged[section]:
                raise ConfigError(f"未知の設定キーです: {section}.{key}")
            expected = type(merged[section][key])
            if expected is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
                raise ConfigError(
                    f"{section}.{key} の型が正しくありません（{expected.__name__} を期待）: {value!r}"
                )
            merged[section][key] = value
    return merged


class Config:
    """設定ファイルを管理するクラス"""

    def __init__(self, config_path: Optional[Union[str, Path]] = None,
                 overrides: Optional[Dict[str, Any]] = None):
        """
        設定ファイルを読み込む

        Args:
            config_path: 設定ファイルのパス（省略時は既定値のみ）
            overrides: 読み込み後にさらに上書きする値（テスト・CLI用）
        """
        self.config_path = Path(config_path) if config_path else None
        self.config = self._load_config()
        if overrides:
            self.config = _merge(self.config, overrides)
        # 不変条件はここで一度検証しておく
        self.model_config
        self.train_config

    def _load_config(self) -> Dict[str, Dict[str, Any]]:
        """設定ファイルを読み込む"""
        if self.config_path is None:
            return copy.deepcopy(DEFAULTS)
        try:
            with open(self.config_path, "rb") as f:
                raw = tomllib.load(f)
        except FileNotFoundError:
            raise ConfigError(f"設定ファイルが見つかりません: {self.config_path}")
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"設定ファイルの形式が正しくありません: {e}") from e
        return _merge(DEFAULTS, raw)

    @property
    def backbone_config(self) -> BackboneConfig:
        """バックボーン構成を取得"""
        bb = self.config["backbone"]
        return BackboneConfig.from_variant(bb["arch"], bb["variant"])

    @property
    def backbone_weights(self) -> Optional[Path]:
        """事前学習済み重みのパス（空文字なら乱数初期化）"""
        path = self.config["backbone"]["weights"]
        return Path(path) if path else None

    @property
    def backbone_init_seed(self) -> int:
        return self.config["backbone"]["init_seed"]

    @property
    def stage_mask(self) -> Tuple[bool, ...]:
        """プロンプトを注入するステージ"""
        return tuple(bool(v) for v in self.config["backbone"]["stage_mask"])

    @property
    def cpg_config(self) -> CPGConfig:
        return CPGConfig(**self.config["cpg"])

    @property
    def cpd_config(self) -> CPDConfig:
        cpd = self.config["cpd"]
        return CPDConfig(
            fusion=cpd["fusion"],
            mlp_sharing=cpd["mlp_sharing"],
            handcrafted=HandcraftedConfig(mask_ratio=cpd["fft_mask_ratio"]),
            use_handcrafted=cpd["use_handcrafted"],
            use_consensus=cpd["use_consensus"],
        )

    @property
    def head_config(self) -> HeadConfig:
        head = self.config["head"]
        return HeadConfig(
            d=head["head_dim"],
            aspp_dim=head["aspp_dim"],
            aspp_rates=tuple(head["aspp_rates"]),
            num_classes=head["num_classes"],
            use_segformer_head=head["use_segformer_head"],
        )

    @property
    def model_config(self) -> ModelConfig:
        """アーキテクチャ構成一式を取得"""
        return ModelConfig(
            backbone=self.backbone_config,
            cpg=self.cpg_config,
            cpd=self.cpd_config,
            head=self.head_config,
            stage_mask=self.stage_mask,
        )

    @property
    def loss_weights(self) -> LossWeights:
        loss = self.config["loss"]
        return LossWeights(
            alpha=loss["alpha"],
            beta=loss["beta"],
            lam=loss["lambda"],
            use_classifier=loss["use_classifier"],
        )

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.config["train"])

    @property
    def infer_config(self) -> InferConfig:
        return InferConfig(**self.config["infer"])

    @property
    def show_progress(self) -> bool:
        """プログレス表示するかどうかを取得"""
        return self.config["ui"]["show_progress"]
