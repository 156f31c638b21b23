"""
データモデル定義

設定系（StageSpec, CPGConfig ...）と、ネットワーク間を流れる中間表現
（StageEmbedding, CPGOutput ...）をまとめて定義する。
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch
from einops import rearrange

from .exceptions import ConfigError, DatasetError, ShapeMismatchError


FUSION_MODES = ("concat", "add")
SHARING_MODES = ("adaptive", "share", "unshare")


@dataclass(frozen=True)
class StageSpec:
    """Mix Transformer の1ステージ分の構成"""
    patch_size: int
    stride: int
    channels: int
    depth: int
    heads: int
    mlp_ratio: float = 4.0
    sr_ratio: int = 1

    def __post_init__(self):
        if min(self.channels, self.depth, self.heads) < 1:
            raise ConfigError(f"channels/depth/heads は1以上が必要です: {self}")
        if self.stride > self.patch_size:
            raise ConfigError(f"stride ({self.stride}) が patch_size ({self.patch_size}) を超えています")
        if self.channels % self.heads:
            raise ConfigError(f"channels ({self.channels}) が heads ({self.heads}) で割り切れません")


@dataclass(frozen=True)
class BackboneConfig:
    """4つの StageSpec からなるバックボーン構成"""
    stages: Tuple[StageSpec, ...]
    arch: str = "mit"
    variant: str = "b4"
    in_channels: int = 3

    def __post_init__(self):
        if len(self.stages) != 4:
            raise ConfigError(f"ステージ数は4である必要があります: {len(self.stages)}")
        if self.arch != "mit":
            raise ConfigError(f"未対応のバックボーン arch です: {self.arch}（mit のみ実装）")

    @property
    def channels(self) -> Tuple[int, ...]:
        return tuple(s.channels for s in self.stages)

    @property
    def depths(self) -> Tuple[int, ...]:
        return tuple(s.depth for s in self.stages)

    @classmethod
    def mit_b4(cls) -> "BackboneConfig":
        """公開 SegFormer MiT-B4 の次元構成"""
        return cls(stages=(
            StageSpec(7, 4, 64, 3, 1, 4.0, 8),
            StageSpec(3, 2, 128, 8, 2, 4.0, 4),
            StageSpec(3, 2, 320, 27, 5, 4.0, 2),
            StageSpec(3, 2, 512, 3, 8, 4.0, 1),
        ), variant="b4")

    @classmethod
    def tiny(cls) -> "BackboneConfig":
        """テスト・トイデータ用の極小構成"""
        return cls(stages=(
            StageSpec(7, 4, 8, 1, 1, 4.0, 8),
            StageSpec(3, 2, 16, 1, 1, 4.0, 4),
            StageSpec(3, 2, 32, 1, 1, 4.0, 2),
            StageSpec(3, 2, 64, 1, 1, 4.0, 1),
        ), variant="tiny")

    @classmethod
    def from_variant(cls, arch: str, variant: str) -> "BackboneConfig":
        if arch != "mit":
            raise ConfigError(f"未対応のバックボーン arch です: {arch}（mit のみ実装）")
        presets = {"b4": cls.mit_b4, "tiny": cls.tiny}
        if variant not in presets:
            raise ConfigError(f"未知のバックボーン variant です: {variant}（{', '.join(presets)}）")
        return presets[variant]()


@dataclass(frozen=True)
class CPGConfig:
    """コンセンサスプロンプト生成器の設定"""
    r: int = 4
    j: int = 35
    k: int = 32
    seed_mlp_hidden: int = 256
    seed_mlp_depth: int = 2

    def __post_init__(self):
        if self.r < 1:
            raise ConfigError(f"r は1以上が必要です: {self.r}")
        if self.j < 1:
            raise ConfigError(f"j は1以上が必要です: {self.j}")
        if self.k < 1:
            raise ConfigError(f"k は1以上が必要です: {self.k}")
        if self.seed_mlp_hidden < 1 or self.seed_mlp_depth < 0:
            raise ConfigError("seed_mlp_hidden >= 1, seed_mlp_depth >= 0 が必要です")

    def reduced_channels(self, channels: int) -> int:
        """C_r = C_s / r"""
        if channels % self.r:
            raise ConfigError(f"チャネル数 {channels} が r={self.r} で割り切れません")
        return channels // self.r


@dataclass(frozen=True)
class HandcraftedConfig:
    """FFT 高周波プロンプトの設定"""
    mask_ratio: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"fft_mask_ratio は (0, 1) の範囲で指定してください: {self.mask_ratio}")


@dataclass(frozen=True)
class CPDConfig:
    """コンセンサスプロンプト分配器の設定"""
    fusion: str = "concat"
    mlp_sharing: str = "adaptive"
    handcrafted: HandcraftedConfig = field(default_factory=HandcraftedConfig)
    use_handcrafted: bool = True
    use_consensus: bool = True

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion は {FUSION_MODES} のいずれか: {self.fusion}")
        if self.mlp_sharing not in SHARING_MODES:
            raise ConfigError(f"mlp_sharing は {SHARING_MODES} のいずれか: {self.mlp_sharing}")

    def fused_width(self, reduced: int) -> int:
        """融合プロンプトのチャネル幅"""
        return 2 * reduced if self.fusion == "concat" else reduced


@dataclass(frozen=True)
class HeadConfig:
    """予測ヘッドの設定"""
    d: int = 128
    aspp_dim: int = 160
    aspp_rates: Tuple[int, ...] = (1, 6, 12, 18)
    num_classes: int = 291
    use_segformer_head: bool = False

    def __post_init__(self):
        if self.d < 8:
            raise ConfigError(f"head_dim は8以上が必要です: {self.d}")
        if self.aspp_dim < 1 or len(self.aspp_rates) < 1:
            raise ConfigError("aspp_dim と aspp_rates を正しく指定してください")
        if self.num_classes < 0:
            raise ConfigError(f"num_classes は0以上が必要です: {self.num_classes}")


@dataclass(frozen=True)
class LossWeights:
    """目的関数の重み（α, β, λ）"""
    alpha: float = 10.0
    beta: float = 2.0
    lam: float = 0.1
    use_classifier: bool = True

    def __post_init__(self):
        if min(self.alpha, self.beta, self.lam) < 0:
            raise ConfigError(f"損失の重みは非負である必要があります: {self}")


@dataclass(frozen=True)
class TrainConfig:
    """学習ハーネスの設定"""
    lr: float = 5e-4
    lr_final: float = 1e-4
    epochs: int = 100
    steps_per_epoch: int = 0
    max_steps: int = 0
    weight_decay: float = 0.01
    input_size: int = 288
    seed: int = 0
    max_group_size: int = 16
    log_every: int = 10
    device: str = "cpu"

    def __post_init__(self):
        if not self.lr > self.lr_final > 0:
            raise ConfigError(f"lr > lr_final > 0 が必要です: lr={self.lr}, lr_final={self.lr_final}")
        if self.epochs < 0 or self.steps_per_epoch < 0 or self.max_steps < 0:
            raise ConfigError("epochs / steps_per_epoch / max_steps は非負である必要があります")
        if self.input_size % 32:
            raise ConfigError(f"input_size は32の倍数である必要があります: {self.input_size}")
        if self.max_group_size < 1:
            raise ConfigError(f"max_group_size は1以上が必要です: {self.max_group_size}")


@dataclass(frozen=True)
class InferConfig:
    """推論の設定（chunk_size=0 でグループ一括）"""
    chunk_size: int = 0

    def __post_init__(self):
        if self.chunk_size < 0:
            raise ConfigError(f"chunk_size は非負である必要があります: {self.chunk_size}")


@dataclass(frozen=True)
class ModelConfig:
    """モデル全体のアーキテクチャ構成（フィンガープリントの対象）"""
    backbone: BackboneConfig = field(default_factory=BackboneConfig.mit_b4)
    cpg: CPGConfig = field(default_factory=CPGConfig)
    cpd: CPDConfig = field(default_factory=CPDConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    stage_mask: Tuple[bool, ...] = (True, True, True, True)

    def __post_init__(self):
        if len(self.stage_mask) != 4:
            raise ConfigError(f"stage_mask は4要素である必要があります: {self.stage_mask}")
        for channels in self.backbone.channels:
            self.cpg.reduced_channels(channels)

    @property
    def tuned_stages(self) -> List[int]:
        return [s for s, on in enumerate(self.stage_mask) if on]

    def to_dict(self) -> Dict[str, Any]:
        """フィンガープリント用の辞書（重みの形状を決める項目のみ）"""
        return {
            "backbone": {
                "arch": self.backbone.arch,
                "variant": self.backbone.variant,
                "stages": [asdict(s) for s in self.backbone.stages],
            },
            "cpg": asdict(self.cpg),
            "cpd": asdict(self.cpd),
            "head": {**asdict(self.head), "aspp_rates": list(self.head.aspp_rates)},
            "stage_mask": list(self.stage_mask),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        """to_dict の逆変換（チェックポイントヘッダからの復元用）"""
        try:
            bb = data["backbone"]
            cpd = dict(data["cpd"])
            handcrafted = HandcraftedConfig(**cpd.pop("handcrafted"))
            head = dict(data["head"])
            head["aspp_rates"] = tuple(head["aspp_rates"])
            return cls(
                backbone=BackboneConfig(
                    stages=tuple(StageSpec(**s) for s in bb["stages"]),
                    arch=bb["arch"],
                    variant=bb["variant"],
                ),
                cpg=CPGConfig(**data["cpg"]),
                cpd=CPDConfig(handcrafted=handcrafted, **cpd),
                head=HeadConfig(**head),
                stage_mask=tuple(data["stage_mask"]),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"モデル構成を復元できません: {e}") from e

    @property
    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class StageEmbedding:
    """ステージごとのトークン列 [N, L_s, C_s]"""
    tokens: torch.Tensor
    height: int
    width: int

    def __post_init__(self):
        if self.tokens.dim() != 3 or self.tokens.shape[1] != self.height * self.width:
            raise ShapeMismatchError(
                f"トークン形状 {tuple(self.tokens.shape)} が {self.height}x{self.width} と一致しません"
            )

    @property
    def num_images(self) -> int:
        return self.tokens.shape[0]

    @property
    def channels(self) -> int:
        return self.tokens.shape[2]

    def to_map(self) -> torch.Tensor:
        """[N, L, C] -> [N, C, H, W]"""
        return rearrange(self.tokens, "n (h w) c -> n c h w", h=self.height, w=self.width)


@dataclass
class CPGOutput:
    """CPG の出力"""
    p_em: torch.Tensor
    p_co: torch.Tensor
    saliency: Optional[torch.Tensor] = None
    saliency_logits: Optional[torch.Tensor] = None


@dataclass
class PromptBundle:
    """1ステージ分のプロンプト群"""
    p_em: torch.Tensor
    p_hand: torch.Tensor
    p_co: torch.Tensor
    p_visual_co: torch.Tensor


@dataclass
class HeadOutput:
    """予測ヘッドの出力（ロジット）"""
    prediction: torch.Tensor
    class_logits: torch.Tensor


@dataclass
class VCPOutput:
    """モデル全体の出力"""
    prediction: torch.Tensor
    class_logits: torch.Tensor
    aux_logits: List[torch.Tensor] = field(default_factory=list)
    features: List[StageEmbedding] = field(default_factory=list)
    aux_stages: List[int] = field(default_factory=list)


@dataclass
class ImageGroup:
    """同一カテゴリの画像群とGTマスク"""
    name: str
    images: List[Path]
    masks: List[Path]
    label_index: int

    def __post_init__(self):
        if len(self.images) != len(self.masks) or not self.images:
            raise DatasetError(f"グループ {self.name}: 画像とマスクの数が不正です")

    def __len__(self) -> int:
        return len(self.images)

    def __str__(self) -> str:
        return f"[{self.label_index:3d}] {self.name} ({len(self)} 枚)"


@dataclass(frozen=True)
class BatchSpec:
    """1バッチ分のグループ選択（N = min(N_A, N_B, N_C, 16)）"""
    group_names: Tuple[str, ...]
    n: int


@dataclass
class GroupBatch:
    """サンプリング結果：グループごとの画像インデックス"""
    spec: BatchSpec
    groups: List[ImageGroup]
    indices: List[np.ndarray]


@dataclass
class EvalRecord:
    """データセット単位の評価結果"""
    dataset: str
    s_measure: float
    e_measure: float
    e_measure_max: float
    f_measure: float
    f_measure_max: float
    mae: float
    precision_curve: np.ndarray
    recall_curve: np.ndarray
    fm_curve: np.ndarray
    em_curve: np.ndarray
    num_images: int = 0
    per_group: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def summary(self) -> Dict[str, float]:
        return {
            "S_m": self.s_measure,
            "E_m": self.e_measure,
            "E_m_max": self.e_measure_max,
            "F_m": self.f_measure,
            "F_m_max": self.f_measure_max,
            "MAE": self.mae,
        }


@dataclass
class TunableCheckpoint:
    """学習可能パラメータのみのチェックポイント（バックボーンは含まない）"""
    arrays: Dict[str, torch.Tensor]
    model_config: Dict[str, Any]
    fingerprint: str
    step: int = 0
    format_version: int = 1

    @property
    def num_parameters(self) -> int:
        return sum(t.numel() for t in self.arrays.values() if t.is_floating_point())

    @property
    def size_bytes(self) -> int:
        return sum(t.numel() * t.element_size() for t in self.arrays.values())
