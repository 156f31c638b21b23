"""
学習可能パラメータ数の集計

モデルは meta デバイス上に組み立てるため、B4 規模でも重みの確保は行わない。
"""

import dataclasses
from dataclasses import dataclass
from typing import Dict, List, Optional

import torch

from ..core.exceptions import ConfigError
from ..core.models import ModelConfig
from ..networks.backbone import MixTransformer
from ..networks.model import VCPModel, count_tunable_params

BYTES_PER_PARAM = 4
REPORT_NUM_CLASSES = 291
MODULE_COLUMNS = ("cpg", "handcrafted", "cpd", "head")


def _with(config: ModelConfig, cpg: Optional[dict] = None, cpd: Optional[dict] = None,
          head: Optional[dict] = None, stage_mask=None) -> ModelConfig:
    return dataclasses.replace(
        config,
        cpg=dataclasses.replace(config.cpg, **(cpg or {})),
        cpd=dataclasses.replace(config.cpd, **(cpd or {})),
        head=dataclasses.replace(config.head, **(head or {})),
        stage_mask=tuple(stage_mask) if stage_mask is not None else config.stage_mask,
    )


VARIANTS = {
    "default": {},
    "r8": {"cpg": {"r": 8}},
    "r8_d96": {"cpg": {"r": 8}, "head": {"d": 96}},
    "r8_share": {"cpg": {"r": 8}, "cpd": {"mlp_sharing": "share"}},
    "share": {"cpd": {"mlp_sharing": "share"}},
    "unshare": {"cpd": {"mlp_sharing": "unshare"}},
    "stage1": {"stage_mask": (True, False, False, False)},
    "stage12": {"stage_mask": (True, True, False, False)},
    "stage123": {"stage_mask": (True, True, True, False)},
}


@dataclass
class ParamRow:
    name: str
    counts: Dict[str, int]

    @property
    def total(self) -> int:
        return self.counts["total"]

    @property
    def size_mb(self) -> float:
        """fp32 で保存した場合の推定サイズ（MB = 10^6 バイト）"""
        return BYTES_PER_PARAM * self.total / 1e6


def variant_config(base: ModelConfig, name: str) -> ModelConfig:
    if name not in VARIANTS:
        raise ConfigError(f"未知のバリアントです: {name}（{', '.join(VARIANTS)}）")
    return _with(base, **VARIANTS[name])


def count_params(config: ModelConfig) -> Dict[str, int]:
    """構成からモジュール別の学習可能パラメータ数を数える"""
    if config.head.num_classes == 0:
        config = _with(config, head={"num_classes": REPORT_NUM_CLASSES})
    with torch.device("meta"):
        model = VCPModel(config, MixTransformer(config.backbone).freeze())
    return count_tunable_params(model)


def report_params(config: ModelConfig, variants: bool = False) -> List[ParamRow]:
    """
    パラメータ表を作る

    Args:
        config: 基準となるモデル構成
        variants: True なら比較用バリアントの行も加える
    """
    names = list(VARIANTS) if variants else ["default"]
    return [ParamRow(name, count_params(variant_config(config, name))) for name in names]


def print_param_table(rows: List[ParamRow]):
    """パラメータ表を表示"""
    header = f"{'variant':<12}" + "".join(f"{c:>13}" for c in MODULE_COLUMNS) + f"{'total':>13}{'size(MB)':>10}"
    print(header)
    print("-" * len(header))
    for row in rows:
        print(f"{row.name:<12}" + "".join(f"{row.counts[c]:>13,}" for c in MODULE_COLUMNS)
              + f"{row.total:>13,}{row.size_mb:>10.2f}")
