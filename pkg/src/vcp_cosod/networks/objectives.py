"""
目的関数

最終マップ・ステージごとの推定マップ（BCE + soft IoU）と
グループ分類（交差エントロピー）の重み付き和。
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import torch
import torch.nn.functional as F

from ..core.exceptions import ShapeMismatchError
from ..core.models import LossWeights

IOU_EPS = 1e-6


def _check_binary(gt: torch.Tensor):
    if not torch.all((gt == 0) | (gt == 1)):
        raise ValueError("GT マスクは {0, 1} の値のみを含む必要があります")


def map_loss(pred_logits: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """
    画素平均 BCE と画像ごとの soft IoU 損失（のバッチ平均）の和

    Args:
        pred_logits: [N, 1, h, w]
        gt: [N, 1, h, w] の {0, 1}

    Returns:
        スカラー
    """
    if pred_logits.shape != gt.shape:
        raise ShapeMismatchError(f"予測 {tuple(pred_logits.shape)} と GT {tuple(gt.shape)} の形状が異なります")
    _check_binary(gt)
    bce = F.binary_cross_entropy_with_logits(pred_logits, gt)
    prob = torch.sigmoid(pred_logits)
    inter = (prob * gt).sum(dim=(1, 2, 3))
    union = prob.sum(dim=(1, 2, 3)) + gt.sum(dim=(1, 2, 3)) - inter
    iou = 1 - (inter + IOU_EPS) / (union + IOU_EPS)
    return bce + iou.mean()


def resize_gt(gt: torch.Tensor, size: Sequence[int]) -> torch.Tensor:
    """補助マップ解像度への最近傍ダウンサンプル（各セルの中心画素を取る。値は {0, 1} のまま）"""
    if tuple(gt.shape[-2:]) == tuple(size):
        return gt
    return F.interpolate(gt, size=tuple(size), mode="nearest-exact")


# 損失ログの補助項の列（ステージ 1..4、未調整ステージは 0）
AUX_COLUMNS = tuple(f"aux{s + 1}" for s in range(4))


@dataclass
class LossBreakdown:
    """重み付き合計と各項（重み付け前）の内訳"""
    total: torch.Tensor
    final: torch.Tensor
    aux: List[torch.Tensor] = field(default_factory=list)
    ce: Optional[torch.Tensor] = None
    aux_stages: List[int] = field(default_factory=list)

    def _aux_names(self) -> List[str]:
        stages = self.aux_stages or range(len(self.aux))
        return [f"aux{s + 1}" for s in stages]

    def as_dict(self) -> Dict[str, float]:
        row = {"total": self.total.detach().item(), "final": self.final.detach().item()}
        row.update(dict.fromkeys(AUX_COLUMNS, 0.0))
        row.update({name: a.detach().item() for name, a in zip(self._aux_names(), self.aux)})
        row["ce"] = self.ce.detach().item() if self.ce is not None else 0.0
        return row

    def non_finite_term(self) -> Optional[str]:
        """非有限の項の名前（無ければ None）"""
        terms = {"final": self.final, "ce": self.ce}
        terms.update(zip(self._aux_names(), self.aux))
        for name, value in terms.items():
            if value is not None and not torch.isfinite(value):
                return name
        if not torch.isfinite(self.total):
            return "total"
        return None


def combine_terms(final: torch.Tensor, aux: Sequence[torch.Tensor], ce: Optional[torch.Tensor],
                  weights: LossWeights) -> torch.Tensor:
    """alpha·final + beta·Σaux + lam·ce"""
    total = weights.alpha * final
    if weights.beta > 0:
        for term in aux:
            total = total + weights.beta * term
    if ce is not None and weights.use_classifier:
        total = total + weights.lam * ce
    return total


def total_loss(prediction: torch.Tensor, aux_logits: Sequence[torch.Tensor], class_logits: torch.Tensor,
               gt: torch.Tensor, labels: torch.Tensor, weights: LossWeights,
               aux_stages: Optional[Sequence[int]] = None) -> LossBreakdown:
    """
    複合目的関数

    Args:
        prediction: 最終予測ロジット [N, 1, H, W]
        aux_logits: ステージごとの推定マップロジット
        class_logits: 分類ロジット [N, num_classes]
        gt: GT マスク [N, 1, H, W]
        labels: カテゴリラベル [N]
        weights: 各項の重み
        aux_stages: aux_logits の各要素のステージ番号（0 始まり。省略時は先頭から 0, 1, ...）

    Returns:
        LossBreakdown
    """
    num_classes = class_logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"ラベルが範囲外です（0..{num_classes - 1}）: {labels.tolist()}")

    final = map_loss(prediction, gt)
    aux = []
    for logits in aux_logits:
        if weights.beta == 0:
            # beta=0 のときは補助マップを目的関数から切り離し、記録のみ行う
            logits = logits.detach()
        aux.append(map_loss(logits, resize_gt(gt, logits.shape[-2:])))
    ce = F.cross_entropy(class_logits, labels)
    if not weights.use_classifier:
        ce = ce.detach()
    if aux_stages is not None and len(aux_stages) != len(aux):
        raise ValueError(f"aux_stages の長さ {len(aux_stages)} が補助マップ数 {len(aux)} と異なります")
    return LossBreakdown(combine_terms(final, aux, ce, weights), final, aux, ce, list(aux_stages or []))
