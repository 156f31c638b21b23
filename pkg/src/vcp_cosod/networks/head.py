"""
予測ヘッド

4ステージ特徴を統一次元 d に射影し、最深部に ASPP、FPN 型のトップダウン
復号で最終マップを得る。ASPP 出力のプーリングからグループ分類を行う。
"""

from typing import List, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core.exceptions import ConfigError, ShapeMismatchError
from ..core.models import HeadConfig, HeadOutput, StageEmbedding


def conv_bn_relu(in_channels: int, out_channels: int, kernel_size: int = 1, dilation: int = 1) -> nn.Sequential:
    padding = dilation * (kernel_size // 2)
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size, padding=padding, dilation=dilation, bias=False),
        nn.BatchNorm2d(out_channels),
        nn.ReLU(inplace=True),
    )


class ASPPPooling(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.conv = conv_bn_relu(in_channels, out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        size = x.shape[-2:]
        return F.interpolate(self.conv(self.pool(x)), size=size, mode="bilinear", align_corners=False)


class ASPP(nn.Module):
    """rate=1 は 1x1、それ以外は 3x3 の atrous 畳み込み + 画像プーリング枝"""

    def __init__(self, in_channels: int, out_channels: int, rates: Sequence[int]):
        super().__init__()
        branches: List[nn.Module] = [
            conv_bn_relu(in_channels, out_channels) if rate == 1
            else conv_bn_relu(in_channels, out_channels, 3, rate)
            for rate in rates
        ]
        branches.append(ASPPPooling(in_channels, out_channels))
        self.branches = nn.ModuleList(branches)
        self.project = conv_bn_relu(len(branches) * out_channels, out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.project(torch.cat([b(x) for b in self.branches], dim=1))


def check_shape_ladder(features: Sequence[StageEmbedding]):
    """ステージ間で空間サイズが半分ずつになっていることを確認"""
    if len(features) != 4:
        raise ShapeMismatchError(f"4ステージ分の特徴が必要です: {len(features)}")
    for upper, lower in zip(features[:-1], features[1:]):
        if (upper.height, upper.width) != (lower.height * 2, lower.width * 2):
            raise ShapeMismatchError(
                f"特徴の空間サイズが段階的に半分になっていません: "
                f"{upper.height}x{upper.width} -> {lower.height}x{lower.width}"
            )


class PredictionHead(nn.Module):
    """ASPP + FPN 型デコーダ + 線形分類器"""

    def __init__(self, channels: Sequence[int], config: HeadConfig):
        super().__init__()
        d, w = config.d, config.aspp_dim
        self.lateral = nn.ModuleList(nn.Conv2d(c, d, 1) for c in channels)
        self.aspp = ASPP(d, w, config.aspp_rates)
        self.reduce = conv_bn_relu(w, d) if w != d else nn.Identity()
        self.smooth = nn.ModuleList(conv_bn_relu(d, d, 3) for _ in range(len(channels) - 1))
        self.predictor = nn.Conv2d(d, 1, 1)
        self.classifier = nn.Linear(w, config.num_classes)

    def forward(self, features: Sequence[StageEmbedding], out_size: Tuple[int, int]) -> HeadOutput:
        """
        Args:
            features: F_1..F_4
            out_size: 入力画像サイズ (H, W)

        Returns:
            HeadOutput(予測ロジット [N, 1, H, W], 分類ロジット [N, num_classes])
        """
        check_shape_ladder(features)
        maps = [lat(f.to_map()) for lat, f in zip(self.lateral, features)]
        context = self.aspp(maps[-1])
        class_logits = self.classifier(context.mean(dim=(2, 3)))
        x = self.reduce(context)
        for s in reversed(range(len(maps) - 1)):
            up = F.interpolate(x, size=maps[s].shape[-2:], mode="bilinear", align_corners=False)
            x = self.smooth[s](maps[s] + up)
        prediction = F.interpolate(self.predictor(x), size=tuple(out_size), mode="bilinear", align_corners=False)
        return HeadOutput(prediction, class_logits)


class SegFormerHead(nn.Module):
    """全 MLP 型 SegFormer デコーダ（比較用の差し替えヘッド）"""

    def __init__(self, channels: Sequence[int], config: HeadConfig):
        super().__init__()
        d = config.d
        self.linear = nn.ModuleList(nn.Linear(c, d) for c in channels)
        self.fuse = conv_bn_relu(len(channels) * d, d)
        self.predictor = nn.Conv2d(d, 1, 1)
        self.classifier = nn.Linear(d, config.num_classes)

    def forward(self, features: Sequence[StageEmbedding], out_size: Tuple[int, int]) -> HeadOutput:
        check_shape_ladder(features)
        size = (features[0].height, features[0].width)
        maps = [
            F.interpolate(StageEmbedding(lin(f.tokens), f.height, f.width).to_map(),
                          size=size, mode="bilinear", align_corners=False)
            for lin, f in zip(self.linear, features)
        ]
        x = self.fuse(torch.cat(maps[::-1], dim=1))
        prediction = F.interpolate(self.predictor(x), size=tuple(out_size), mode="bilinear", align_corners=False)
        return HeadOutput(prediction, self.classifier(x.mean(dim=(2, 3))))


def build_head(channels: Sequence[int], config: HeadConfig) -> nn.Module:
    if config.num_classes < 1:
        raise ConfigError("num_classes が未解決です（0 はデータセットから決定する指定）")
    if config.use_segformer_head:
        return SegFormerHead(channels, config)
    return PredictionHead(channels, config)
