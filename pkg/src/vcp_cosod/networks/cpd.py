"""
コンセンサスプロンプト分配器（CPD）

FFT 高周波成分から手作りプロンプトを作り、埋め込みプロンプト・コンセンサス
プロンプトと融合する。さらに層ごとの MLP で各 Transformer 層の幅に写像する。
"""

import dataclasses
from typing import List, Sequence

import torch
import torch.nn as nn
from timm.layers import trunc_normal_

from ..core.exceptions import ShapeMismatchError
from ..core.models import StageSpec
from .backbone import OverlapPatchEmbed


def high_frequency_component(images: torch.Tensor, mask_ratio: float) -> torch.Tensor:
    """
    中心化スペクトルの低周波正方形を除去した高周波画像

    Args:
        images: [N, C, H, W]
        mask_ratio: 除去する係数の割合 τ（正方形の一辺は sqrt(τ·H·W) 程度）

    Returns:
        逆 FFT の実部 [N, C, H, W]
    """
    h, w = images.shape[-2:]
    if h < 2 or w < 2:
        raise ShapeMismatchError(f"FFT に対して画像サイズが小さすぎます: {h}x{w}")
    spectrum = torch.fft.fftshift(torch.fft.fft2(images), dim=(-2, -1))
    line = int((h * w * mask_ratio) ** 0.5 // 2)
    mask = torch.ones(h, w, dtype=images.dtype, device=images.device)
    mask[h // 2 - line:h // 2 + line, w // 2 - line:w // 2 + line] = 0
    spectrum = spectrum * mask
    return torch.fft.ifft2(torch.fft.ifftshift(spectrum, dim=(-2, -1))).real


class HandcraftedPromptEncoder(nn.Module):
    """高周波画像を多段の重なりありパッチ埋め込みで P_Hand,s に変換"""

    def __init__(self, stages: Sequence[StageSpec], reduced: Sequence[int],
                 mask_ratio: float, in_channels: int = 3):
        super().__init__()
        self.mask_ratio = mask_ratio
        embeds = []
        prev = in_channels
        for spec, cr in zip(stages, reduced):
            embeds.append(OverlapPatchEmbed(dataclasses.replace(spec, channels=cr, heads=1), prev))
            prev = cr
        self.embeds = nn.ModuleList(embeds)

    def forward(self, images: torch.Tensor) -> List[torch.Tensor]:
        x = high_frequency_component(images, self.mask_ratio)
        prompts = []
        for embed in self.embeds:
            emb = embed(x)
            prompts.append(emb.tokens)
            x = emb.to_map()
        return prompts


def fuse_prompts(p_em: torch.Tensor, p_hand: torch.Tensor, p_co: torch.Tensor,
                 fusion: str = "concat") -> torch.Tensor:
    """
    (埋め込み + コンセンサス) と (手作り + コンセンサス) をチャネル方向に連結

    fusion="add" の場合は連結の代わりに2つの和を足し合わせる。
    """
    if not p_em.shape == p_hand.shape == p_co.shape:
        raise ShapeMismatchError(
            f"プロンプト形状が一致しません: {tuple(p_em.shape)}, {tuple(p_hand.shape)}, {tuple(p_co.shape)}"
        )
    em_co = p_em + p_co
    hand_co = p_hand + p_co
    if fusion == "concat":
        return torch.cat([em_co, hand_co], dim=-1)
    return em_co + hand_co


class PromptDisperser(nn.Module):
    """
    融合プロンプト -> 層ごとの down MLP -> GELU -> up MLP で層の幅へ

    sharing:
        adaptive: up はステージ内共有、down は層ごと
        share: 両方ステージ内共有
        unshare: 両方層ごと
    """

    def __init__(self, in_width: int, reduced: int, channels: int, depth: int, sharing: str = "adaptive"):
        super().__init__()
        self.depth = depth
        self.sharing = sharing
        n_down = 1 if sharing == "share" else depth
        n_up = depth if sharing == "unshare" else 1
        self.down = nn.ModuleList(nn.Linear(in_width, reduced) for _ in range(n_down))
        self.up = nn.ModuleList(nn.Linear(reduced, channels) for _ in range(n_up))
        self.act = nn.GELU()
        for m in self.modules():
            if isinstance(m, nn.Linear):
                trunc_normal_(m.weight, std=0.02)
                nn.init.zeros_(m.bias)

    def forward(self, p_visual_co: torch.Tensor, layer: int) -> torch.Tensor:
        if not 0 <= layer < self.depth:
            raise IndexError(f"層インデックス {layer} が範囲外です（depth={self.depth}）")
        down = self.down[layer if len(self.down) > 1 else 0]
        up = self.up[layer if len(self.up) > 1 else 0]
        return up(self.act(down(p_visual_co)))
