"""
凍結 Mix Transformer バックボーン

SegFormer の階層型エンコーダ（4ステージ、重なりありパッチ埋め込み、
空間縮約アテンション、Mix-FFN）を実装する。各 Transformer 層の入力
（最初の LayerNorm の手前）にプロンプトを要素ごとに加算できる。
"""

import logging
import math
import pickle
import re
import zipfile
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np
import torch
import torch.nn as nn
from einops import rearrange
from timm.layers import trunc_normal_

from ..core.exceptions import BackboneWeightsError, NumericalInstabilityError, ShapeMismatchError
from ..core.models import BackboneConfig, StageEmbedding, StageSpec

logger = logging.getLogger(__name__)

# (stage, layer, stage embedding) -> prompt [N, L_s, C_s] or None
PromptProvider = Callable[[int, int, StageEmbedding], Optional[torch.Tensor]]


class OverlapPatchEmbed(nn.Module):
    """重なりありパッチ埋め込み（stride < kernel の畳み込み + LayerNorm）"""

    def __init__(self, spec: StageSpec, in_channels: int):
        super().__init__()
        self.proj = nn.Conv2d(in_channels, spec.channels, spec.patch_size,
                              stride=spec.stride, padding=spec.patch_size // 2)
        self.norm = nn.LayerNorm(spec.channels)

    def forward(self, x: torch.Tensor) -> StageEmbedding:
        x = self.proj(x)
        _, _, h, w = x.shape
        return StageEmbedding(self.norm(rearrange(x, "n c h w -> n (h w) c")), h, w)


class EfficientSelfAttention(nn.Module):
    """K/V を sr_ratio で空間縮約するマルチヘッドアテンション"""

    def __init__(self, dim: int, heads: int, sr_ratio: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.sr_ratio = sr_ratio
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, dim * 2)
        self.proj = nn.Linear(dim, dim)
        if sr_ratio > 1:
            self.sr = nn.Conv2d(dim, dim, sr_ratio, stride=sr_ratio)
            self.norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor, h: int, w: int) -> torch.Tensor:
        q = rearrange(self.q(x), "n l (m d) -> n m l d", m=self.heads)
        if self.sr_ratio > 1:
            x = rearrange(x, "n (h w) c -> n c h w", h=h, w=w)
            x = self.norm(rearrange(self.sr(x), "n c h w -> n (h w) c"))
        k, v = rearrange(self.kv(x), "n l (two m d) -> two n m l d", two=2, m=self.heads)
        attn = (q @ k.transpose(-2, -1) * self.scale).softmax(dim=-1)
        return self.proj(rearrange(attn @ v, "n m l d -> n l (m d)"))


class DWConv(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dwconv = nn.Conv2d(dim, dim, 3, padding=1, groups=dim)

    def forward(self, x: torch.Tensor, h: int, w: int) -> torch.Tensor:
        x = self.dwconv(rearrange(x, "n (h w) c -> n c h w", h=h, w=w))
        return rearrange(x, "n c h w -> n (h w) c")


class MixFFN(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.dwconv = DWConv(hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor, h: int, w: int) -> torch.Tensor:
        return self.fc2(self.act(self.dwconv(self.fc1(x), h, w)))


class TransformerBlock(nn.Module):
    """プロンプト注入点を持つ Transformer 層"""

    def __init__(self, spec: StageSpec):
        super().__init__()
        self.norm1 = nn.LayerNorm(spec.channels)
        self.attn = EfficientSelfAttention(spec.channels, spec.heads, spec.sr_ratio)
        self.norm2 = nn.LayerNorm(spec.channels)
        self.mlp = MixFFN(spec.channels, int(spec.channels * spec.mlp_ratio))

    def forward(self, x: torch.Tensor, h: int, w: int,
                prompt: Optional[torch.Tensor] = None) -> torch.Tensor:
        if prompt is not None:
            x = x + prompt
        x = x + self.attn(self.norm1(x), h, w)
        return x + self.mlp(self.norm2(x), h, w)


class MixTransformer(nn.Module):
    """凍結された4ステージ階層型 Vision Transformer"""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        in_channels = [config.in_channels] + [s.channels for s in config.stages[:-1]]
        self.patch_embeds = nn.ModuleList(
            OverlapPatchEmbed(spec, c_in) for spec, c_in in zip(config.stages, in_channels)
        )
        self.blocks = nn.ModuleList(
            nn.ModuleList(TransformerBlock(spec) for _ in range(spec.depth)) for spec in config.stages
        )
        self.norms = nn.ModuleList(nn.LayerNorm(spec.channels) for spec in config.stages)
        self.apply(self._init_weights)
        self.freeze()

    @staticmethod
    def _init_weights(m: nn.Module):
        if isinstance(m, nn.Linear):
            trunc_normal_(m.weight, std=0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Conv2d):
            fan_out = m.kernel_size[0] * m.kernel_size[1] * m.out_channels // m.groups
            nn.init.normal_(m.weight, 0.0, math.sqrt(2.0 / fan_out))
            if m.bias is not None:
                nn.init.zeros_(m.bias)

    def freeze(self) -> "MixTransformer":
        """全パラメータを学習対象外にする"""
        for p in self.parameters():
            p.requires_grad_(False)
        return super().train(False)

    def train(self, mode: bool = True) -> "MixTransformer":
        # 凍結モデルは常に推論モード
        return super().train(False)

    @property
    def num_stages(self) -> int:
        return len(self.config.stages)

    def embed(self, stage: int, x: torch.Tensor) -> StageEmbedding:
        """ステージ入力（画像または前段の特徴マップ）をトークン列に変換"""
        return self.patch_embeds[stage](x)

    def run_stage(self, stage: int, embedding: StageEmbedding,
                  prompt_provider: Optional[PromptProvider] = None) -> StageEmbedding:
        """1ステージ分の Transformer 層を実行（各層の入力にプロンプトを加算）"""
        x, h, w = embedding.tokens, embedding.height, embedding.width
        for n, block in enumerate(self.blocks[stage]):
            prompt = prompt_provider(stage, n, embedding) if prompt_provider else None
            if prompt is not None and prompt.shape != x.shape:
                raise ShapeMismatchError(
                    f"ステージ{stage + 1} 層{n}: プロンプト形状 {tuple(prompt.shape)} "
                    f"がトークン形状 {tuple(x.shape)} と一致しません"
                )
            x = block(x, h, w, prompt)
        x = self.norms[stage](x)
        if not torch.isfinite(x).all():
            raise NumericalInstabilityError(f"ステージ{stage + 1} の出力に非有限値が含まれます")
        return StageEmbedding(x, h, w)

    def forward_with_prompts(self, images: torch.Tensor,
                             prompt_provider: Optional[PromptProvider] = None) -> List[StageEmbedding]:
        """
        プロンプト付き順伝播

        Args:
            images: 入力画像 [N, 3, H, W]（H, W は32の倍数）
            prompt_provider: (stage, layer, E_s) -> [N, L_s, C_s] を返すコールバック

        Returns:
            4ステージ分の出力特徴 F_1..F_4
        """
        check_input_size(images)
        features = []
        x = images
        for stage in range(self.num_stages):
            embedding = self.embed(stage, x)
            out = self.run_stage(stage, embedding, prompt_provider)
            features.append(out)
            x = out.to_map()
        return features

    def forward(self, images: torch.Tensor) -> List[StageEmbedding]:
        return self.forward_with_prompts(images, None)


def check_input_size(images: torch.Tensor):
    """入力画像の形状を検査（[N, 3, H, W] かつ H, W が32の倍数）"""
    if images.dim() != 4:
        raise ShapeMismatchError(f"入力は [N, C, H, W] である必要があります: {tuple(images.shape)}")
    h, w = images.shape[-2:]
    if h % 32 or w % 32:
        raise ShapeMismatchError(f"入力サイズ {h}x{w} は32で割り切れる必要があります")


_KEY_RULES = [
    (re.compile(r"^patch_embed(\d)\."), lambda m: f"patch_embeds.{int(m.group(1)) - 1}."),
    (re.compile(r"^block(\d)\."), lambda m: f"blocks.{int(m.group(1)) - 1}."),
    (re.compile(r"^norm(\d)\."), lambda m: f"norms.{int(m.group(1)) - 1}."),
]


def remap_segformer_key(key: str) -> str:
    """公開 SegFormer (mmseg) の重み名を本実装の名前に変換"""
    for prefix in ("module.", "backbone."):
        if key.startswith(prefix):
            key = key[len(prefix):]
    for pattern, repl in _KEY_RULES:
        key, count = pattern.subn(repl, key, count=1)
        if count:
            break
    return key


def _read_weight_file(path: Path) -> Dict[str, torch.Tensor]:
    try:
        if path.suffix == ".npz":
            with np.load(path) as archive:
                return {k: torch.from_numpy(archive[k]) for k in archive.files}
        state = torch.load(path, map_location="cpu", weights_only=True)
    except (ValueError, RuntimeError, EOFError, pickle.UnpicklingError, zipfile.BadZipFile) as e:
        raise BackboneWeightsError(f"バックボーン重みファイルを読み込めません: {path}: {e}") from e
    for wrapper in ("state_dict", "model"):
        if isinstance(state, dict) and wrapper in state and isinstance(state[wrapper], dict):
            state = state[wrapper]
    if not isinstance(state, dict):
        raise BackboneWeightsError(f"バックボーン重みファイルの形式が正しくありません: {path}")
    return dict(state)


def load_pretrained(path: Union[str, Path], config: BackboneConfig) -> MixTransformer:
    """
    事前学習済み重みを読み込んで凍結バックボーンを構築

    Args:
        path: 重みファイル（torch.save の state_dict または .npz）
        config: バックボーン構成

    Returns:
        全パラメータが凍結された MixTransformer

    Raises:
        BackboneWeightsError: ファイルが無い、キーの欠落、形状不一致
    """
    path = Path(path)
    if not path.exists():
        raise BackboneWeightsError(f"バックボーン重みファイルが見つかりません: {path}")

    model = MixTransformer(config)
    expected = model.state_dict()
    loaded = {remap_segformer_key(k): v for k, v in _read_weight_file(path).items()}

    unknown = sorted(k for k in loaded if k not in expected)
    missing = sorted(k for k in expected if k not in loaded)
    mismatched = sorted(
        k for k in expected if k in loaded and tuple(loaded[k].shape) != tuple(expected[k].shape)
    )
    if unknown:
        logger.warning("未使用の重みキー %d 個を無視します（例: %s）", len(unknown), unknown[:3])
    if mismatched:
        details = ", ".join(
            f"{k} {tuple(loaded[k].shape)}≠{tuple(expected[k].shape)}" for k in mismatched
        )
        raise BackboneWeightsError(f"形状が一致しない重みがあります: {details}")
    if missing:
        raise BackboneWeightsError(f"重みファイルに不足しているキーがあります: {', '.join(missing)}")

    model.load_state_dict({k: loaded[k] for k in expected}, strict=True)
    logger.info("バックボーン重みを読み込みました: %s (%d tensors)", path, len(expected))
    return model.freeze()


def build_backbone(config: BackboneConfig, weights: Optional[Union[str, Path]] = None,
                   init_seed: int = 0) -> MixTransformer:
    """重みファイルがあれば読み込み、無ければシード固定の乱数初期化で構築"""
    if weights:
        return load_pretrained(weights, config)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(init_seed)
        model = MixTransformer(config)
    logger.info("バックボーンを乱数初期化しました (variant=%s, seed=%d)", config.variant, init_seed)
    return model
