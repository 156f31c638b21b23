"""
VCP モデル組み立てモジュール

凍結バックボーンに CPG / 手作りプロンプト / CPD / 予測ヘッドを組み合わせる。
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import torch
import torch.nn as nn

from ..core.exceptions import ShapeMismatchError
from ..core.models import (
    CPGOutput,
    ModelConfig,
    PromptBundle,
    StageEmbedding,
    VCPOutput,
)
from .backbone import MixTransformer, build_backbone, check_input_size
from .cpd import HandcraftedPromptEncoder, PromptDisperser, fuse_prompts
from .cpg import ConsensusPromptGenerator
from .head import build_head

logger = logging.getLogger(__name__)


def _stage_key(stage: int) -> str:
    return f"stage{stage + 1}"


def _concat_outputs(parts: List[CPGOutput]) -> CPGOutput:
    def cat(values):
        return None if values[0] is None else torch.cat(values)
    return CPGOutput(
        torch.cat([p.p_em for p in parts]),
        torch.cat([p.p_co for p in parts]),
        cat([p.saliency for p in parts]),
        cat([p.saliency_logits for p in parts]),
    )


class VCPModel(nn.Module):
    """凍結バックボーン + コンセンサスプロンプト + 予測ヘッド"""

    def __init__(self, config: ModelConfig, backbone: MixTransformer):
        """
        Args:
            config: アーキテクチャ構成（num_classes は解決済みであること）
            backbone: 凍結済みバックボーン
        """
        super().__init__()
        self.config = config
        self.backbone = backbone
        stages = backbone.config.stages
        tuned = config.tuned_stages
        cpg_config, cpd_config = config.cpg, config.cpd
        reduced = [cpg_config.reduced_channels(s.channels) for s in stages]

        self.generators = nn.ModuleDict({
            _stage_key(s): ConsensusPromptGenerator(stages[s].channels, cpg_config, cpd_config.use_consensus)
            for s in tuned
        })
        self.dispersers = nn.ModuleDict({
            _stage_key(s): PromptDisperser(
                cpd_config.fused_width(reduced[s]), reduced[s], stages[s].channels,
                stages[s].depth, cpd_config.mlp_sharing,
            )
            for s in tuned
        })
        self.handcrafted: Optional[HandcraftedPromptEncoder] = None
        if tuned and cpd_config.use_handcrafted:
            deepest = max(tuned) + 1
            self.handcrafted = HandcraftedPromptEncoder(
                stages[:deepest], reduced[:deepest], cpd_config.handcrafted.mask_ratio,
                backbone.config.in_channels,
            )
        self.head = build_head(backbone.config.channels, config.head)

    def tunable_parameters(self) -> List[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def tunable_state_dict(self) -> Dict[str, torch.Tensor]:
        """バックボーン以外のパラメータとバッファ"""
        return {k: v for k, v in self.state_dict().items() if not k.startswith("backbone.")}

    def build_prompts(self, stage: int, cpg_out: CPGOutput,
                      handcrafted: Optional[List[torch.Tensor]]) -> PromptBundle:
        """1ステージ分の P_Em / P_Hand / P_Co を融合"""
        p_hand = handcrafted[stage] if handcrafted is not None else torch.zeros_like(cpg_out.p_em)
        p_visual_co = fuse_prompts(cpg_out.p_em, p_hand, cpg_out.p_co, self.config.cpd.fusion)
        return PromptBundle(cpg_out.p_em, p_hand, cpg_out.p_co, p_visual_co)

    def generate(self, stage: int, embedding: StageEmbedding,
                 group_sizes: Optional[Sequence[int]] = None) -> CPGOutput:
        """CPG をグループごとに実行（コンセンサスはグループ内でのみ共有）"""
        generator = self.generators[_stage_key(stage)]
        if not group_sizes or len(group_sizes) == 1:
            return generator(embedding)
        parts = [
            generator(StageEmbedding(tokens, embedding.height, embedding.width))
            for tokens in embedding.tokens.split(list(group_sizes))
        ]
        return _concat_outputs(parts)

    def forward(self, images: torch.Tensor, chunk_size: int = 0,
                group_sizes: Optional[Sequence[int]] = None) -> VCPOutput:
        """
        グループ単位の順伝播

        Args:
            images: 1グループ（または複数グループを結合した）画像 [N, 3, H, W]
            chunk_size: >0 かつ N を超える場合、ステージ単位でチャンク処理する（1グループのみ）
            group_sizes: 複数グループを結合した場合の各グループの枚数

        Returns:
            VCPOutput
        """
        if group_sizes is not None and sum(group_sizes) != images.shape[0]:
            raise ShapeMismatchError(f"group_sizes の合計 {sum(group_sizes)} が画像数 {images.shape[0]} と異なります")
        if chunk_size and images.shape[0] > chunk_size:
            if group_sizes is not None and len(group_sizes) > 1:
                raise ShapeMismatchError("チャンク処理は1グループ単位でのみ行えます")
            return self._forward_chunked(images, chunk_size)

        handcrafted = self.handcrafted(images) if self.handcrafted is not None else None
        bundles: Dict[int, PromptBundle] = {}
        aux_logits: List[torch.Tensor] = []
        aux_stages: List[int] = []

        def provider(stage: int, layer: int, embedding: StageEmbedding) -> Optional[torch.Tensor]:
            key = _stage_key(stage)
            if key not in self.dispersers:
                return None
            if stage not in bundles:
                cpg_out = self.generate(stage, embedding, group_sizes)
                if cpg_out.saliency_logits is not None:
                    aux_logits.append(cpg_out.saliency_logits)
                    aux_stages.append(stage)
                bundles[stage] = self.build_prompts(stage, cpg_out, handcrafted)
            return self.dispersers[key](bundles[stage].p_visual_co, layer)

        features = self.backbone.forward_with_prompts(images, provider)
        head_out = self.head(features, images.shape[-2:])
        return VCPOutput(head_out.prediction, head_out.class_logits, aux_logits, features, aux_stages)

    @torch.no_grad()
    def _forward_chunked(self, images: torch.Tensor, chunk_size: int) -> VCPOutput:
        """ステージ優先でチャンクを処理（コンセンサスはグループ全体で計算）"""
        check_input_size(images)
        chunks = list(images.split(chunk_size))
        handcrafted = [self.handcrafted(c) if self.handcrafted is not None else None for c in chunks]
        inputs = chunks
        per_chunk_features: List[List[StageEmbedding]] = [[] for _ in chunks]
        aux_logits: List[torch.Tensor] = []
        aux_stages: List[int] = []

        for stage in range(self.backbone.num_stages):
            key = _stage_key(stage)
            embeddings = [self.backbone.embed(stage, x) for x in inputs]
            outputs = []
            if key in self.dispersers:
                cpg_outs = self.generators[key].forward_chunks(embeddings)
                if cpg_outs[0].saliency_logits is not None:
                    aux_logits.append(torch.cat([o.saliency_logits for o in cpg_outs]))
                    aux_stages.append(stage)
                for emb, cpg_out, hand in zip(embeddings, cpg_outs, handcrafted):
                    bundle = self.build_prompts(stage, cpg_out, hand)
                    disperser = self.dispersers[key]
                    outputs.append(self.backbone.run_stage(
                        stage, emb, lambda s, n, e, b=bundle, m=disperser: m(b.p_visual_co, n)
                    ))
            else:
                outputs = [self.backbone.run_stage(stage, emb) for emb in embeddings]
            for feats, out in zip(per_chunk_features, outputs):
                feats.append(out)
            inputs = [out.to_map() for out in outputs]

        head_outs = [self.head(feats, images.shape[-2:]) for feats in per_chunk_features]
        features = [
            StageEmbedding(torch.cat([f[s].tokens for f in per_chunk_features]),
                           per_chunk_features[0][s].height, per_chunk_features[0][s].width)
            for s in range(self.backbone.num_stages)
        ]
        return VCPOutput(
            torch.cat([h.prediction for h in head_outs]),
            torch.cat([h.class_logits for h in head_outs]),
            aux_logits,
            features,
            aux_stages,
        )


def build_model(config: ModelConfig, weights: Optional[Union[str, Path]] = None,
                init_seed: int = 0) -> VCPModel:
    """バックボーンを読み込み（または乱数初期化し）、VCP モデルを構築"""
    backbone = build_backbone(config.backbone, weights, init_seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(init_seed + 1)
        model = VCPModel(config, backbone)
    logger.info("VCP モデルを構築しました: 学習可能パラメータ %s 個", f"{count_tunable_params(model)['total']:,}")
    return model


def count_tunable_params(model: VCPModel) -> Dict[str, int]:
    """
    モジュールごとの学習可能パラメータ数

    Returns:
        {"backbone": 0, "cpg": ..., "handcrafted": ..., "cpd": ..., "head": ..., "total": ...}
    """
    def count(module: Optional[nn.Module]) -> int:
        if module is None:
            return 0
        return sum(p.numel() for p in module.parameters() if p.requires_grad)

    table = {
        "backbone": count(model.backbone),
        "cpg": count(model.generators),
        "handcrafted": count(model.handcrafted),
        "cpd": count(model.dispersers),
        "head": count(model.head),
    }
    table["total"] = sum(table.values())
    return table
