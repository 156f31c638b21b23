"""
コンセンサスプロンプト生成器（CPG）

凍結埋め込みを低次元化し、学習可能なサリエンシーシードとのソフト
クラスタリングで画像ごとのサリエンシー推定マップを得る。グループ全体の
画素埋め込みから上位 k 個の代表コンセンサスシードを選び、それを動的
1x1 フィルタとしてコンセンサスプロンプト P_Co を生成する。
"""

from typing import List, NamedTuple, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange
from timm.layers import trunc_normal_

from ..core.exceptions import ShapeMismatchError
from ..core.models import CPGConfig, CPGOutput, StageEmbedding

EPS = 1e-12


def l2_normalize(x: torch.Tensor, dim: int) -> torch.Tensor:
    """x / (||x|| + ε)"""
    return x / (x.norm(dim=dim, keepdim=True) + EPS)


class SaliencyEstimate(NamedTuple):
    soft_assign: torch.Tensor  # [N, j, L]
    saliency: torch.Tensor  # [N, 1, H, W] in [0, 1]
    logits: torch.Tensor  # [N, 1, H, W]


class ConsensusSelection(NamedTuple):
    co_seed: torch.Tensor  # [N*L, C_r]
    score: torch.Tensor  # [N*L]
    representatives: torch.Tensor  # [k, C_r]
    indices: torch.Tensor  # [k]


def select_top_k(co_seed: torch.Tensor, query: torch.Tensor, k: int) -> ConsensusSelection:
    """
    クエリとの内積スコアで上位 k 行を選ぶ（同点は平坦インデックスの昇順）

    Args:
        co_seed: グループ全体の画素埋め込み [N*L, C_r]
        query: グループクエリ [C_r]
        k: 選択数

    Returns:
        ConsensusSelection
    """
    if not 1 <= k <= co_seed.shape[0]:
        raise ShapeMismatchError(f"k={k} が範囲外です（1 <= k <= {co_seed.shape[0]}）")
    score = co_seed @ query
    # stable sort なので同点は元の順序（昇順インデックス）が保たれる
    indices = torch.sort(score.detach(), descending=True, stable=True).indices[:k]
    return ConsensusSelection(co_seed, score, co_seed[indices], indices)


class SpatialAttention(nn.Module):
    """チャネル平均・最大 -> 7x7 畳み込み -> sigmoid"""

    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))


class ConsensusPromptGenerator(nn.Module):
    """1ステージ分の CPG"""

    def __init__(self, channels: int, config: CPGConfig, with_consensus: bool = True):
        """
        Args:
            channels: ステージのチャネル数 C_s
            config: CPG 設定
            with_consensus: False の場合は P_Em の射影のみ（P_Co = 0）
        """
        super().__init__()
        self.config = config
        self.reduced = config.reduced_channels(channels)
        self.with_consensus = with_consensus
        cr = self.reduced

        self.proj = nn.Linear(channels, cr)
        if with_consensus:
            self.seeds = nn.Parameter(torch.empty(config.j, cr))
            self.assign = nn.Conv2d(cr, config.j, 1, bias=False)
            layers: List[nn.Module] = [nn.Linear(config.j * cr, config.seed_mlp_hidden), nn.GELU()]
            for _ in range(config.seed_mlp_depth):
                layers += [nn.Linear(config.seed_mlp_hidden, config.seed_mlp_hidden), nn.GELU()]
            layers.append(nn.Linear(config.seed_mlp_hidden, cr))
            self.seed_mlp = nn.Sequential(*layers)
            self.saliency_conv = nn.Conv2d(2 * cr, 1, 1)
            self.consensus_fuse = nn.Sequential(
                nn.Conv2d(config.k, cr, 1),
                nn.GELU(),
                nn.Conv2d(cr, cr, 1),
            )
            self.attention = SpatialAttention()
        self._reset_parameters()

    def _reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Linear):
                trunc_normal_(m.weight, std=0.02)
                nn.init.zeros_(m.bias)
        if self.with_consensus:
            nn.init.normal_(self.seeds, mean=0.0, std=0.02)

    def project_embeddings(self, tokens: torch.Tensor) -> torch.Tensor:
        """[N, L, C_s] -> P_Em [N, L, C_r]"""
        if tokens.shape[-1] != self.proj.in_features:
            raise ShapeMismatchError(
                f"埋め込みチャネル {tokens.shape[-1]} が {self.proj.in_features} と一致しません"
            )
        return self.proj(tokens)

    def estimate_saliency(self, p_em: torch.Tensor) -> SaliencyEstimate:
        """
        サリエンシーシードによるソフト割り当てと推定マップ M_s

        Args:
            p_em: [N, C_r, H, W]

        Returns:
            SaliencyEstimate(S_soft [N, j, L], M_s, M_s のロジット)
        """
        n, c, h, w = p_em.shape
        if c != self.seeds.shape[1]:
            raise ShapeMismatchError(f"P_em のチャネル {c} がシード次元 {self.seeds.shape[1]} と一致しません")
        soft_assign = self.assign(l2_normalize(p_em, dim=1)).flatten(2).softmax(dim=1)
        tokens = p_em.flatten(2)
        # sum_l S(n,j,l) * (x(n,:,l) - seed(j,:)) を残差テンソルを作らずに計算
        updated = torch.einsum("njl,ncl->njc", soft_assign, tokens)
        updated = updated - soft_assign.sum(dim=-1, keepdim=True) * self.seeds
        guide = self.seed_mlp(l2_normalize(updated, dim=-1).flatten(1))
        guide = guide[:, :, None, None].expand(-1, -1, h, w)
        logits = self.saliency_conv(torch.cat([guide, p_em], dim=1))
        return SaliencyEstimate(soft_assign, torch.sigmoid(logits), logits)

    @staticmethod
    def group_query(p_em: torch.Tensor, saliency: torch.Tensor) -> torch.Tensor:
        """画像ごとのマスク付き平均 [N, C_r]（グループ平均の前段）"""
        weighted = (p_em * saliency).sum(dim=(2, 3))
        return weighted / (saliency.sum(dim=(2, 3)) + EPS)

    def select_consensus(self, p_em: torch.Tensor, saliency: torch.Tensor,
                         k: Optional[int] = None) -> ConsensusSelection:
        """グループクエリとの相関で代表コンセンサスシードを選択"""
        query = self.group_query(p_em, saliency).mean(dim=0)
        co_seed = rearrange(p_em, "n c h w -> (n h w) c")
        return select_top_k(co_seed, query, self.config.k if k is None else k)

    def build_consensus_prompt(self, p_em: torch.Tensor, representatives: torch.Tensor) -> torch.Tensor:
        """代表シードを動的 1x1 フィルタとした相関から P_Co [N, L, C_r] を生成"""
        if representatives.shape[-1] != p_em.shape[1]:
            raise ShapeMismatchError("代表シードと P_em のチャネル数が一致しません")
        correlation = F.conv2d(l2_normalize(p_em, dim=1), representatives[:, :, None, None])
        f_co = self.consensus_fuse(correlation)
        return rearrange(f_co * self.attention(f_co), "n c h w -> n (h w) c")

    def forward_chunks(self, embeddings: List[StageEmbedding]) -> List[CPGOutput]:
        """
        グループを分割したチャンク列に対して CPG を実行

        クエリと top-k はグループ全体で計算するため、分割の仕方に依らず
        同じコンセンサスが得られる。
        """
        p_ems = [self.project_embeddings(e.tokens) for e in embeddings]
        if not self.with_consensus:
            return [CPGOutput(p, torch.zeros_like(p)) for p in p_ems]

        maps = [rearrange(p, "n (h w) c -> n c h w", h=e.height, w=e.width)
                for p, e in zip(p_ems, embeddings)]
        estimates = [self.estimate_saliency(m) for m in maps]
        query = torch.cat([self.group_query(m, est.saliency) for m, est in zip(maps, estimates)]).mean(dim=0)
        co_seed = torch.cat([rearrange(m, "n c h w -> (n h w) c") for m in maps])
        selection = select_top_k(co_seed, query, self.config.k)
        return [
            CPGOutput(p, self.build_consensus_prompt(m, selection.representatives), est.saliency, est.logits)
            for p, m, est in zip(p_ems, maps, estimates)
        ]

    def forward(self, embedding: StageEmbedding) -> CPGOutput:
        return self.forward_chunks([embedding])[0]
