"""
3グループ構成のバッチサンプリング

各バッチは異なる3グループから N = min(N_A, N_B, N_C, 16) 枚ずつ非復元抽出する。
"""

from typing import Iterator, List, Optional, Sequence

import numpy as np

from ..core.exceptions import DatasetError
from ..core.models import BatchSpec, GroupBatch, ImageGroup

GROUPS_PER_BATCH = 3


def per_group_count(sizes: Sequence[int], cap: int = 16) -> int:
    """N = min(各グループのサイズ, cap)"""
    return min(min(sizes), cap)


def sample_batch(groups: Sequence[ImageGroup], rng: np.random.Generator, cap: int = 16) -> GroupBatch:
    """
    1バッチ分のグループと画像インデックスを抽出

    Args:
        groups: 全グループ
        rng: 乱数生成器（バッチ順序はこれだけで決まる）
        cap: グループあたりの上限枚数

    Raises:
        DatasetError: グループが3未満
    """
    if len(groups) < GROUPS_PER_BATCH:
        raise DatasetError(f"バッチには {GROUPS_PER_BATCH} グループ以上が必要です: {len(groups)}")
    chosen = [groups[i] for i in rng.choice(len(groups), size=GROUPS_PER_BATCH, replace=False)]
    n = per_group_count([len(g) for g in chosen], cap)
    indices = [rng.choice(len(g), size=n, replace=False) for g in chosen]
    spec = BatchSpec(group_names=tuple(g.name for g in chosen), n=n)
    return GroupBatch(spec=spec, groups=chosen, indices=indices)


class GroupBatchSampler:
    """シード固定のバッチ列"""

    def __init__(self, groups: List[ImageGroup], seed: int = 0, cap: int = 16,
                 num_batches: Optional[int] = None):
        if len(groups) < GROUPS_PER_BATCH:
            raise DatasetError(f"バッチには {GROUPS_PER_BATCH} グループ以上が必要です: {len(groups)}")
        self.groups = groups
        self.seed = seed
        self.cap = cap
        self.num_batches = num_batches

    def __len__(self) -> int:
        if self.num_batches is None:
            raise TypeError("無限サンプラーには長さがありません")
        return self.num_batches

    def __iter__(self) -> Iterator[GroupBatch]:
        rng = np.random.default_rng(self.seed)
        produced = 0
        while self.num_batches is None or produced < self.num_batches:
            yield sample_batch(self.groups, rng, self.cap)
            produced += 1
