"""
画像・マスクの前処理

画像: RGB、双線形リサイズ、ImageNet 統計で標準化
マスク: 最近傍リサイズ後に 0.5 で二値化
"""

from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np
import torch

from ..core.exceptions import DatasetError
from ..core.models import GroupBatch, ImageGroup

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


def read_image(path: Union[str, Path]) -> np.ndarray:
    """RGB uint8 [h, w, 3] を読み込む"""
    image = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if image is None:
        raise DatasetError(f"画像を読み込めません: {path}")
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)


def read_mask(path: Union[str, Path]) -> np.ndarray:
    """グレースケール [h, w] を [0, 1] の float32 で読み込む"""
    mask = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if mask is None:
        raise DatasetError(f"マスクを読み込めません: {path}")
    return mask.astype(np.float32) / 255.0


def preprocess_image(image: np.ndarray, size: int) -> torch.Tensor:
    """
    Args:
        image: RGB uint8 [h, w, 3]
        size: 出力の一辺

    Returns:
        [3, size, size] の float32
    """
    resized = cv2.resize(image, (size, size), interpolation=cv2.INTER_LINEAR)
    normalized = (resized.astype(np.float32) / 255.0 - IMAGENET_MEAN) / IMAGENET_STD
    return torch.from_numpy(np.ascontiguousarray(normalized.transpose(2, 0, 1)))


def preprocess_mask(mask: np.ndarray, size: int) -> torch.Tensor:
    """[h, w] の [0, 1] マスクを [1, size, size] の {0, 1} に"""
    resized = cv2.resize(mask.astype(np.float32), (size, size), interpolation=cv2.INTER_NEAREST)
    return torch.from_numpy((resized > 0.5).astype(np.float32))[None]


def load_image(path: Union[str, Path], size: int) -> Tuple[torch.Tensor, Tuple[int, int]]:
    """前処理済み画像と元サイズ (h, w)"""
    image = read_image(path)
    return preprocess_image(image, size), image.shape[:2]


def load_group(group: ImageGroup, size: int,
               indices: Optional[Sequence[int]] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    グループ（の一部）を読み込む

    Returns:
        (画像 [n, 3, size, size], マスク [n, 1, size, size])
    """
    picked = range(len(group)) if indices is None else [int(i) for i in indices]
    images = [preprocess_image(read_image(group.images[i]), size) for i in picked]
    masks = [preprocess_mask(read_mask(group.masks[i]), size) for i in picked]
    return torch.stack(images), torch.stack(masks)


def collate_batch(batch: GroupBatch, size: int) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    3グループ分を連結

    Returns:
        (画像 [3N, 3, s, s], マスク [3N, 1, s, s], ラベル [3N])
    """
    images: List[torch.Tensor] = []
    masks: List[torch.Tensor] = []
    labels: List[int] = []
    for group, idx in zip(batch.groups, batch.indices):
        x, m = load_group(group, size, idx)
        images.append(x)
        masks.append(m)
        labels.extend([group.label_index] * len(idx))
    return torch.cat(images), torch.cat(masks), torch.tensor(labels, dtype=torch.long)
