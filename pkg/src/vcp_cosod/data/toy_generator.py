"""
合成トイデータセット生成モジュール

各グループは1つの共通図形クラス（共顕著物体）を持ち、各画像には
別クラスの妨害図形を1〜2個描いた後に共通図形を最前面に描く。
妨害図形は小さく暗いので、共通図形が各画像で最も目立つ物体になる。
GT は共通図形の描画画素そのもの。
"""

import logging
from pathlib import Path
from typing import List, NamedTuple, Tuple, Union

import cv2
import numpy as np

from ..core.exceptions import ConfigError

logger = logging.getLogger(__name__)

SHAPE_CLASSES = ("square", "disk", "triangle", "diamond", "cross", "hexagon")
MIN_CANVAS = 64
# 共通図形は妨害図形より大きく明るい（背景 < 妨害 < 共通 の輝度順）
SALIENT_RADIUS = (0.18, 0.28)
DISTRACTOR_RADIUS = (0.05, 0.10)
BACKGROUND_LEVELS = (0, 40)
DISTRACTOR_LEVELS = (45, 105)
SALIENT_LEVELS = (150, 256)

Pose = Tuple[Tuple[float, float], float, float]


class ToySample(NamedTuple):
    image: np.ndarray
    mask: np.ndarray
    background: np.ndarray


class ToyDataset(NamedTuple):
    img_root: Path
    gt_root: Path
    group_names: List[str]


def _polygon(shape: str, center: Tuple[float, float], radius: float, angle: float) -> np.ndarray:
    if shape == "square":
        t = np.pi / 4 + np.arange(4) * np.pi / 2
        pts = np.stack([np.cos(t), np.sin(t)], axis=1)
    elif shape == "triangle":
        t = -np.pi / 2 + np.arange(3) * 2 * np.pi / 3
        pts = np.stack([np.cos(t), np.sin(t)], axis=1)
    elif shape == "hexagon":
        t = np.arange(6) * np.pi / 3
        pts = np.stack([np.cos(t), np.sin(t)], axis=1)
    elif shape == "diamond":
        pts = np.array([[0.0, -1.0], [0.55, 0.0], [0.0, 1.0], [-0.55, 0.0]])
    elif shape == "cross":
        a = 0.33
        pts = np.array([[-a, -1], [a, -1], [a, -a], [1, -a], [1, a], [a, a],
                        [a, 1], [-a, 1], [-a, a], [-1, a], [-1, -a], [-a, -a]], dtype=np.float64)
    else:
        raise ConfigError(f"未知の図形クラスです: {shape}")
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    pts = pts @ rot.T * radius + np.asarray(center)
    return np.round(pts).astype(np.int32)


def draw_shape(canvas: np.ndarray, shape: str, pose: Pose, color) -> np.ndarray:
    """図形を塗りつぶしで描画（アンチエイリアスなし）"""
    center, radius, angle = pose
    if shape == "disk":
        cv2.circle(canvas, (int(round(center[0])), int(round(center[1]))), int(round(radius)),
                   color, thickness=-1, lineType=cv2.LINE_8)
    else:
        cv2.fillPoly(canvas, [_polygon(shape, center, radius, angle)], color, lineType=cv2.LINE_8)
    return canvas


def _random_pose(rng: np.random.Generator, canvas: int, radius_range: Tuple[float, float]) -> Pose:
    radius = rng.uniform(*radius_range) * canvas
    cx, cy = rng.uniform(radius, canvas - radius, size=2)
    return (float(cx), float(cy)), float(radius), float(rng.uniform(0, 2 * np.pi))


def _random_color(rng: np.random.Generator, levels: Tuple[int, int]) -> Tuple[int, int, int]:
    return tuple(int(v) for v in rng.integers(*levels, size=3))


def render_sample(rng: np.random.Generator, shape: str, canvas: int,
                  max_distractors: int = 2, noise: float = 0.0) -> ToySample:
    """
    1枚分の画像と GT を描画

    Args:
        rng: 乱数生成器
        shape: 共通図形クラス
        canvas: 一辺の画素数
        max_distractors: 妨害図形の最大数（0 で妨害なし）
        noise: ガウスノイズの標準偏差（画素値単位）

    Returns:
        ToySample(RGB uint8 画像, {0, 255} マスク, 背景色)
    """
    if canvas < MIN_CANVAS:
        raise ConfigError(f"canvas は {MIN_CANVAS} 以上が必要です: {canvas}")
    background = rng.integers(*BACKGROUND_LEVELS, size=3).astype(np.uint8)
    image = np.empty((canvas, canvas, 3), dtype=np.uint8)
    image[:] = background

    if max_distractors > 0:
        others = [c for c in SHAPE_CLASSES if c != shape]
        count = int(rng.integers(1, max_distractors + 1))
        for name in rng.choice(others, size=min(count, len(others)), replace=False):
            draw_shape(image, str(name), _random_pose(rng, canvas, DISTRACTOR_RADIUS),
                       _random_color(rng, DISTRACTOR_LEVELS))

    pose = _random_pose(rng, canvas, SALIENT_RADIUS)
    draw_shape(image, shape, pose, _random_color(rng, SALIENT_LEVELS))
    mask = draw_shape(np.zeros((canvas, canvas), dtype=np.uint8), shape, pose, 255)

    if noise > 0:
        noisy = image.astype(np.float32) + rng.normal(0.0, noise, size=image.shape)
        image = np.clip(np.round(noisy), 0, 255).astype(np.uint8)
    return ToySample(image, mask, background)


def group_names_for(n_groups: int) -> List[Tuple[str, str]]:
    """(グループ名, 図形クラス)。クラス数を超える分は接尾辞付きで循環"""
    names = []
    for i in range(n_groups):
        shape = SHAPE_CLASSES[i % len(SHAPE_CLASSES)]
        cycle = i // len(SHAPE_CLASSES)
        names.append((shape if cycle == 0 else f"{shape}_{cycle}", shape))
    return names


def synthesize_toy_dataset(out_dir: Union[str, Path], seed: int = 0, n_groups: int = 6,
                           n_images: int = 12, canvas: int = 96, max_distractors: int = 2,
                           noise: float = 4.0) -> ToyDataset:
    """
    トイデータセットをディスクに書き出す

    出力: <out_dir>/images/<group>/<stem>.jpg, <out_dir>/masks/<group>/<stem>.png
    同じ引数なら同一バイト列を再生成する。
    """
    if n_groups < 1 or n_images < 1:
        raise ConfigError(f"グループ数と画像数は1以上が必要です: {n_groups}, {n_images}")
    out_dir = Path(out_dir)
    img_root, gt_root = out_dir / "images", out_dir / "masks"
    rng = np.random.default_rng(seed)
    names = group_names_for(n_groups)

    for name, shape in names:
        (img_root / name).mkdir(parents=True, exist_ok=True)
        (gt_root / name).mkdir(parents=True, exist_ok=True)
        for i in range(n_images):
            sample = render_sample(rng, shape, canvas, max_distractors, noise)
            stem = f"{name}_{i:03d}"
            cv2.imwrite(str(img_root / name / f"{stem}.jpg"),
                        cv2.cvtColor(sample.image, cv2.COLOR_RGB2BGR),
                        [cv2.IMWRITE_JPEG_QUALITY, 95])
            cv2.imwrite(str(gt_root / name / f"{stem}.png"), sample.mask)

    logger.info("トイデータセットを生成しました: %d グループ × %d 枚 -> %s", n_groups, n_images, out_dir)
    return ToyDataset(img_root, gt_root, [n for n, _ in names])
