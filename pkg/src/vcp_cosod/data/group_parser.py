"""
グループ構造データセットの解析・検索モジュール

レイアウト: <img_root>/<group>/<stem>.jpg と <gt_root>/<group>/<stem>.png
"""

import logging
from pathlib import Path
from typing import Dict, List, Union

from ..core.exceptions import DatasetError
from ..core.models import ImageGroup

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp")


def list_image_files(directory: Path) -> Dict[str, Path]:
    """stem -> パス（拡張子は大文字小文字を区別しない）"""
    files = {}
    for path in sorted(directory.iterdir()):
        if path.is_file() and path.suffix.lower() in IMAGE_EXTENSIONS:
            if path.stem in files:
                raise DatasetError(f"同じ stem のファイルが複数あります: {directory / path.stem}")
            files[path.stem] = path
    return files


class GroupDatasetParser:
    """画像ルートと GT ルートからグループを組み立てるクラス"""

    def __init__(self, img_root: Union[str, Path], gt_root: Union[str, Path, None] = None):
        """
        初期化

        Args:
            img_root: 画像ルート
            gt_root: GT マスクルート（推論のみの場合は None）
        """
        self.img_root = Path(img_root)
        self.gt_root = Path(gt_root) if gt_root is not None else None
        if not self.img_root.is_dir():
            raise DatasetError(f"画像ディレクトリが見つかりません: {self.img_root}")
        if self.gt_root is not None and not self.gt_root.is_dir():
            raise DatasetError(f"GT ディレクトリが見つかりません: {self.gt_root}")

    def list_group_names(self) -> List[str]:
        """カテゴリ名をソート順で取得"""
        return sorted(p.name for p in self.img_root.iterdir() if p.is_dir())

    def list_images(self, name: str) -> List[Path]:
        """グループ内の画像を stem 順で取得（空ならエラー）"""
        images = list(list_image_files(self.img_root / name).values())
        if not images:
            raise DatasetError(f"グループ {name} に画像がありません")
        return images

    def pair_group(self, name: str, label_index: int) -> ImageGroup:
        """
        1グループ分の画像とマスクを対応付ける

        Raises:
            DatasetError: マスクの欠落、余分なマスク、空グループ
        """
        if self.gt_root is None:
            raise DatasetError("GT ルートが指定されていません")
        gt_dir = self.gt_root / name
        if not gt_dir.is_dir():
            raise DatasetError(f"グループ {name} の GT ディレクトリがありません: {gt_dir}")
        images = list_image_files(self.img_root / name)
        masks = list_image_files(gt_dir)
        if not images:
            raise DatasetError(f"グループ {name} に画像がありません")

        missing = sorted(set(images) - set(masks))
        if missing:
            raise DatasetError(f"グループ {name}: マスクがありません: {', '.join(missing)}")
        orphans = sorted(set(masks) - set(images))
        if orphans:
            raise DatasetError(f"グループ {name}: 対応する画像がないマスクがあります: {', '.join(orphans)}")

        stems = sorted(images)
        return ImageGroup(
            name=name,
            images=[images[s] for s in stems],
            masks=[masks[s] for s in stems],
            label_index=label_index,
        )

    def scan(self) -> List[ImageGroup]:
        """全グループを走査（ラベルはカテゴリ名のソート順）"""
        names = self.list_group_names()
        if not names:
            raise DatasetError(f"グループディレクトリがありません: {self.img_root}")
        groups = [self.pair_group(name, label) for label, name in enumerate(names)]
        logger.info("%d グループ / %d 枚を読み込みました: %s",
                    len(groups), sum(len(g) for g in groups), self.img_root)
        return groups

    def scan_images(self) -> Dict[str, List[Path]]:
        """GT なしで全グループの画像を取得（推論用）"""
        return {name: self.list_images(name) for name in self.list_group_names()}

    @staticmethod
    def get_dataset_info(groups: List[ImageGroup]) -> Dict[str, int]:
        """
        データセットの概要

        Returns:
            グループ数・総枚数・最小/最大グループサイズ
        """
        if not groups:
            return {}
        sizes = [len(g) for g in groups]
        return {
            "group_count": len(groups),
            "image_count": sum(sizes),
            "min_group_size": min(sizes),
            "max_group_size": max(sizes),
        }


def scan_dataset(img_root: Union[str, Path], gt_root: Union[str, Path]) -> List[ImageGroup]:
    return GroupDatasetParser(img_root, gt_root).scan()
