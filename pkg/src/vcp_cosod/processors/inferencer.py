"""
推論処理モジュール

グループの全画像を一度に入力し、各画像の元サイズの 8bit 顕著性マップを書き出す。
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

import cv2
import numpy as np
import torch
import torch.nn.functional as F

from ..core.config import Config
from ..core.exceptions import DatasetError
from ..data.group_parser import GroupDatasetParser, list_image_files
from ..data.preprocess import load_image
from ..networks.model import VCPModel
from ..ui.progress import ProgressTracker
from .checkpoint import load_checkpoint, model_from_checkpoint
from .trainer import resolve_model_config

logger = logging.getLogger(__name__)


class Inferencer:
    """学習済みモデルでグループ単位の推論を行うクラス"""

    def __init__(self, model: VCPModel, input_size: int = 288, chunk_size: int = 0,
                 device: str = "cpu"):
        self.device = torch.device(device)
        self.model = model.to(self.device).eval()
        self.input_size = input_size
        self.chunk_size = chunk_size

    @classmethod
    def from_checkpoint(cls, ckpt_path: Union[str, Path], config: Config) -> "Inferencer":
        """
        チェックポイントから推論器を作る

        設定のモデル構成（num_classes=0 はチェックポイント側の値で解決）と
        フィンガープリントが一致しない場合は CheckpointError。
        """
        unchecked = load_checkpoint(ckpt_path)
        num_classes = unchecked.model_config["head"]["num_classes"]
        expected = resolve_model_config(config.model_config, num_classes).fingerprint
        checkpoint = load_checkpoint(ckpt_path, expected_fingerprint=expected)
        model = model_from_checkpoint(checkpoint, config.backbone_weights, config.backbone_init_seed)
        tc = config.train_config
        return cls(model, tc.input_size, config.infer_config.chunk_size, tc.device)

    @torch.no_grad()
    def predict_group(self, image_paths: Sequence[Union[str, Path]]) -> List[np.ndarray]:
        """
        1グループ分の顕著性マップ

        Returns:
            元画像サイズの [h, w] float32（値域 [0, 1]）のリスト
        """
        if not image_paths:
            raise DatasetError("推論対象のグループが空です")
        loaded = [load_image(p, self.input_size) for p in image_paths]
        images = torch.stack([x for x, _ in loaded]).to(self.device)
        output = self.model(images, chunk_size=self.chunk_size)
        saliency = torch.sigmoid(output.prediction)
        maps = []
        for s, (_, size) in zip(saliency, loaded):
            resized = F.interpolate(s[None], size=tuple(size), mode="bilinear", align_corners=False)
            maps.append(resized[0, 0].clamp(0, 1).cpu().numpy())
        return maps

    def infer_group(self, group_dir: Union[str, Path], out_dir: Union[str, Path]) -> List[Path]:
        """グループディレクトリの全画像を推論して <out_dir>/<stem>.png に保存"""
        group_dir = Path(group_dir)
        if not group_dir.is_dir():
            raise DatasetError(f"グループディレクトリが見つかりません: {group_dir}")
        images = list(list_image_files(group_dir).values())
        return self._write(images, self.predict_group(images), Path(out_dir))

    def infer_root(self, img_root: Union[str, Path], out_root: Union[str, Path],
                   show_progress: bool = False) -> Dict[str, List[Path]]:
        """ルート以下の全グループを推論（<out_root>/<group>/<stem>.png）"""
        groups = GroupDatasetParser(img_root).scan_images()
        written: Dict[str, List[Path]] = {}
        with ProgressTracker(show_progress) as tracker:
            tracker.add_task("infer", len(groups), "推論")
            for name, images in groups.items():
                written[name] = self._write(images, self.predict_group(images), Path(out_root) / name)
                tracker.update("infer", status=f"推論: {name}")
        logger.info("%d グループの推論結果を保存しました: %s", len(written), out_root)
        return written

    @staticmethod
    def _write(images: List[Path], maps: List[np.ndarray], out_dir: Path) -> List[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for image_path, saliency in zip(images, maps):
            path = out_dir / f"{image_path.stem}.png"
            cv2.imwrite(str(path), np.round(saliency * 255).astype(np.uint8))
            paths.append(path)
        return paths
