"""
学習可能パラメータのみのチェックポイント保存・読み込み

単一ファイルに JSON ヘッダ（フォーマット版数・フィンガープリント・ステップ・
モデル構成）と名前付きテンソルを格納する。バックボーンは含めない。
"""

import json
import pickle
import logging
from pathlib import Path
from typing import Optional, Union

import torch

from ..core.exceptions import CheckpointError
from ..core.models import ModelConfig, TunableCheckpoint
from ..networks.model import VCPModel, build_model

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def make_checkpoint(model: VCPModel, step: int = 0) -> TunableCheckpoint:
    """モデルの現在値からチェックポイントを作る（テンソルは複製）"""
    arrays = {k: v.detach().cpu().clone() for k, v in model.tunable_state_dict().items()}
    return TunableCheckpoint(
        arrays=arrays,
        model_config=model.config.to_dict(),
        fingerprint=model.config.fingerprint,
        step=step,
        format_version=FORMAT_VERSION,
    )


def save_checkpoint(checkpoint: TunableCheckpoint, path: Union[str, Path]) -> int:
    """
    チェックポイントを保存

    Returns:
        ファイルサイズ（バイト）
    """
    if any(k.startswith("backbone.") for k in checkpoint.arrays):
        raise CheckpointError("チェックポイントにバックボーンの配列が含まれています")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": checkpoint.format_version,
        "fingerprint": checkpoint.fingerprint,
        "step": checkpoint.step,
        "model_config": checkpoint.model_config,
    }
    torch.save({"header": json.dumps(header, sort_keys=True), "arrays": checkpoint.arrays}, path)
    size = path.stat().st_size
    logger.info("チェックポイントを保存しました: %s (%.1f MB, 配列 %.1f MB, %s パラメータ)",
                path, size / 1e6, checkpoint.size_bytes / 1e6, f"{checkpoint.num_parameters:,}")
    return size


def load_checkpoint(path: Union[str, Path], expected_fingerprint: Optional[str] = None) -> TunableCheckpoint:
    """
    チェックポイントを読み込む

    Args:
        path: ファイルパス
        expected_fingerprint: 一致を要求するモデル構成のフィンガープリント

    Raises:
        CheckpointError: ファイル欠落、形式不正、版数・フィンガープリント不一致
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"チェックポイントが見つかりません: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
        header = json.loads(payload["header"])
        arrays = payload["arrays"]
    except (KeyError, TypeError, ValueError, RuntimeError, EOFError, pickle.UnpicklingError) as e:
        raise CheckpointError(f"チェックポイントの形式が正しくありません: {path}: {e}") from e

    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"未対応のチェックポイント版数です: {version}（対応: {FORMAT_VERSION}）")
    model_config = ModelConfig.from_dict(header["model_config"])
    if model_config.fingerprint != header["fingerprint"]:
        raise CheckpointError("ヘッダのフィンガープリントがモデル構成と一致しません")
    if expected_fingerprint is not None and header["fingerprint"] != expected_fingerprint:
        raise CheckpointError(
            f"フィンガープリントが設定と一致しません: {header['fingerprint'][:12]} != {expected_fingerprint[:12]}"
        )
    return TunableCheckpoint(
        arrays=arrays,
        model_config=header["model_config"],
        fingerprint=header["fingerprint"],
        step=int(header.get("step", 0)),
        format_version=version,
    )


def apply_checkpoint(model: VCPModel, checkpoint: TunableCheckpoint) -> VCPModel:
    """チェックポイントの値をモデルに書き戻す（バックボーンは触らない）"""
    if model.config.fingerprint != checkpoint.fingerprint:
        raise CheckpointError("モデル構成とチェックポイントのフィンガープリントが一致しません")
    result = model.load_state_dict(checkpoint.arrays, strict=False)
    missing = [k for k in result.missing_keys if not k.startswith("backbone.")]
    if missing or result.unexpected_keys:
        raise CheckpointError(
            f"チェックポイントの配列が一致しません: 欠落 {missing[:5]}, 余分 {result.unexpected_keys[:5]}"
        )
    return model


def model_from_checkpoint(checkpoint: TunableCheckpoint,
                          backbone_weights: Optional[Union[str, Path]] = None,
                          init_seed: int = 0) -> VCPModel:
    """チェックポイントのモデル構成でモデルを組み立てて値を適用"""
    config = ModelConfig.from_dict(checkpoint.model_config)
    return apply_checkpoint(build_model(config, backbone_weights, init_seed), checkpoint)
