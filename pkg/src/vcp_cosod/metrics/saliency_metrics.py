"""
共顕著物体検出の評価指標

MAE / F-measure / S-measure / E-measure と PR・Fm-閾値曲線。計算は py_sod_metrics に任せ、
ここでは入力の検証と 8bit 化、曲線の並べ替えだけを行う。

予測は [0, 1] の実数マップ、GT は {0, 1} の二値マップ。
曲線の添字 t は 8bit 化した予測で pred >= t を前景とする閾値（0..255）。
"""

from typing import Dict, Tuple

import numpy as np
from py_sod_metrics import MAE, Emeasure, Fmeasure, Smeasure

from ..core.exceptions import MetricInputError

THRESHOLDS = np.arange(256)
BETA2 = 0.3


def _prepare(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """検証して py_sod_metrics が受け付ける uint8 の (pred, gt) に変換"""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricInputError(f"予測 {pred.shape} と GT {gt.shape} のサイズが一致しません")
    if pred.ndim != 2:
        raise MetricInputError(f"2次元のマップが必要です: {pred.shape}")
    if pred.size and (pred.min() < 0 or pred.max() > 1):
        raise MetricInputError("予測値は [0, 1] の範囲である必要があります")
    if gt.dtype != bool and not np.all((gt == 0) | (gt == 1)):
        raise MetricInputError("GT は {0, 1} の値のみを含む必要があります")
    pred_u8 = np.round(pred * 255).astype(np.uint8)
    gt_u8 = gt.astype(bool).astype(np.uint8) * 255
    return pred_u8, gt_u8


def _by_threshold(curve: np.ndarray) -> np.ndarray:
    # py_sod_metrics の曲線は閾値 255 から降順
    return np.asarray(curve, dtype=np.float64)[::-1].copy()


def _e_curve(curve: np.ndarray) -> np.ndarray:
    # 画素数 - 1 で割るため完全一致でわずかに 1 を超える
    return np.clip(_by_threshold(curve), 0.0, 1.0)


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """平均絶対誤差"""
    metric = MAE()
    metric.step(*_prepare(pred, gt))
    return float(metric.get_results()["mae"])


def _fmeasure(pred: np.ndarray, gt: np.ndarray, beta2: float) -> Dict[str, dict]:
    metric = Fmeasure(beta=beta2)
    metric.step(*_prepare(pred, gt))
    return metric.get_results()


def precision_recall_curves(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """閾値 0..255 の適合率・再現率（予測前景が空なら適合率 0、GT が空なら再現率 0）"""
    pr = _fmeasure(pred, gt, BETA2)["pr"]
    return _by_threshold(pr["p"]), _by_threshold(pr["r"])


def f_measure(pred: np.ndarray, gt: np.ndarray, beta2: float = BETA2) -> Tuple[np.ndarray, float, float]:
    """
    F = (1+β²)·P·R / (β²·P + R)

    Returns:
        (256 点の曲線, 平均, 最大)
    """
    curve = _by_threshold(_fmeasure(pred, gt, beta2)["fm"]["curve"])
    return curve, float(curve.mean()), float(curve.max())


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    """構造類似度 S = α·S_object + (1−α)·S_region（GT が全背景・全前景なら平均ベース）"""
    metric = Smeasure(alpha=alpha)
    metric.step(*_prepare(pred, gt))
    return float(metric.get_results()["sm"])


def e_measure(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """
    拡張アライメント指標（閾値ごと）

    Returns:
        (256 点の曲線, 平均, 最大)
    """
    metric = Emeasure()
    metric.step(*_prepare(pred, gt))
    curve = _e_curve(metric.get_results()["em"]["curve"])
    return curve, float(curve.mean()), float(curve.max())


class SaliencyEvaluator:
    """画像ごとに py_sod_metrics へ渡してデータセット平均を出す"""

    def __init__(self):
        self.reset()

    def reset(self):
        self.SM = Smeasure()
        self.EM = Emeasure()
        self.FM = Fmeasure(beta=BETA2)
        self.MAE = MAE()
        self.num_images = 0

    def step(self, pred: np.ndarray, gt: np.ndarray):
        """1画像分を蓄積"""
        pred_u8, gt_u8 = _prepare(pred, gt)
        self.SM.step(pred=pred_u8, gt=gt_u8)
        self.EM.step(pred=pred_u8, gt=gt_u8)
        self.FM.step(pred=pred_u8, gt=gt_u8)
        self.MAE.step(pred=pred_u8, gt=gt_u8)
        self.num_images += 1

    def __len__(self) -> int:
        return self.num_images

    def get_results(self) -> Dict[str, object]:
        """データセット平均（曲線は閾値ごとの平均）"""
        if not self.num_images:
            raise MetricInputError("評価対象の画像がありません")
        fm = self.FM.get_results()
        fm_curve = _by_threshold(fm["fm"]["curve"])
        em_curve = _e_curve(self.EM.get_results()["em"]["curve"])
        return {
            "MAE": float(self.MAE.get_results()["mae"]),
            "S_m": float(self.SM.get_results()["sm"]),
            "F_m": float(fm_curve.mean()),
            "F_m_max": float(fm_curve.max()),
            "E_m": float(em_curve.mean()),
            "E_m_max": float(em_curve.max()),
            "fm_curve": fm_curve,
            "em_curve": em_curve,
            "precision": _by_threshold(fm["pr"]["p"]),
            "recall": _by_threshold(fm["pr"]["r"]),
        }
