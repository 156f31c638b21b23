"""
評価処理モジュール

予測ディレクトリと GT ディレクトリを stem（グループ込みの相対パス）で対応付けて
データセット単位の指標を計算し、CSV と曲線ファイルを書き出す。
"""

import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import cv2
import numpy as np

from ..core.exceptions import MetricInputError
from ..core.models import EvalRecord
from ..data.group_parser import IMAGE_EXTENSIONS
from ..metrics.saliency_metrics import THRESHOLDS, SaliencyEvaluator
from ..ui.progress import ProgressTracker

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("S_m", "E_m", "E_m_max", "F_m", "F_m_max", "MAE")


def _index_maps(root: Path) -> Dict[Path, Path]:
    """ルートからの相対パス（拡張子なし）-> ファイル"""
    index = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.suffix.lower() in IMAGE_EXTENSIONS:
            index[path.relative_to(root).with_suffix("")] = path
    return index


def _read_gray(path: Path) -> np.ndarray:
    image = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if image is None:
        raise MetricInputError(f"画像を読み込めません: {path}")
    return image


def evaluate_dataset(pred_dir: Union[str, Path], gt_dir: Union[str, Path],
                     dataset: Optional[str] = None, show_progress: bool = False) -> EvalRecord:
    """
    データセット単位の評価

    Args:
        pred_dir: 予測マップのルート（<group>/<stem>.png）
        gt_dir: GT マスクのルート（同じ構造）
        dataset: データセット名（省略時は GT ディレクトリ名）
        show_progress: プログレスバーを表示するかどうか

    Raises:
        MetricInputError: 予測が無い、対応する GT が無い、サイズ不一致
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    for directory in (pred_dir, gt_dir):
        if not directory.is_dir():
            raise MetricInputError(f"ディレクトリが見つかりません: {directory}")
    preds = _index_maps(pred_dir)
    if not preds:
        raise MetricInputError(f"予測マップがありません: {pred_dir}")
    gts = _index_maps(gt_dir)
    missing = [str(k) for k in preds if k not in gts]
    if missing:
        raise MetricInputError(f"対応する GT マスクがありません: {', '.join(missing[:10])}")

    overall = SaliencyEvaluator()
    per_group: Dict[str, SaliencyEvaluator] = {}
    with ProgressTracker(show_progress) as tracker:
        tracker.add_task("eval", len(preds), "評価")
        for key, pred_path in preds.items():
            pred = _read_gray(pred_path).astype(np.float64) / 255.0
            gt = _read_gray(gts[key]) > 127
            if pred.shape != gt.shape:
                raise MetricInputError(f"{key}: 予測 {pred.shape} と GT {gt.shape} のサイズが一致しません")
            overall.step(pred, gt)
            group = key.parent.as_posix() if key.parent != Path(".") else ""
            per_group.setdefault(group, SaliencyEvaluator()).step(pred, gt)
            tracker.update("eval")

    results = overall.get_results()
    record = EvalRecord(
        dataset=dataset or gt_dir.name,
        s_measure=results["S_m"],
        e_measure=results["E_m"],
        e_measure_max=results["E_m_max"],
        f_measure=results["F_m"],
        f_measure_max=results["F_m_max"],
        mae=results["MAE"],
        precision_curve=results["precision"],
        recall_curve=results["recall"],
        fm_curve=results["fm_curve"],
        em_curve=results["em_curve"],
        num_images=len(overall),
        per_group={
            name: {k: ev.get_results()[k] for k in METRIC_COLUMNS} for name, ev in sorted(per_group.items())
        },
    )
    logger.info("%s: %d 枚を評価しました", record.dataset, record.num_images)
    return record


def write_report(records: Sequence[EvalRecord], out_dir: Union[str, Path]) -> List[Path]:
    """
    評価結果を書き出す

    出力: metrics.csv（データセットごと1行）, groups.csv（グループ別）,
    curves/<dataset>_pr.csv, curves/<dataset>_fm.csv
    """
    out_dir = Path(out_dir)
    curves_dir = out_dir / "curves"
    curves_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "metrics.csv", out_dir / "groups.csv"]

    with open(written[0], "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["dataset", "images", *METRIC_COLUMNS])
        for r in records:
            writer.writerow([r.dataset, r.num_images, *(f"{r.summary()[k]:.6f}" for k in METRIC_COLUMNS)])

    with open(written[1], "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["dataset", "group", *METRIC_COLUMNS])
        for r in records:
            for group, values in r.per_group.items():
                writer.writerow([r.dataset, group, *(f"{values[k]:.6f}" for k in METRIC_COLUMNS)])

    for r in records:
        pr_path = curves_dir / f"{r.dataset}_pr.csv"
        with open(pr_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["threshold", "precision", "recall"])
            for t, p, rc in zip(THRESHOLDS, r.precision_curve, r.recall_curve):
                writer.writerow([int(t), f"{p:.6f}", f"{rc:.6f}"])
        fm_path = curves_dir / f"{r.dataset}_fm.csv"
        with open(fm_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["threshold", "f_measure"])
            for t, fm in zip(THRESHOLDS, r.fm_curve):
                writer.writerow([int(t), f"{fm:.6f}"])
        written.extend([pr_path, fm_path])
    return written


def print_eval_table(records: Sequence[EvalRecord]):
    """評価結果の表を表示"""
    print(f"{'dataset':<16}{'images':>8}" + "".join(f"{k:>10}" for k in METRIC_COLUMNS))
    print("-" * (24 + 10 * len(METRIC_COLUMNS)))
    for r in records:
        summary = r.summary()
        print(f"{r.dataset:<16}{r.num_images:>8}" + "".join(f"{summary[k]:>10.4f}" for k in METRIC_COLUMNS))
