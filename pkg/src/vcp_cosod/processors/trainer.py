"""
学習処理モジュール

凍結バックボーン上の学習可能パラメータのみを AdamW + コサイン減衰で最適化する。
"""

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import torch

from ..core.config import Config
from ..core.exceptions import DatasetError, NumericalInstabilityError
from ..core.models import GroupBatch, ImageGroup, ModelConfig, TunableCheckpoint
from ..data.batch_sampler import GroupBatchSampler
from ..data.preprocess import collate_batch
from ..networks.model import VCPModel, build_model
from ..networks.objectives import AUX_COLUMNS, LossBreakdown, total_loss
from ..ui.progress import ProgressTracker
from .checkpoint import make_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "vcp_tunable.pt"
LOSS_LOG_NAME = "loss_log.csv"
LOSS_LOG_COLUMNS = ("step", "lr", "total", "final", *AUX_COLUMNS, "ce")


def resolve_model_config(model_config: ModelConfig, num_groups: int) -> ModelConfig:
    """num_classes = 0 をグループ数で置き換える"""
    if model_config.head.num_classes:
        return model_config
    head = dataclasses.replace(model_config.head, num_classes=num_groups)
    return dataclasses.replace(model_config, head=head)


def _no_decay(name: str, param: torch.nn.Parameter) -> bool:
    # 正規化・バイアス・シードは減衰対象外
    return param.ndim < 2 or name.endswith("seeds")


def build_optimizer(model: VCPModel, lr: float, weight_decay: float) -> torch.optim.AdamW:
    """学習可能パラメータのみを対象にした AdamW"""
    decay, no_decay = [], []
    for name, param in model.named_parameters():
        if not param.requires_grad:
            continue
        (no_decay if _no_decay(name, param) else decay).append(param)
    return torch.optim.AdamW(
        [{"params": decay, "weight_decay": weight_decay},
         {"params": no_decay, "weight_decay": 0.0}],
        lr=lr,
    )


@dataclass
class TrainResult:
    checkpoint: TunableCheckpoint
    loss_log: List[Dict[str, float]] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None
    checkpoint_bytes: int = 0

    @property
    def initial_loss(self) -> float:
        return self.loss_log[0]["total"] if self.loss_log else float("nan")

    @property
    def final_loss(self) -> float:
        return self.loss_log[-1]["total"] if self.loss_log else float("nan")


class Trainer:
    """グループ単位バッチによる学習を行うクラス"""

    def __init__(self, config: Config, groups: List[ImageGroup], model: Optional[VCPModel] = None):
        """
        初期化

        Args:
            config: 設定オブジェクト
            groups: 学習グループ（3以上）
            model: 構築済みモデル（省略時は設定から構築）
        """
        if len(groups) < 3:
            raise DatasetError(f"学習には3グループ以上が必要です: {len(groups)}")
        self.config = config
        self.groups = groups
        self.train_config = config.train_config
        self.loss_weights = config.loss_weights
        self.device = torch.device(self.train_config.device)
        if model is None:
            model_config = resolve_model_config(config.model_config, len(groups))
            model = build_model(model_config, config.backbone_weights, config.backbone_init_seed)
        num_classes = model.config.head.num_classes
        if max(g.label_index for g in groups) >= num_classes:
            raise DatasetError(f"グループ数 {len(groups)} が分類器のクラス数 {num_classes} を超えています")
        self.model = model.to(self.device)

    @property
    def total_steps(self) -> int:
        """max_steps 優先、無指定なら epochs × steps_per_epoch（既定はグループ数 // 3）"""
        tc = self.train_config
        if tc.max_steps:
            return tc.max_steps
        steps_per_epoch = tc.steps_per_epoch or max(len(self.groups) // 3, 1)
        return tc.epochs * steps_per_epoch

    def train_step(self, batch: GroupBatch, optimizer: torch.optim.Optimizer, step: int) -> LossBreakdown:
        """1ステップ分の順伝播・逆伝播・更新"""
        images, masks, labels = collate_batch(batch, self.train_config.input_size)
        images, masks, labels = images.to(self.device), masks.to(self.device), labels.to(self.device)
        output = self.model(images, group_sizes=[batch.spec.n] * len(batch.groups))
        breakdown = total_loss(output.prediction, output.aux_logits, output.class_logits,
                               masks, labels, self.loss_weights, output.aux_stages)
        bad = breakdown.non_finite_term()
        if bad is not None:
            raise NumericalInstabilityError(
                f"ステップ {step} で損失項 {bad} が非有限になりました: {breakdown.as_dict()}",
                step=step, term=bad,
            )
        optimizer.zero_grad(set_to_none=True)
        breakdown.total.backward()
        optimizer.step()
        return breakdown

    def train(self, out_dir: Optional[Union[str, Path]] = None, show_progress: bool = False) -> TrainResult:
        """
        学習を実行

        Args:
            out_dir: チェックポイントと loss_log.csv の出力先（省略時は保存しない）
            show_progress: プログレスバーを表示するかどうか

        Returns:
            TrainResult
        """
        tc = self.train_config
        total_steps = self.total_steps
        torch.manual_seed(tc.seed)
        np.random.seed(tc.seed)
        optimizer = build_optimizer(self.model, tc.lr, tc.weight_decay)
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=max(total_steps, 1), eta_min=tc.lr_final
        )
        sampler = GroupBatchSampler(self.groups, seed=tc.seed, cap=tc.max_group_size, num_batches=total_steps)
        logger.info("学習開始: %d ステップ, %d グループ, 学習可能パラメータ %s",
                    total_steps, len(self.groups),
                    f"{sum(p.numel() for p in self.model.tunable_parameters()):,}")

        loss_log: List[Dict[str, float]] = []
        self.model.train()
        with ProgressTracker(show_progress) as tracker:
            tracker.add_task("train", total_steps, "学習")
            for step, batch in enumerate(sampler):
                lr = scheduler.get_last_lr()[0]
                breakdown = self.train_step(batch, optimizer, step)
                scheduler.step()
                row = {"step": step, "lr": lr, **breakdown.as_dict()}
                loss_log.append(row)
                tracker.update("train", loss=row["total"])
                if tc.log_every and step % tc.log_every == 0:
                    logger.info("step %d lr %.2e total %.4f final %.4f aux %s ce %.4f",
                                step, lr, row["total"], row["final"],
                                " ".join(f"{row[c]:.4f}" for c in AUX_COLUMNS), row["ce"])
            tracker.close()
            tracker.print_final_summary()
        self.model.eval()

        result = TrainResult(make_checkpoint(self.model, total_steps), loss_log)
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            result.checkpoint_path = out_dir / CHECKPOINT_NAME
            result.checkpoint_bytes = save_checkpoint(result.checkpoint, result.checkpoint_path)
            write_loss_log(loss_log, out_dir / LOSS_LOG_NAME)
        return result


def write_loss_log(rows: List[Dict[str, float]], path: Union[str, Path]):
    """1ステップ1行の損失ログを書き出す"""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=LOSS_LOG_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in LOSS_LOG_COLUMNS})
