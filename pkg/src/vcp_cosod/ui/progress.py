"""
プログレス表示モジュール

学習ステップ・推論グループ・評価画像のループの進捗を tqdm で表示し、
最後に処理サマリーを出力する。
"""

import time
from dataclasses import dataclass, field
from typing import Dict, Optional

from tqdm import tqdm


@dataclass
class ProgressInfo:
    """プログレス情報を管理するデータクラス"""
    current: int = 0
    total: int = 0
    status: str = "待機中"
    start_time: float = field(default_factory=time.time)
    last_loss: Optional[float] = None

    @property
    def elapsed_time(self) -> float:
        return time.time() - self.start_time

    @property
    def items_per_second(self) -> float:
        elapsed = self.elapsed_time
        if elapsed == 0:
            return 0.0
        return self.current / elapsed


def format_time(seconds: float) -> str:
    """時間を読みやすい形式でフォーマット"""
    if seconds < 60:
        return f"{seconds:.0f}s"
    elif seconds < 3600:
        return f"{seconds // 60:.0f}m{seconds % 60:.0f}s"
    else:
        hours = seconds // 3600
        minutes = (seconds % 3600) // 60
        return f"{hours:.0f}h{minutes:.0f}m"


class ProgressTracker:
    """タスクごとの進捗追跡と表示を管理するクラス"""

    def __init__(self, show_progress: bool = True):
        """
        Args:
            show_progress: プログレスバーを表示するかどうか（False でも集計は行う）
        """
        self.show_progress = show_progress
        self.tasks: Dict[str, ProgressInfo] = {}
        self._bars: Dict[str, tqdm] = {}

    def add_task(self, name: str, total: int, status: str = ""):
        """タスクの進捗追跡を開始"""
        self.tasks[name] = ProgressInfo(total=total, status=status or name)
        self._bars[name] = tqdm(total=total, desc=status or name, disable=not self.show_progress,
                                leave=False, dynamic_ncols=True)

    def update(self, name: str, amount: int = 1, loss: Optional[float] = None, status: Optional[str] = None):
        """タスクの進捗を更新"""
        progress = self.tasks[name]
        progress.current += amount
        bar = self._bars[name]
        if status:
            progress.status = status
            bar.set_description(status)
        if loss is not None:
            progress.last_loss = loss
            bar.set_postfix(loss=f"{loss:.4f}")
        bar.update(amount)

    def close(self):
        """全てのプログレスバーを閉じる"""
        for bar in self._bars.values():
            bar.close()
        self._bars.clear()

    def __enter__(self) -> "ProgressTracker":
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()

    def print_final_summary(self):
        """最終結果サマリーを表示"""
        if not self.show_progress or not self.tasks:
            return

        print("\n" + "=" * 50)
        print("処理完了サマリー")
        print("=" * 50)
        for progress in self.tasks.values():
            line = (f"{progress.status}: {progress.current}/{progress.total} "
                    f"処理時間: {format_time(progress.elapsed_time)} "
                    f"平均速度: {progress.items_per_second:.2f}/s")
            if progress.last_loss is not None:
                line += f" 最終損失: {progress.last_loss:.4f}"
            print(line)
        print("=" * 50)
