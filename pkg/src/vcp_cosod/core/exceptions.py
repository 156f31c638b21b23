"""
例外定義モジュール

ライブラリ内部では sys.exit せず、ここで定義した例外を送出する。
CLI 層でまとめて捕捉してメッセージ表示と終了コードに変換する。
"""


class VCPError(Exception):
    """本パッケージの例外の基底クラス"""


class ConfigError(VCPError, ValueError):
    """設定値の不正（未知のキー、型違い、不変条件違反）"""


class BackboneWeightsError(VCPError, ValueError):
    """バックボーン重みファイルの欠落・形状不一致"""


class ShapeMismatchError(VCPError, ValueError):
    """テンソル形状の契約違反"""


class NumericalInstabilityError(VCPError, ArithmeticError):
    """非有限値（NaN / Inf）の検出"""

    def __init__(self, message: str, step: int = -1, term: str = ""):
        super().__init__(message)
        self.step = step
        self.term = term


class DatasetError(VCPError, ValueError):
    """データセット構造の不正（ペア欠落、空グループ等）"""


class CheckpointError(VCPError, ValueError):
    """チェックポイントのバージョン・フィンガープリント不一致"""


class MetricInputError(VCPError, ValueError):
    """評価指標の入力不正（サイズ不一致、対応するマスクの欠落）"""
