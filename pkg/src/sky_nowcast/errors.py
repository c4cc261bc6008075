"""例外階層。CLI の終了コードと 1 対 1 に対応する。"""

from __future__ import annotations


class NowcastError(Exception):
    """本パッケージが送出する例外の基底クラス。"""

    exit_code = 1


class ConfigError(NowcastError, ValueError):
    """設定ファイル・シナリオファイルの読み込み／検証エラー。"""

    exit_code = 1


class DataError(NowcastError, ValueError):
    """入力データの形状・内容に起因するエラー。"""

    exit_code = 2


class NumericalError(NowcastError, ArithmeticError):
    """数値計算の失敗 (悪条件・発散など)。"""

    exit_code = 3


class RankError(NumericalError):
    """要求された DMD 次数をデータのランクが支えられない。"""


class HorizonError(NumericalError):
    """予測時刻が最大予測ホライズンを超えている。"""
