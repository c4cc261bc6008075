from __future__ import annotations

from collections.abc import Sequence
from enum import Enum
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, model_validator

from sky_nowcast.errors import DataError


# ---------------------------------------------------------------------------
# 実行設定
# ---------------------------------------------------------------------------


class DMDConfig(BaseModel):
    """DMD とスライディングウィンドウのパラメータ。"""

    order: int = Field(default=3, ge=1, le=50, description="DMD 次数 r")
    window: int = Field(default=8, ge=3, le=1000, description="ウィンドウ長 M_m (フレーム数)")
    augment_levels: int = Field(default=1, ge=0, le=10, description="シフトスタックの深さ")
    min_singular_ratio: float = Field(
        default=1e-2, gt=0, lt=1,
        description="予測時に採用する特異値の下限 (σ₁ に対する比)",
    )

    @model_validator(mode="after")
    def _window_exceeds_order(self) -> DMDConfig:
        if self.window <= self.order + 1:
            raise ValueError(
                f"window ({self.window}) must exceed order + 1 ({self.order + 1})"
            )
        if self.window - self.augment_levels < 2:
            raise ValueError("window too short for the requested augmentation depth")
        return self


class FlowConfig(BaseModel):
    """Horn–Schunck オプティカルフローのパラメータ。"""

    alpha: float = Field(default=1.0, gt=0, le=1000, description="平滑化の重み α (8bit 階調基準)")
    iterations: int = Field(default=100, ge=1, le=10000, description="最大反復回数")
    tolerance: float = Field(default=1e-4, gt=0, le=1, description="収束判定 (最大更新量)")
    refinements: int = Field(default=2, ge=0, le=10, description="推定風で後フレームを戻して測り直す回数")


class DiskConfig(BaseModel):
    """太陽円盤検出のパラメータ。"""

    threshold_quantile: float = Field(default=0.995, gt=0.5, le=1.0, description="円盤輝度の推定分位点")
    edge_fraction: float = Field(default=0.5, gt=0, lt=1, description="円盤境界とみなす輝度比")


class GlareConfig(BaseModel):
    """列方向グレア除去のパラメータ。"""

    smoothing_radius: int = Field(default=5, ge=0, le=1000, description="移動平均の半径 (px)")
    per_frame: bool = Field(default=False, description="フレームごとに最小値を取る")


class InsetConfig(BaseModel):
    """インセット選択のパラメータ。"""

    energy_quantile: float = Field(default=0.95, gt=0, le=1.0, description="第1モードのエネルギー比")
    margin: int = Field(default=2, ge=0, le=50, description="バウンディングボックスの余白 (px)")
    min_area: int = Field(default=4, ge=1, le=10000, description="最小連結成分面積 (px)")


class ReportConfig(BaseModel):
    """レポート出力と評価指標のパラメータ。"""

    dissolution_threshold: float = Field(default=0.95, gt=0, le=1.0, description="晴天判定の K")
    sustain_fraction: float = Field(default=0.9, gt=0, le=1.0, description="継続判定の割合")
    trace_steps: list[int] = Field(default_factory=list, description="予測軌跡を出力するステップ")


class RunConfig(BaseModel):
    """forecast コマンドの実行設定全体。"""

    input_path: Path = Field(description="画像ディレクトリまたはシナリオファイル")
    output_dir: Path = Field(default=Path("output"), description="出力ディレクトリ")
    dt: float | None = Field(default=None, gt=0, le=3600, description="フレーム間隔 (秒)")
    seed: int = Field(default=0, ge=0, description="シナリオ入力時の乱数シード")
    crop_margin: int = Field(default=2, ge=0, le=100, description="円盤と切り出し領域の間隔 (px)")
    emit_frames: bool = Field(default=False, description="合成予測画像を PNG で出力する")
    dmd: DMDConfig = Field(default_factory=DMDConfig)
    flow: FlowConfig = Field(default_factory=FlowConfig)
    disk: DiskConfig = Field(default_factory=DiskConfig)
    glare: GlareConfig = Field(default_factory=GlareConfig)
    insets: InsetConfig = Field(default_factory=InsetConfig)
    report: ReportConfig = Field(default_factory=ReportConfig)


# ---------------------------------------------------------------------------
# 合成シナリオ
# ---------------------------------------------------------------------------


class AmplitudeLaw(str, Enum):
    """雲塊の振幅の時間変化則。"""

    CONSTANT = "constant"
    EXPONENTIAL = "exponential"
    SIN_LOBE = "sin_lobe"


class BlobSpec(BaseModel):
    """等方ガウス型の雲塊1つ。速度は (列, 行) 方向の px/step。"""

    center_row: float
    center_col: float
    sigma: float = Field(gt=0, le=1000)
    amplitude: float = Field(ge=0, le=1)
    velocity_x: float = Field(default=0.0, ge=-100, le=100)
    velocity_y: float = Field(default=0.0, ge=-100, le=100)
    law: AmplitudeLaw = AmplitudeLaw.CONSTANT
    rate: float = Field(default=0.0, ge=-10, le=10, description="指数則の減衰率 (1/s, 正で減衰)")
    period: float | None = Field(default=None, gt=0, description="sin 則の継続時間 (秒)")

    @model_validator(mode="after")
    def _lobe_needs_period(self) -> BlobSpec:
        if self.law == AmplitudeLaw.SIN_LOBE and self.period is None:
            raise ValueError("sin_lobe law requires a period")
        return self


class DiskSpec(BaseModel):
    """合成シーケンス中の太陽円盤。"""

    center_row: float
    center_col: float
    radius: float = Field(ge=1, le=1000)
    brightness: float = Field(default=1.0, ge=0, le=1, description="円盤画素の値 (背景・グレアを置き換える)")


class SynthScenario(BaseModel):
    """解析解が既知の合成シーケンスの定義。"""

    height: int = Field(ge=2, le=4096)
    width: int = Field(ge=2, le=4096)
    dt: float = Field(default=2.0, gt=0, le=3600)
    steps: int = Field(ge=1, le=100000)
    disk: DiskSpec
    background: float = Field(default=0.1, ge=0, le=1)
    glare_amplitude: float = Field(default=0.0, ge=0, le=1, description="列方向グレアの傾斜振幅")
    noise: float = Field(default=0.0, ge=0, le=0.5, description="一様加法ノイズの振幅")
    blobs: list[BlobSpec] = Field(default_factory=list)

    @model_validator(mode="after")
    def _geometry_inside_frame(self) -> SynthScenario:
        d = self.disk
        if not (d.radius <= d.center_row <= self.height - 1 - d.radius):
            raise ValueError("disk must lie inside the frame (rows)")
        if not (d.radius <= d.center_col <= self.width - 1 - d.radius):
            raise ValueError("disk must lie inside the frame (columns)")
        base = self.background + self.glare_amplitude
        for i, blob in enumerate(self.blobs):
            if not (0 <= blob.center_row <= self.height - 1 and 0 <= blob.center_col <= self.width - 1):
                raise ValueError(f"blob {i} starts outside the frame")
            if base + blob.amplitude > 1.0:
                raise ValueError(f"blob {i}: background + glare + amplitude exceeds 1")
        return self


# ---------------------------------------------------------------------------
# フレーム列
# ---------------------------------------------------------------------------


class FrameSequence:
    """時系列グレースケール画像のラッパー。

    画素値は雲量 C (1 = 雲, 0 = 晴天) で [0, 1] に正規化済み。
    生成後は読み取り専用。
    """

    def __init__(self, frames: np.ndarray, dt: float) -> None:
        """frames は (M, H, W) の配列、dt はフレーム間隔 (秒)。"""
        arr = np.array(frames, dtype=float)
        if arr.ndim != 3:
            raise DataError(f"Frames must be a (M, H, W) array, got shape {arr.shape}")
        if arr.shape[0] == 0:
            raise DataError("Frame sequence must not be empty")
        if arr.shape[1] == 0 or arr.shape[2] == 0:
            raise DataError(f"Frames must not be empty, got shape {arr.shape[1:]}")
        if not np.isfinite(arr).all():
            raise DataError("Frames contain non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DataError(
                f"Pixel values must lie in [0, 1], got [{arr.min():.6g}, {arr.max():.6g}]"
            )
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        arr.setflags(write=False)
        self.frames = arr
        self.dt = float(dt)

    @classmethod
    def from_frames(cls, frames: Sequence[np.ndarray], dt: float) -> FrameSequence:
        """個別フレームのリストから生成する。サイズ不一致はエラー。"""
        if len(frames) == 0:
            raise DataError("Frame sequence must not be empty")
        shapes = sorted({np.shape(f) for f in frames})
        if len(shapes) > 1:
            raise DataError(f"Mismatched frame shapes: {shapes}")
        return cls(np.stack([np.asarray(f, dtype=float) for f in frames]), dt)

    @classmethod
    def clipped(cls, frames: np.ndarray, dt: float) -> FrameSequence:
        """[0, 1] にクランプしてから生成する (演算境界でのクランプ用)。"""
        return cls(np.clip(frames, 0.0, 1.0), dt)

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    @property
    def times(self) -> np.ndarray:
        """各フレームの時刻 (秒)。k 番目 (0 始まり) は k·dt。"""
        return np.arange(len(self)) * self.dt

    def window(self, start: int, length: int) -> FrameSequence:
        """start (0 始まり) から length フレームの部分列を返す。"""
        if start < 0 or length < 1 or start + length > len(self):
            raise DataError(
                f"Window [{start}, {start + length}) outside sequence of length {len(self)}"
            )
        return FrameSequence(self.frames[start:start + length], self.dt)

    def with_frames(self, frames: np.ndarray) -> FrameSequence:
        """同じ dt で画素だけ差し替えた列を返す (クランプ付き)。"""
        return FrameSequence.clipped(frames, self.dt)

    def __len__(self) -> int:
        return self.frames.shape[0]
