"""シーケンスの前処理 - 太陽円盤の検出・除去と列方向グレアの除去。"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from sky_nowcast.decomposition import build_snapshot_matrix, compute_pod
from sky_nowcast.errors import DataError
from sky_nowcast.models import FrameSequence

logger = logging.getLogger(__name__)

# 第1時間モードの平均がこれ未満なら定常成分なしとみなす
_MIN_TEMPORAL_MEAN = 1e-9


# ---------------------------------------------------------------------------
# 太陽円盤
# ---------------------------------------------------------------------------


def _disk_mask(center: tuple[float, float], radius: float, shape: tuple[int, int]) -> np.ndarray:
    rows, cols = np.ogrid[: shape[0], : shape[1]]
    return (rows - center[0]) ** 2 + (cols - center[1]) ** 2 <= radius ** 2


@dataclass(frozen=True)
class SolarDiskMask:
    """画像内の太陽円盤領域。mask は中心から radius 以内の画素で True。"""

    center: tuple[float, float]  # (row, col)
    radius: float
    shape: tuple[int, int]
    mask: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        row, col = self.center
        if self.radius < 1:
            raise DataError(f"Disk radius must be >= 1 px, got {self.radius}")
        if not (0 <= row <= self.shape[0] - 1 and 0 <= col <= self.shape[1] - 1):
            raise DataError(f"Disk center {self.center} lies outside the {self.shape} frame")
        mask = _disk_mask(self.center, self.radius, self.shape)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def row(self) -> float:
        return self.center[0]

    @property
    def col(self) -> float:
        return self.center[1]

    @property
    def pixel_count(self) -> int:
        return int(self.mask.sum())

    @property
    def bounds(self) -> tuple[int, int, int, int]:
        """マスクを含む最小矩形 (row0, row1, col0, col1)。終端は含まない。"""
        rows = np.flatnonzero(self.mask.any(axis=1))
        cols = np.flatnonzero(self.mask.any(axis=0))
        return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1

    def moved_to(self, center: tuple[float, float]) -> SolarDiskMask:
        """半径を保ったまま中心だけ移した円盤を返す。"""
        return SolarDiskMask(center=(float(center[0]), float(center[1])), radius=self.radius, shape=self.shape)


def locate_solar_disk(
    seq: FrameSequence, threshold_quantile: float = 0.995, edge_fraction: float = 0.5,
) -> SolarDiskMask:
    """第1 POD モードのしきい値処理で太陽円盤を検出する。

    第1モードの時間平均成分 σ₁·mean(v₁)·u₁ を画像に戻し、threshold_quantile 分位点を
    円盤の輝度として、中央値から edge_fraction の位置をしきい値とする。
    最大の連結成分の重心と等面積半径を円盤とする。
    """
    if len(seq) < 2:
        raise DataError("Solar disk location needs at least 2 frames")
    pod = compute_pod(build_snapshot_matrix(seq))
    if pod.singular_values[0] <= 0:
        raise DataError("No detectable solar disk: sequence is blank")
    if abs(float(np.mean(pod.temporal_modes[:, 0]))) < _MIN_TEMPORAL_MEAN:
        raise DataError("No detectable solar disk: first temporal mode has no constant component")

    image = pod.first_mode_image(seq.height, seq.width)
    plateau = float(np.quantile(image, threshold_quantile))
    floor = float(np.median(image))
    if plateau <= floor:
        raise DataError("No detectable solar disk: first mode has no bright region")
    candidates = image > floor + edge_fraction * (plateau - floor)

    labels, count = ndimage.label(candidates)
    if count == 0:
        raise DataError("No detectable solar disk: nothing above threshold")
    sizes = ndimage.sum_labels(candidates, labels, index=np.arange(1, count + 1))
    largest = int(np.argmax(sizes)) + 1
    row, col = ndimage.center_of_mass(labels == largest)
    radius = max(1.0, float(np.sqrt(sizes[largest - 1] / np.pi)))
    logger.info("Solar disk at (%.1f, %.1f), radius %.1f px", row, col, radius)
    return SolarDiskMask(center=(float(row), float(col)), radius=radius, shape=seq.shape)


def remove_first_mode_disk(seq: FrameSequence, disk: SolarDiskMask) -> FrameSequence:
    """第1 POD モードを全フレームから引き、円盤外の部分を足し戻す。

    つまり第1モード (ランク1項 σ₁u₁v₁ᵀ) のうち円盤内の成分だけを除去する。
    """
    if disk.shape != seq.shape:
        raise DataError(f"Disk mask shape {disk.shape} does not match frames {seq.shape}")
    x = build_snapshot_matrix(seq)
    pod = compute_pod(x)
    first = np.outer(pod.spatial_modes[:, 0] * pod.singular_values[0], pod.temporal_modes[:, 0])
    in_disk = disk.mask.flatten(order="F")
    cleaned = x.data - first * in_disk[:, np.newaxis]
    m, h, w = len(seq), seq.height, seq.width
    return seq.with_frames(cleaned.T.reshape(m, w, h).transpose(0, 2, 1))


# ---------------------------------------------------------------------------
# グレア
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GlareProfile:
    """列ごとのグレア基準値 g。

    シーケンス単位なら (W,)、フレーム単位なら (M, W)。
    """

    values: np.ndarray


def _centered_moving_average(values: np.ndarray, radius: int) -> np.ndarray:
    """最終軸方向の中心移動平均。端では窓を対称に縮めるので一次関数は保存される。"""
    if radius == 0:
        return values.copy()
    n = values.shape[-1]
    idx = np.arange(n)
    half = np.minimum(radius, np.minimum(idx, n - 1 - idx))
    zeros = np.zeros(values.shape[:-1] + (1,))
    csum = np.concatenate([zeros, np.cumsum(values, axis=-1)], axis=-1)
    return (csum[..., idx + half + 1] - csum[..., idx - half]) / (2 * half + 1)


def estimate_glare(
    seq: FrameSequence,
    smoothing_radius: int = 5,
    per_frame: bool = False,
    valid: np.ndarray | None = None,
) -> GlareProfile:
    """各列の最小画素値を平滑化したグレア基準値を返す。

    valid (H, W) を渡すと True の画素だけで最小値を取る。有効画素のない列は 0。
    """
    if smoothing_radius < 0:
        raise ValueError(f"smoothing_radius must be non-negative, got {smoothing_radius}")
    if smoothing_radius >= seq.width:
        raise DataError(
            f"smoothing_radius {smoothing_radius} must be smaller than frame width {seq.width}"
        )
    frames = seq.frames
    if valid is not None:
        if valid.shape != seq.shape:
            raise DataError(f"Valid mask shape {valid.shape} does not match frames {seq.shape}")
        frames = np.where(valid[np.newaxis], frames, np.inf)
    minima = frames.min(axis=1) if per_frame else frames.min(axis=(0, 1))
    minima = np.where(np.isfinite(minima), minima, 0.0)
    return GlareProfile(values=_centered_moving_average(minima, smoothing_radius))


def remove_glare(
    seq: FrameSequence,
    smoothing_radius: int = 5,
    per_frame: bool = False,
    valid: np.ndarray | None = None,
) -> FrameSequence:
    """列方向のグレアを除去する。

    回転・切り出し後は各列が太陽からほぼ等距離にあるため、
    列ごとの最小値 g_j を平滑化して各列から引き、0 でクランプする。
    """
    profile = estimate_glare(seq, smoothing_radius, per_frame, valid)
    g = profile.values
    baseline = g[:, np.newaxis, :] if per_frame else g[np.newaxis, np.newaxis, :]
    return seq.with_frames(seq.frames - baseline)


def suppress_static_background(seq: FrameSequence) -> FrameSequence:
    """画素ごとの時間最小値を引き、静止成分 (グレア・円盤残差) を消す。"""
    return seq.with_frames(seq.frames - seq.frames.min(axis=0, keepdims=True))
