"""雲の移動推定 (Horn–Schunck) と風向基準座標への回転・風上領域の切り出し。

座標規約: 画素 (row, col)。x は列方向 (右が正)、y は行方向 (下が正)。
風向 angle は atan2(v_y, u_x) で (−π, π] に正規化する。
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from sky_nowcast.errors import DataError
from sky_nowcast.models import FrameSequence
from sky_nowcast.preprocessing import SolarDiskMask

logger = logging.getLogger(__name__)

# [0, 1] の画素値を 8bit 階調に伸ばしてから解く (α の目安を階調単位に揃える)
_GRAY_LEVELS = 255.0

# 2×2 の前進差分カーネル (2 フレームの平均を取る)
_KERNEL_X = 0.25 * np.array([[-1.0, 1.0], [-1.0, 1.0]])
_KERNEL_Y = 0.25 * np.array([[-1.0, -1.0], [1.0, 1.0]])
_KERNEL_T = 0.25 * np.ones((2, 2))

# 近傍平均 (中心 0 の重み付き 8 近傍)
_AVERAGE_KERNEL = np.array([
    [1 / 12, 1 / 6, 1 / 12],
    [1 / 6, 0.0, 1 / 6],
    [1 / 12, 1 / 6, 1 / 12],
])

# 勾配重みの総和・風速がこれ以下なら風は観測不能
_MIN_OBSERVABLE = 1e-9

# 反復補正の残差がこれ未満 (px/step) なら打ち切る
_REFINE_STOP = 1e-3

# これより小さい回転角は恒等とみなす
_ROTATION_EPS = 1e-12


def _wrap_angle(angle: float) -> float:
    """角度を (−π, π] に正規化する。"""
    wrapped = math.atan2(math.sin(angle), math.cos(angle))
    return math.pi if wrapped <= -math.pi else wrapped


@dataclass(frozen=True)
class FlowField:
    """画素ごとの速度場 (px/step)。u は列方向、v は行方向。"""

    u: np.ndarray
    v: np.ndarray
    iterations: int


@dataclass(frozen=True)
class WindEstimate:
    """一様な雲の移動ベクトル。speed は px/step、angle はラジアン。"""

    speed: float
    angle: float

    def __post_init__(self) -> None:
        if not self.speed >= 0 or not math.isfinite(self.speed):
            raise ValueError(f"speed must be finite and non-negative, got {self.speed}")
        object.__setattr__(self, "angle", _wrap_angle(self.angle))

    @classmethod
    def from_velocity(cls, vx: float, vy: float) -> WindEstimate:
        return cls(speed=math.hypot(vx, vy), angle=math.atan2(vy, vx))

    @property
    def velocity(self) -> tuple[float, float]:
        """(v_x, v_y) = speed·(cos, sin)。"""
        return self.speed * math.cos(self.angle), self.speed * math.sin(self.angle)


# ---------------------------------------------------------------------------
# Horn–Schunck
# ---------------------------------------------------------------------------


def _derivatives(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """2 フレームから I_x, I_y, I_t を前進差分で求める。"""

    def forward(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
        return ndimage.correlate(image, kernel, mode="nearest", origin=-1)

    ix = forward(a, _KERNEL_X) + forward(b, _KERNEL_X)
    iy = forward(a, _KERNEL_Y) + forward(b, _KERNEL_Y)
    it = forward(b - a, _KERNEL_T)
    return ix, iy, it


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DataError(f"Frame shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < 2:
        raise DataError(f"Optical flow needs 2-D frames of at least 2×2 px, got {a.shape}")


def _solve(
    ix: np.ndarray,
    iy: np.ndarray,
    it: np.ndarray,
    alpha: float,
    iterations: int,
    tolerance: float,
    initial: FlowField | None = None,
) -> FlowField:
    if initial is None:
        u = np.zeros_like(ix)
        v = np.zeros_like(ix)
    else:
        u, v = initial.u, initial.v
    denom = alpha ** 2 + ix ** 2 + iy ** 2
    done = 0
    for done in range(1, iterations + 1):
        u_avg = ndimage.convolve(u, _AVERAGE_KERNEL, mode="nearest")
        v_avg = ndimage.convolve(v, _AVERAGE_KERNEL, mode="nearest")
        der = (ix * u_avg + iy * v_avg + it) / denom
        u_new = u_avg - ix * der
        v_new = v_avg - iy * der
        change = max(float(np.max(np.abs(u_new - u))), float(np.max(np.abs(v_new - v))))
        u, v = u_new, v_new
        if change < tolerance:
            break
    return FlowField(u=u, v=v, iterations=done)


def horn_schunck_flow(
    a: np.ndarray, b: np.ndarray, alpha: float = 1.0, iterations: int = 100, tolerance: float = 1e-4,
) -> FlowField:
    """Horn–Schunck 法で 2 フレーム間の密な速度場を求める。

    明るさ一定の拘束 I_x u + I_y v + I_t = 0 に平滑化項 α² を加えた汎関数を、
    ヤコビ反復で最小化する。最大更新量が tolerance を下回ったら打ち切る。
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_pair(a, b)
    ix, iy, it = _derivatives(a * _GRAY_LEVELS, b * _GRAY_LEVELS)
    return _solve(ix, iy, it, alpha, iterations, tolerance)


def _mean_pair_flow(
    seq: FrameSequence,
    alpha: float,
    iterations: int,
    tolerance: float,
    shift: tuple[float, float] = (0.0, 0.0),
) -> tuple[float, float, float]:
    """全フレーム対の速度場の勾配重み付き平均 (u, v) と重みの総和を返す。

    shift = (u₀, v₀) のときは後フレームを (−u₀, −v₀) だけ戻してから解き、残差の動きを測る。
    各対の反復は直前の対の速度場から始める (一様風なので解はほぼ同じ)。
    """
    du, dv = shift
    total_weight = 0.0
    sum_u = 0.0
    sum_v = 0.0
    flow: FlowField | None = None
    for k in range(len(seq) - 1):
        a = seq.frames[k]
        b = seq.frames[k + 1]
        _check_pair(a, b)
        if du or dv:
            b = ndimage.shift(b, (-dv, -du), order=3, mode="nearest")
        ix, iy, it = _derivatives(a * _GRAY_LEVELS, b * _GRAY_LEVELS)
        flow = _solve(ix, iy, it, alpha, iterations, tolerance, initial=flow)
        weight = np.hypot(ix, iy) / _GRAY_LEVELS
        total_weight += float(weight.sum())
        sum_u += float((weight * flow.u).sum())
        sum_v += float((weight * flow.v).sum())
    if total_weight < _MIN_OBSERVABLE:
        return 0.0, 0.0, total_weight
    return sum_u / total_weight, sum_v / total_weight, total_weight


def estimate_uniform_wind(
    seq: FrameSequence,
    alpha: float = 1.0,
    iterations: int = 100,
    tolerance: float = 1e-4,
    refinements: int = 2,
) -> WindEstimate:
    """連続フレーム対の速度場を勾配の大きさで重み付け平均し、一様風を推定する。

    テクスチャのない領域 (開口問題で速度が不定) は重みがほぼ 0 になる。
    反復回数が収束に足りないと速度は過小に出るため、推定した風で後フレームを
    戻して残差の動きを測り直し、推定に足し込む (refinements 回まで)。
    """
    if len(seq) < 2:
        raise DataError("Wind estimation needs at least 2 frames")
    if refinements < 0:
        raise ValueError(f"refinements must be non-negative, got {refinements}")
    u, v, total_weight = _mean_pair_flow(seq, alpha, iterations, tolerance)
    if total_weight < _MIN_OBSERVABLE:
        raise DataError("No wind observable: sequence has no intensity gradients")
    if math.hypot(u, v) <= _MIN_OBSERVABLE:
        raise DataError("No wind observable: estimated motion is zero")

    for round_ in range(1, refinements + 1):
        du, dv, _ = _mean_pair_flow(seq, alpha, iterations, tolerance, shift=(u, v))
        u += du
        v += dv
        logger.debug("Wind refinement %d: residual (%.4f, %.4f) px/step", round_, du, dv)
        if math.hypot(du, dv) < _REFINE_STOP:
            break

    wind = WindEstimate.from_velocity(u, v)
    if wind.speed <= _MIN_OBSERVABLE:
        raise DataError("No wind observable: estimated motion is zero")
    logger.info("Wind estimate: %.3f px/step at %.1f deg", wind.speed, math.degrees(wind.angle))
    return wind


# ---------------------------------------------------------------------------
# 回転と切り出し
# ---------------------------------------------------------------------------


def _rotation(shape: tuple[int, int], wind: WindEstimate) -> tuple[float, np.ndarray, np.ndarray, np.ndarray] | None:
    """風を −x 方向に向ける回転 (角度, 行列, offset, 中心)。恒等なら None。"""
    phi = _wrap_angle(math.pi - wind.angle)
    if abs(phi) < _ROTATION_EPS:
        return None
    c, s = math.cos(phi), math.sin(phi)
    # 出力画素 o に入力画素 M·o + offset を対応させる ((row, col) 座標)
    matrix = np.array([[c, -s], [s, c]])
    center = np.array([(shape[0] - 1) / 2.0, (shape[1] - 1) / 2.0])
    return phi, matrix, center - matrix @ center, center


def _warp(image: np.ndarray, matrix: np.ndarray, offset: np.ndarray) -> np.ndarray:
    return ndimage.affine_transform(image, matrix, offset=offset, order=1, mode="constant", cval=0.0)


def rotate_to_wind_frame(
    seq: FrameSequence, wind: WindEstimate, disk: SolarDiskMask,
) -> tuple[FrameSequence, SolarDiskMask, WindEstimate]:
    """風が −x 方向 (angle = π) を向くように全フレームを画像中心回りに回転する。

    双一次補間で、画像外からの画素は 0 (晴天) で埋める。
    戻り値は (回転後のシーケンス, 移動後の円盤, 回転後の風)。
    """
    if disk.shape != seq.shape:
        raise DataError(f"Disk mask shape {disk.shape} does not match frames {seq.shape}")
    rotated_wind = WindEstimate(speed=wind.speed, angle=math.pi)
    rotation = _rotation(seq.shape, wind)
    if rotation is None:
        return seq, disk, rotated_wind

    phi, matrix, offset, center = rotation
    frames = np.stack([_warp(frame, matrix, offset) for frame in seq.frames])
    new_center = matrix.T @ (np.asarray(disk.center) - center) + center
    try:
        new_disk = disk.moved_to((new_center[0], new_center[1]))
    except DataError as exc:
        raise DataError(f"Solar disk leaves the frame after rotation by {phi:.3f} rad") from exc
    logger.debug("Rotated frames by %.4f rad; disk now at (%.1f, %.1f)", phi, *new_center)
    return seq.with_frames(frames), new_disk, rotated_wind


def rotation_footprint(shape: tuple[int, int], wind: WindEstimate) -> np.ndarray:
    """回転後の画素のうち、元画像の内側だけから補間されたものを True とする。"""
    rotation = _rotation(shape, wind)
    if rotation is None:
        return np.ones(shape, dtype=bool)
    _, matrix, offset, _ = rotation
    return _warp(np.ones(shape), matrix, offset) > 1.0 - 1e-9


@dataclass(frozen=True)
class UpwindCrop:
    """円盤の風上側 (右側) を切り出した領域。

    sequence の列 j は元フレームの列 j + col_offset に対応する。
    """

    sequence: FrameSequence
    col_offset: int
    disk: SolarDiskMask
    # 回転で元画像の外から埋められた画素は False
    valid: np.ndarray | None = None

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.disk.shape

    def to_frame_col(self, col: float) -> float:
        return col + self.col_offset


def crop_upwind(
    seq: FrameSequence, disk: SolarDiskMask, margin: int = 2, valid: np.ndarray | None = None,
) -> UpwindCrop:
    """円盤右端から margin 離れた列から右端までを切り出す。valid も同じ列で切り出す。"""
    if margin < 0:
        raise ValueError(f"margin must be non-negative, got {margin}")
    if disk.shape != seq.shape:
        raise DataError(f"Disk mask shape {disk.shape} does not match frames {seq.shape}")
    start = math.ceil(disk.col + disk.radius + margin)
    if start >= seq.width:
        raise DataError(
            f"Empty upwind region: disk edge + margin reaches column {start} of {seq.width}"
        )
    if valid is not None and valid.shape != seq.shape:
        raise DataError(f"Valid mask shape {valid.shape} does not match frames {seq.shape}")
    cropped = FrameSequence(seq.frames[:, :, start:], seq.dt)
    return UpwindCrop(
        sequence=cropped,
        col_offset=start,
        disk=disk,
        valid=None if valid is None else valid[:, start:],
    )
