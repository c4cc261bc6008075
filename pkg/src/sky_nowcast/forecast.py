"""インセット単位の DMD 予測と凍結移流予測、晴天指数 K の算出、パイプライン全体。

時刻の規約:
- ステップ k は 1 始まりで、時刻は (k−1)·dt。
- 予測はウィンドウ末尾フレーム (発行ステップ) からの経過時間 τ で表す。
- 回転後の座標では雲は −x 方向 (左) に speed px/step で流れる。
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import pandas as pd
from scipy import ndimage

from sky_nowcast.decomposition import (
    DMDModel,
    SnapshotMatrix,
    admissible_rank,
    build_snapshot_matrix,
    compute_dmd,
    compute_pod,
    evaluate_dmd,
    unflatten,
)
from sky_nowcast.errors import DataError, HorizonError, NumericalError
from sky_nowcast.models import FrameSequence, RunConfig
from sky_nowcast.motion import (
    UpwindCrop,
    WindEstimate,
    crop_upwind,
    estimate_uniform_wind,
    rotate_to_wind_frame,
    rotation_footprint,
)
from sky_nowcast.preprocessing import (
    SolarDiskMask,
    locate_solar_disk,
    remove_first_mode_disk,
    remove_glare,
    suppress_static_background,
)

logger = logging.getLogger(__name__)

# Re(ω)·t がこれを超えるモードがあれば外挿の警告を付ける
_GROWTH_WARNING = 3.0

# 浮動小数の切り捨て誤差を吸収する
_STEP_EPS = 1e-9

# モードの寄与がスナップショットの最大ノルムのこの倍を超えたら次数を下げる
# (重根に近い固有値では振幅が打ち消し合い、寄与が桁違いに大きくなる)
_MAX_AMPLITUDE_GAIN = 10.0


class ForecastMethod(str, Enum):
    """予測手法。"""

    DMD = "dmd"
    FROZEN = "frozen_advection"


# ---------------------------------------------------------------------------
# データ型
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Inset:
    """切り出し領域内の雲の矩形領域とその時間窓。

    rows / cols は切り出し座標の半開区間 [start, stop)。
    window_start は 0 始まりのフレーム番号。
    """

    rows: tuple[int, int]
    cols: tuple[int, int]
    window_start: int
    window_len: int

    def __post_init__(self) -> None:
        if not (0 <= self.rows[0] < self.rows[1]) or not (0 <= self.cols[0] < self.cols[1]):
            raise ValueError(f"Inset bounds must be non-empty, got rows={self.rows} cols={self.cols}")
        if self.window_start < 0 or self.window_len < 2:
            raise ValueError(
                f"Inset window must start >= 0 and span >= 2 frames, "
                f"got start={self.window_start} len={self.window_len}"
            )

    @property
    def height(self) -> int:
        return self.rows[1] - self.rows[0]

    @property
    def width(self) -> int:
        return self.cols[1] - self.cols[0]

    @property
    def issue_step(self) -> int:
        """ウィンドウ末尾フレームのステップ番号 (1 始まり)。"""
        return self.window_start + self.window_len


@dataclass
class ForecastRecord:
    """1 回の予測結果。

    k_value は予測時間範囲内の K の最小値、horizon_s はそれを与える τ。
    arrival_time_s は雲の先端が円盤中心の列に届くまでの時間。
    """

    issue_step: int
    horizon_s: float
    arrival_time_s: float
    k_value: float
    method: ForecastMethod
    warnings: tuple[str, ...] = ()
    inset: Inset | None = None
    trajectory: np.ndarray | None = field(default=None, repr=False)  # (n, 2): τ, K
    spectrum: pd.DataFrame | None = field(default=None, repr=False)
    frame: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.k_value <= 1.0:
            raise ValueError(f"k_value must lie in [0, 1], got {self.k_value}")
        if self.horizon_s < 0:
            raise ValueError(f"horizon_s must be non-negative, got {self.horizon_s}")


@dataclass
class CsiSeries:
    """パイプラインの出力。実測 K と各手法の予測系列。"""

    dt: float
    actual: np.ndarray  # ステップ 1..M の K
    disk: SolarDiskMask  # 回転後の円盤
    wind: WindEstimate | None  # 元画像座標での推定風 (観測不能なら None)
    t_max_s: float | None
    window: int
    forecasts: dict[ForecastMethod, list[ForecastRecord]]
    inset_forecasts: list[ForecastRecord] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.actual)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps) * self.dt

    def actual_at(self, step: int) -> float:
        """ステップ step (1 始まり) の実測 K。"""
        if not 1 <= step <= self.steps:
            raise IndexError(f"step {step} outside 1..{self.steps}")
        return float(self.actual[step - 1])


# ---------------------------------------------------------------------------
# 晴天指数
# ---------------------------------------------------------------------------


def csi_of_frame(frame: np.ndarray, disk: SolarDiskMask) -> float:
    """K = 1 − 円盤内の雲量 C の平均。[0, 1] にクランプする。"""
    frame = np.asarray(frame, dtype=float)
    if frame.shape != disk.shape:
        raise DataError(f"Frame shape {frame.shape} does not match disk mask {disk.shape}")
    return _clamp_csi(1.0 - float(frame[disk.mask].mean()))


def _clamp_csi(value: float) -> float:
    return min(1.0, max(0.0, value))


def max_horizon(frame_width_px: int, dt: float, wind: WindEstimate) -> float:
    """切り出し幅を雲が横断する時間 t_max = w·dt / speed (秒)。"""
    if wind.speed <= 0:
        raise ValueError("Maximum horizon is undefined for zero wind speed")
    if frame_width_px < 1:
        raise ValueError(f"frame width must be >= 1 px, got {frame_width_px}")
    return frame_width_px * dt / wind.speed


# ---------------------------------------------------------------------------
# インセット選択
# ---------------------------------------------------------------------------


def _merge_boxes(boxes: list[list[int]]) -> list[list[int]]:
    merged = [list(b) for b in boxes]
    changed = True
    while changed:
        changed = False
        for i in range(len(merged)):
            for j in range(i + 1, len(merged)):
                a, b = merged[i], merged[j]
                if a[0] < b[1] and b[0] < a[1] and a[2] < b[3] and b[2] < a[3]:
                    merged[i] = [min(a[0], b[0]), max(a[1], b[1]), min(a[2], b[2]), max(a[3], b[3])]
                    del merged[j]
                    changed = True
                    break
            if changed:
                break
    return merged


def select_insets(
    window: FrameSequence,
    energy_quantile: float = 0.95,
    margin: int = 2,
    min_area: int = 4,
    window_start: int = 0,
) -> list[Inset]:
    """第1 POD モードのエネルギーが集中する領域を矩形インセットとして返す。

    エネルギー (σ₁u₁)² の大きい画素から順に、総エネルギーの energy_quantile を
    占めるまで採用し、連結成分ごとに margin 付きの矩形を作る。重なる矩形は統合する。
    """
    if len(window) < 2:
        raise DataError("Inset selection needs at least 2 frames")
    if not 0 < energy_quantile <= 1:
        raise ValueError(f"energy_quantile must lie in (0, 1], got {energy_quantile}")
    pod = compute_pod(build_snapshot_matrix(window))
    sigma = float(pod.singular_values[0])
    if sigma <= 0:
        return []
    energy = unflatten((sigma * pod.spatial_modes[:, 0]) ** 2, window.height, window.width)
    total = float(energy.sum())
    if total <= 0:
        return []

    flat = energy.ravel()
    order = np.argsort(flat)[::-1]
    cumulative = np.cumsum(flat[order]) / total
    keep = min(int(np.searchsorted(cumulative, energy_quantile)) + 1, flat.size)
    selected = np.zeros(flat.size, dtype=bool)
    selected[order[:keep]] = True
    selected = selected.reshape(energy.shape)

    labels, _ = ndimage.label(selected, structure=np.ones((3, 3)))
    boxes = []
    for index, region in enumerate(ndimage.find_objects(labels), start=1):
        if region is None:
            continue
        area = int(np.count_nonzero(labels[region] == index))
        if area < min_area:
            continue
        rs, cs = region
        boxes.append([
            max(0, rs.start - margin), min(window.height, rs.stop + margin),
            max(0, cs.start - margin), min(window.width, cs.stop + margin),
        ])
    boxes = sorted(_merge_boxes(boxes), key=lambda b: (b[2], b[0]))
    return [
        Inset(rows=(b[0], b[1]), cols=(b[2], b[3]), window_start=window_start, window_len=len(window))
        for b in boxes
    ]


# ---------------------------------------------------------------------------
# インセットの予測モデル
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InsetFit:
    """移流を打ち消したインセットの時系列と、そこに当てはめた DMD モデル。"""

    inset: Inset
    frame_cols: tuple[int, int]  # 元フレーム座標の列範囲 [start, stop)
    stabilized: np.ndarray = field(repr=False)  # (M_m, h, w)
    model: DMDModel | None
    dt: float
    arrival_time_s: float

    @property
    def window_end_s(self) -> float:
        """ウィンドウ先頭から末尾フレームまでの時間。"""
        return (self.inset.window_len - 1) * self.dt

    def future_image(self, method: ForecastMethod, tau: float) -> np.ndarray:
        """発行時刻から τ 秒後の (移流前の) インセット画像。"""
        if method == ForecastMethod.FROZEN:
            return self.stabilized[-1]
        if self.model is None:
            return np.zeros(self.stabilized.shape[1:])
        state = evaluate_dmd(self.model, self.window_end_s + tau)
        return unflatten(state, self.inset.height, self.inset.width)


def _shift_columns(image: np.ndarray, shift: float) -> np.ndarray:
    if shift == 0:
        return image
    return ndimage.shift(image, (0.0, shift), order=1, mode="constant", cval=0.0, prefilter=False)


def _stabilized_window(crop: UpwindCrop, inset: Inset, wind: WindEstimate) -> np.ndarray:
    """ウィンドウ内の各フレームを末尾フレームの位置まで移流させて並べる。"""
    r0, r1 = inset.rows
    c0, c1 = inset.cols
    last = inset.window_len - 1
    frames = crop.sequence.frames[inset.window_start:inset.window_start + inset.window_len]
    stack = [
        _shift_columns(frame[r0:r1], -wind.speed * (last - j))[:, c0:c1]
        for j, frame in enumerate(frames)
    ]
    return np.clip(np.stack(stack), 0.0, 1.0)


def _bounded_model(x: SnapshotMatrix, model: DMDModel, augment_levels: int, inset: Inset) -> DMDModel:
    """モードの寄与がデータの規模に収まるまで次数を下げて当てはめ直す。1 次は常に有界。"""
    scale = float(np.linalg.norm(x.data, axis=0).max())
    while model.order > 1 and model.mode_weights.max() > _MAX_AMPLITUDE_GAIN * scale:
        logger.debug(
            "Inset %s: order %d has mode weight %.3g against snapshot norm %.3g; refitting",
            inset.cols, model.order, model.mode_weights.max(), scale,
        )
        model = compute_dmd(x, model.order - 1, augment_levels, image_valued=True)
    return model


def fit_inset(
    crop: UpwindCrop,
    inset: Inset,
    wind: WindEstimate,
    r: int = 3,
    augment_levels: int = 1,
    min_singular_ratio: float = 1e-2,
    fit_dmd: bool = True,
) -> InsetFit:
    """インセットを雲と共に動く座標系で安定化し、DMD を当てはめる。

    次数は r を上限に、特異値比 min_singular_ratio を満たす範囲まで下げる。
    さらにモードの寄与がスナップショットの規模を大きく超える間は次数を 1 ずつ下げる。
    """
    if wind.speed <= 0:
        raise DataError("Inset forecast needs a non-zero wind speed")
    if inset.window_len <= r + 1:
        raise ValueError(f"window length {inset.window_len} must exceed r + 1 = {r + 1}")
    if inset.window_start + inset.window_len > len(crop.sequence):
        raise DataError(
            f"Inset window [{inset.window_start}, {inset.issue_step}) exceeds "
            f"sequence length {len(crop.sequence)}"
        )
    if inset.rows[1] > crop.sequence.height or inset.cols[1] > crop.sequence.width:
        raise DataError(f"Inset {inset.rows}×{inset.cols} exceeds crop {crop.sequence.shape}")

    dt = crop.sequence.dt
    stabilized = _stabilized_window(crop, inset, wind)
    model = None
    if fit_dmd:
        x = build_snapshot_matrix(FrameSequence(stabilized, dt))
        order = admissible_rank(x, r, augment_levels, rtol=min_singular_ratio)
        if order > 0:
            if order < r:
                logger.debug("Inset %s: order reduced from %d to %d", inset.cols, r, order)
            model = compute_dmd(x, order, augment_levels, image_valued=True)
            model = _bounded_model(x, model, augment_levels, inset)

    frame_cols = (crop.col_offset + inset.cols[0], crop.col_offset + inset.cols[1])
    arrival = (frame_cols[0] - crop.disk.col) * dt / wind.speed
    return InsetFit(
        inset=inset, frame_cols=frame_cols, stabilized=stabilized, model=model,
        dt=dt, arrival_time_s=arrival,
    )


def _advected_band(fit: InsetFit, image: np.ndarray, tau: float, wind: WindEstimate, width: int) -> np.ndarray:
    """インセット画像を元フレーム幅の帯に置き、τ 秒分だけ左へ移流させる。"""
    band = np.zeros((fit.inset.height, width))
    band[:, fit.frame_cols[0]:fit.frame_cols[1]] = image
    return _shift_columns(band, -wind.speed * tau / fit.dt)


def _disk_patch(fit: InsetFit, band: np.ndarray, disk: SolarDiskMask) -> np.ndarray:
    r0, r1, c0, c1 = disk.bounds
    patch = np.zeros((r1 - r0, c1 - c0))
    lo = max(r0, fit.inset.rows[0])
    hi = min(r1, fit.inset.rows[1])
    if lo < hi:
        patch[lo - r0:hi - r0] = band[lo - fit.inset.rows[0]:hi - fit.inset.rows[0], c0:c1]
    return patch


def _patch_csi(patch: np.ndarray, disk: SolarDiskMask) -> float:
    r0, r1, c0, c1 = disk.bounds
    return _clamp_csi(1.0 - float(patch[disk.mask[r0:r1, c0:c1]].mean()))


def _last_step(t_max: float, dt: float) -> int:
    return int(math.floor(t_max / dt + _STEP_EPS))


def _passage_steps(fit: InsetFit, wind: WindEstimate, disk: SolarDiskMask, t_max: float) -> range:
    """インセットが円盤に重なるステップ j (τ = j·dt) の範囲。"""
    c0, c1 = fit.frame_cols
    shift_lo = c0 - (disk.col + disk.radius) - 1
    shift_hi = c1 - (disk.col - disk.radius)
    first = max(0, math.ceil(shift_lo / wind.speed - _STEP_EPS))
    last = min(_last_step(t_max, fit.dt), math.floor(shift_hi / wind.speed + _STEP_EPS))
    return range(first, last + 1)


def _score_passage(
    fit: InsetFit, method: ForecastMethod, wind: WindEstimate, disk: SolarDiskMask, t_max: float,
) -> dict[int, np.ndarray]:
    patches = {}
    for j in _passage_steps(fit, wind, disk, t_max):
        tau = j * fit.dt
        band = _advected_band(fit, fit.future_image(method, tau), tau, wind, disk.shape[1])
        patches[j] = _disk_patch(fit, band, disk)
    return patches


def _growth_warnings(fit: InsetFit) -> tuple[str, ...]:
    if fit.model is None:
        return ()
    t_eval = fit.window_end_s + max(fit.arrival_time_s, 0.0)
    growth = float(np.max(fit.model.exponents.real)) * t_eval
    if growth > _GROWTH_WARNING:
        return (f"model extrapolation warning: Re(omega)*t = {growth:.2f}",)
    return ()


def _trajectory(patch_sets: list[dict[int, np.ndarray]], disk: SolarDiskMask, dt: float, t_max: float) -> np.ndarray:
    """各 τ = j·dt における合成 K を返す ((n, 2) 配列: τ, K)。"""
    n = _last_step(t_max, dt) + 1
    k = np.ones(n)
    steps = sorted(set().union(*patch_sets)) if patch_sets else []
    for j in steps:
        layers = [patches[j] for patches in patch_sets if j in patches]
        k[j] = _patch_csi(np.maximum.reduce(layers), disk)
    return np.column_stack([np.arange(n) * dt, k])


def forecast_inset(
    fit: InsetFit, method: ForecastMethod, wind: WindEstimate, disk: SolarDiskMask, t_max: float,
) -> ForecastRecord:
    """1 インセットのみで K を予測する。先端の到達が t_max を超えれば HorizonError。"""
    if fit.arrival_time_s > t_max + _STEP_EPS:
        raise HorizonError(
            f"Inset arrives after {fit.arrival_time_s:.1f} s, beyond t_max = {t_max:.1f} s"
        )
    return _inset_record(fit, method, _score_passage(fit, method, wind, disk, t_max), disk, t_max)


def _inset_record(
    fit: InsetFit, method: ForecastMethod, patches: dict[int, np.ndarray], disk: SolarDiskMask, t_max: float,
) -> ForecastRecord:
    trajectory = _trajectory([patches], disk, fit.dt, t_max)
    best = int(np.argmin(trajectory[:, 1]))
    is_dmd = method == ForecastMethod.DMD
    return ForecastRecord(
        issue_step=fit.inset.issue_step,
        horizon_s=float(trajectory[best, 0]),
        arrival_time_s=fit.arrival_time_s,
        k_value=float(trajectory[best, 1]),
        method=method,
        warnings=_growth_warnings(fit) if is_dmd else (),
        inset=fit.inset,
        trajectory=trajectory,
        spectrum=fit.model.spectrum() if is_dmd and fit.model is not None else None,
    )


def dmd_inset_forecast(
    crop: UpwindCrop,
    inset: Inset,
    wind: WindEstimate,
    r: int = 3,
    augment_levels: int = 1,
    min_singular_ratio: float = 1e-2,
    t_max: float | None = None,
) -> ForecastRecord:
    """インセットに DMD を当てはめ、円盤通過時の K を予測する。"""
    if t_max is None:
        t_max = max_horizon(crop.sequence.width, crop.sequence.dt, wind)
    fit = fit_inset(crop, inset, wind, r, augment_levels, min_singular_ratio)
    return forecast_inset(fit, ForecastMethod.DMD, wind, crop.disk, t_max)


def frozen_advection_forecast(
    crop: UpwindCrop, inset: Inset, wind: WindEstimate, t_max: float | None = None,
) -> ForecastRecord:
    """発行時点のインセットを形を変えずに移流させる基準予測。"""
    if t_max is None:
        t_max = max_horizon(crop.sequence.width, crop.sequence.dt, wind)
    fit = fit_inset(crop, inset, wind, fit_dmd=False)
    return forecast_inset(fit, ForecastMethod.FROZEN, wind, crop.disk, t_max)


def composite_forecast(
    fits: list[InsetFit], method: ForecastMethod, wind: WindEstimate, disk: SolarDiskMask, tau: float,
) -> np.ndarray:
    """全インセットを τ 秒後の位置に置いた合成予測画像 (重なりは最大値)。"""
    canvas = np.zeros(disk.shape)
    for fit in fits:
        r0, r1 = fit.inset.rows
        band = _advected_band(fit, fit.future_image(method, tau), tau, wind, disk.shape[1])
        canvas[r0:r1] = np.maximum(canvas[r0:r1], band)
    return canvas


# ---------------------------------------------------------------------------
# 評価
# ---------------------------------------------------------------------------


def first_sustained_detection(
    records: list[ForecastRecord], threshold: float = 0.95, sustain_fraction: float = 0.9,
) -> int | None:
    """K ≥ threshold となり、以後の予測の sustain_fraction 以上がそれを保つ最初のステップ。"""
    ordered = sorted(records, key=lambda r: r.issue_step)
    clear = np.array([r.k_value >= threshold for r in ordered])
    for i, record in enumerate(ordered):
        if clear[i] and clear[i:].mean() >= sustain_fraction:
            return record.issue_step
    return None


def mean_absolute_error(series: CsiSeries, method: ForecastMethod) -> float | None:
    """予測 K と、対象時刻 (発行 + horizon) の実測 K との平均絶対誤差。"""
    errors = []
    for record in series.forecasts[method]:
        target = record.issue_step + int(round(record.horizon_s / series.dt))
        if target <= series.steps:
            errors.append(abs(record.k_value - series.actual_at(target)))
    return float(np.mean(errors)) if errors else None


# ---------------------------------------------------------------------------
# パイプライン
# ---------------------------------------------------------------------------


def _clear_sky_records(step: int) -> dict[ForecastMethod, ForecastRecord]:
    return {
        method: ForecastRecord(issue_step=step, horizon_s=0.0, arrival_time_s=0.0, k_value=1.0, method=method)
        for method in ForecastMethod
    }


def _forecast_step(
    crop: UpwindCrop, start: int, wind: WindEstimate, t_max: float, config: RunConfig,
) -> tuple[dict[ForecastMethod, ForecastRecord], list[ForecastRecord]]:
    """ウィンドウ [start, start + M_m) から両手法の合成予測を作る。"""
    cfg = config.dmd
    window = crop.sequence.window(start, cfg.window)
    insets = select_insets(
        window, config.insets.energy_quantile, config.insets.margin, config.insets.min_area,
        window_start=start,
    )
    step = start + cfg.window
    disk = crop.disk

    fits: list[InsetFit] = []
    inset_records: list[ForecastRecord] = []
    patch_sets: dict[ForecastMethod, list[dict[int, np.ndarray]]] = {m: [] for m in ForecastMethod}
    warnings: list[str] = []
    for inset in insets:
        try:
            fit = fit_inset(crop, inset, wind, cfg.order, cfg.augment_levels, cfg.min_singular_ratio)
        except (NumericalError, DataError) as exc:
            logger.warning("Step %d: inset %s×%s skipped: %s", step, inset.rows, inset.cols, exc, exc_info=True)
            continue
        if fit.arrival_time_s > t_max + _STEP_EPS:
            logger.info(
                "Step %d: inset at columns %s arrives after t_max (%.1f s > %.1f s); skipped",
                step, fit.frame_cols, fit.arrival_time_s, t_max,
            )
            continue
        scored: dict[ForecastMethod, dict[int, np.ndarray]] = {}
        try:
            for method in ForecastMethod:
                scored[method] = _score_passage(fit, method, wind, disk, t_max)
        except NumericalError as exc:
            logger.warning("Step %d: inset %s×%s skipped: %s", step, inset.rows, inset.cols, exc, exc_info=True)
            continue
        fits.append(fit)
        warnings.extend(_growth_warnings(fit))
        for method, patches in scored.items():
            patch_sets[method].append(patches)
            inset_records.append(_inset_record(fit, method, patches, disk, t_max))

    arrival = min((f.arrival_time_s for f in fits), default=0.0)
    records = {}
    for method in ForecastMethod:
        trajectory = _trajectory(patch_sets[method], disk, crop.sequence.dt, t_max)
        best = int(np.argmin(trajectory[:, 1]))
        horizon = float(trajectory[best, 0])
        emit = config.emit_frames and method == ForecastMethod.DMD
        frame = composite_forecast(fits, method, wind, disk, horizon) if emit else None
        records[method] = ForecastRecord(
            issue_step=step,
            horizon_s=horizon,
            arrival_time_s=arrival,
            k_value=float(trajectory[best, 1]),
            method=method,
            warnings=tuple(dict.fromkeys(warnings)) if method == ForecastMethod.DMD else (),
            trajectory=trajectory,
            frame=frame,
        )
    return records, inset_records


def run_pipeline(seq: FrameSequence, config: RunConfig) -> CsiSeries:
    """前処理から各ステップの予測までを通して実行する。

    ステップ M_m..M の各時点で、直前 M_m フレームのウィンドウから予測を発行する。
    風が観測できない (晴天・静止) 場合は回転を省き、全予測を K = 1 とする。
    """
    cfg = config.dmd
    if len(seq) < cfg.window:
        raise DataError(f"Sequence has {len(seq)} frames; the forecast window needs {cfg.window}")
    logger.info("Pipeline start: %d frames of %dx%d, dt=%.3g s", len(seq), seq.height, seq.width, seq.dt)

    disk = locate_solar_disk(seq, config.disk.threshold_quantile, config.disk.edge_fraction)
    cleaned = remove_first_mode_disk(seq, disk)
    try:
        wind = estimate_uniform_wind(
            suppress_static_background(cleaned),
            config.flow.alpha, config.flow.iterations, config.flow.tolerance, config.flow.refinements,
        )
    except DataError as exc:
        logger.warning("%s; forecasting clear sky", exc)
        wind = None

    forecasts: dict[ForecastMethod, list[ForecastRecord]] = {m: [] for m in ForecastMethod}
    inset_forecasts: list[ForecastRecord] = []
    steps = range(cfg.window, len(seq) + 1)

    if wind is None:
        actual = np.array([csi_of_frame(f, disk) for f in cleaned.frames])
        for step in steps:
            for method, record in _clear_sky_records(step).items():
                forecasts[method].append(record)
        return CsiSeries(
            dt=seq.dt, actual=actual, disk=disk, wind=None, t_max_s=None, window=cfg.window,
            forecasts=forecasts,
        )

    rotated, rotated_disk, rotated_wind = rotate_to_wind_frame(cleaned, wind, disk)
    footprint = rotation_footprint(seq.shape, wind)
    crop = crop_upwind(rotated, rotated_disk, config.crop_margin, valid=footprint)
    crop = replace(
        crop,
        sequence=remove_glare(
            crop.sequence, config.glare.smoothing_radius, config.glare.per_frame, valid=crop.valid,
        ),
    )
    t_max = max_horizon(crop.sequence.width, seq.dt, rotated_wind)
    logger.info("Upwind crop starts at column %d; t_max = %.1f s", crop.col_offset, t_max)
    actual = np.array([csi_of_frame(f, rotated_disk) for f in rotated.frames])

    for step in steps:
        records, inset_records = _forecast_step(crop, step - cfg.window, rotated_wind, t_max, config)
        for method, record in records.items():
            forecasts[method].append(record)
        inset_forecasts.extend(inset_records)
        logger.debug(
            "Step %d: K_dmd=%.3f K_frozen=%.3f",
            step, records[ForecastMethod.DMD].k_value, records[ForecastMethod.FROZEN].k_value,
        )

    logger.info("Pipeline done: %d forecasts per method", len(forecasts[ForecastMethod.DMD]))
    return CsiSeries(
        dt=seq.dt, actual=actual, disk=rotated_disk, wind=wind, t_max_s=t_max, window=cfg.window,
        forecasts=forecasts, inset_forecasts=inset_forecasts,
    )
