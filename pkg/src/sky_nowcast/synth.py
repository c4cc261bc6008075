"""解析解つきの合成シーケンス生成。

ガウス型の雲塊を一定速度で移流させ、振幅を時間則で変化させる。
真の晴天指数 K(t) は打ち切りなしのガウス場から閉形式で求める。
"""

from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel, Field

from sky_nowcast.decomposition import SnapshotMatrix
from sky_nowcast.models import AmplitudeLaw, BlobSpec, FrameSequence, SynthScenario
from sky_nowcast.motion import WindEstimate
from sky_nowcast.preprocessing import SolarDiskMask

logger = logging.getLogger(__name__)

# 描画時のガウス打ち切り半径 (σ の倍数)
_TRUNCATION_SIGMAS = 4.0

# 共役対とみなす指数の差
_CONJUGATE_TOL = 1e-12


# ---------------------------------------------------------------------------
# 真値
# ---------------------------------------------------------------------------


class BlobTrack(BaseModel):
    """雲塊 1 つの各ステップの位置と振幅。"""

    rows: list[float]
    cols: list[float]
    amplitudes: list[float]


class GroundTruth(BaseModel):
    """合成シーケンスの真値 (JSON 出力用)。"""

    dt: float
    steps: int
    wind_speed: float = Field(description="px/step")
    wind_angle: float | None = Field(description="rad (雲塊がなければ None)")
    disk_center: tuple[float, float]
    disk_radius: float
    csi: list[float] = Field(description="ステップ 1..M の真の K")
    blobs: list[BlobTrack]

    @property
    def wind(self) -> WindEstimate | None:
        if self.wind_angle is None:
            return None
        return WindEstimate(speed=self.wind_speed, angle=self.wind_angle)


def amplitude_at(blob: BlobSpec, t: float) -> float:
    """時刻 t (秒) の雲塊の振幅。"""
    if blob.law == AmplitudeLaw.CONSTANT:
        return blob.amplitude
    if blob.law == AmplitudeLaw.EXPONENTIAL:
        return blob.amplitude * float(np.exp(-blob.rate * t))
    if 0.0 <= t <= blob.period:
        return blob.amplitude * float(np.sin(np.pi * t / blob.period))
    return 0.0


def position_at(blob: BlobSpec, step: float) -> tuple[float, float]:
    """ステップ step (0 始まり, 実数可) の雲塊中心 (row, col)。"""
    return blob.center_row + blob.velocity_y * step, blob.center_col + blob.velocity_x * step


def _blob_field(
    blob: BlobSpec, step: float, dt: float, rows: np.ndarray, cols: np.ndarray, truncate: bool,
) -> np.ndarray:
    row, col = position_at(blob, step)
    amp = amplitude_at(blob, step * dt)
    d2 = (rows - row) ** 2 + (cols - col) ** 2
    value = amp * np.exp(-d2 / (2.0 * blob.sigma ** 2))
    if truncate:
        value = np.where(d2 <= (_TRUNCATION_SIGMAS * blob.sigma) ** 2, value, 0.0)
    return value


def render_cloud_field(scenario: SynthScenario, step: int) -> np.ndarray:
    """ステップ step (0 始まり) の雲量場 (雲塊のみ, 4σ 打ち切り)。"""
    rows, cols = np.ogrid[: scenario.height, : scenario.width]
    field_ = np.zeros((scenario.height, scenario.width))
    for blob in scenario.blobs:
        field_ += _blob_field(blob, step, scenario.dt, rows, cols, truncate=True)
    return np.clip(field_, 0.0, 1.0)


def scenario_disk(scenario: SynthScenario) -> SolarDiskMask:
    d = scenario.disk
    return SolarDiskMask(center=(d.center_row, d.center_col), radius=d.radius,
                         shape=(scenario.height, scenario.width))


def true_csi(scenario: SynthScenario, t: float) -> float:
    """時刻 t (秒) の真の K。円盤画素で打ち切りなしの雲量を平均する。"""
    disk = scenario_disk(scenario)
    rows, cols = np.nonzero(disk.mask)
    cloud = np.zeros(rows.shape)
    for blob in scenario.blobs:
        cloud += _blob_field(blob, t / scenario.dt, scenario.dt, rows, cols, truncate=False)
    return float(np.clip(1.0 - np.minimum(cloud, 1.0).mean(), 0.0, 1.0))


def _base_image(scenario: SynthScenario) -> np.ndarray:
    cols = np.arange(scenario.width)
    glare = scenario.glare_amplitude * (1.0 - cols / scenario.width)
    image = np.full((scenario.height, scenario.width), scenario.background) + glare[np.newaxis, :]
    image[scenario_disk(scenario).mask] = scenario.disk.brightness
    return image


def _truth_wind(scenario: SynthScenario) -> WindEstimate | None:
    if not scenario.blobs:
        return None
    vx = float(np.mean([b.velocity_x for b in scenario.blobs]))
    vy = float(np.mean([b.velocity_y for b in scenario.blobs]))
    return WindEstimate.from_velocity(vx, vy)


def generate(scenario: SynthScenario, seed: int = 0) -> tuple[FrameSequence, GroundTruth]:
    """シナリオからフレーム列と真値を生成する。同じ seed なら同一の出力。"""
    rng = np.random.default_rng(seed)
    base = _base_image(scenario)
    frames = np.empty((scenario.steps, scenario.height, scenario.width))
    for k in range(scenario.steps):
        frame = base + render_cloud_field(scenario, k)
        if scenario.noise > 0:
            frame = frame + rng.uniform(-scenario.noise, scenario.noise, size=frame.shape)
        frames[k] = frame
    seq = FrameSequence.clipped(frames, scenario.dt)

    wind = _truth_wind(scenario)
    tracks = []
    for blob in scenario.blobs:
        positions = [position_at(blob, k) for k in range(scenario.steps)]
        tracks.append(BlobTrack(
            rows=[p[0] for p in positions],
            cols=[p[1] for p in positions],
            amplitudes=[amplitude_at(blob, k * scenario.dt) for k in range(scenario.steps)],
        ))
    truth = GroundTruth(
        dt=scenario.dt,
        steps=scenario.steps,
        wind_speed=wind.speed if wind else 0.0,
        wind_angle=wind.angle if wind else None,
        disk_center=(scenario.disk.center_row, scenario.disk.center_col),
        disk_radius=scenario.disk.radius,
        csi=[true_csi(scenario, k * scenario.dt) for k in range(scenario.steps)],
        blobs=tracks,
    )
    logger.info("Generated %d synthetic frames with %d blobs", scenario.steps, len(scenario.blobs))
    return seq, truth


# ---------------------------------------------------------------------------
# 線形モードの重ね合わせ
# ---------------------------------------------------------------------------


def generate_linear_modes(
    patterns: np.ndarray,
    exponents: Sequence[complex],
    coefficients: Sequence[complex],
    steps: int,
    dt: float,
) -> SnapshotMatrix:
    """既知の指数 ω_i を持つ線形モードの和 x(t) = Σ Re(c_i e^{ω_i t} p_i) を生成する。

    複素共役対 (ω, ω̄) は 2 つのパターン (p, q) を使い、Re(c e^{ωt} (p − i q)) で
    1 つの実数項として扱う (Im ω > 0 側が p)。対の係数は c̄ と c でなければならない
    (Im ω < 0 側の係数は Im ω > 0 側の共役として検査のみ行い、値には使わない)。
    """
    p = np.asarray(patterns, dtype=float)
    if p.ndim == 1:
        p = p[:, np.newaxis]
    omegas = np.asarray(exponents, dtype=complex)
    coefs = np.asarray(coefficients, dtype=complex)
    count = p.shape[1]
    if omegas.shape != (count,) or coefs.shape != (count,):
        raise ValueError(
            f"Need one exponent and one coefficient per pattern ({count}), "
            f"got {omegas.shape[0]} and {coefs.shape[0]}"
        )
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if steps < 2 * count + 2:
        raise ValueError(f"steps ({steps}) must be at least 2·modes + 2 = {2 * count + 2}")
    if np.linalg.matrix_rank(p) < count:
        raise ValueError("Mode patterns are linearly dependent")

    t = np.arange(steps) * dt
    data = np.zeros((p.shape[0], steps))
    paired: set[int] = set()
    for i in range(count):
        if i in paired:
            continue
        omega = omegas[i]
        if omega.imag == 0:
            data += np.outer(p[:, i], (coefs[i] * np.exp(omega * t)).real)
            continue
        partner = next(
            (j for j in range(count)
             if j != i and j not in paired and abs(omegas[j] - np.conj(omega)) < _CONJUGATE_TOL),
            None,
        )
        if partner is None:
            raise ValueError(f"Complex exponent {omega} has no conjugate partner")
        upper, lower = (i, partner) if omega.imag > 0 else (partner, i)
        if abs(coefs[lower] - np.conj(coefs[upper])) > _CONJUGATE_TOL * max(1.0, abs(coefs[upper])):
            raise ValueError(
                f"Coefficients of conjugate pair {omegas[upper]} must be conjugate, "
                f"got {coefs[upper]} and {coefs[lower]}"
            )
        paired.update((i, partner))
        vector = p[:, upper] - 1j * p[:, lower]
        data += np.outer(vector, coefs[upper] * np.exp(omegas[upper] * t)).real
    return SnapshotMatrix.from_array(data, dt)
