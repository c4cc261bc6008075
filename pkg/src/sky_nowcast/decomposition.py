"""スナップショット行列・POD・DMD (シフトスタック拡張とランク打ち切りを含む)。

画像処理から独立した純粋な数値演算のみを扱う。全ての戻り値は生成後に不変。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from sky_nowcast.errors import DataError, NumericalError, RankError
from sky_nowcast.models import FrameSequence

logger = logging.getLogger(__name__)

# Σ_r の逆数を掛けるときの打ち切り閾値 (σ₁ に対する比)
SINGULAR_GUARD = 1e-12

# 実部読み出し時に虚部残差をログに出す閾値
_IMAG_RESIDUE_TOL = 1e-8


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# スナップショット行列
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SnapshotMatrix:
    """N×M のスナップショット行列 X。列 k (0 始まり) は時刻 k·dt の状態。

    画像由来の場合 N = (augment_levels + 1)·height·width。
    """

    data: np.ndarray = field(repr=False)
    dt: float
    height: int
    width: int
    augment_levels: int = 0

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DataError(f"Snapshot data must be a non-empty 2-D array, got shape {data.shape}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if data.shape[0] != (self.augment_levels + 1) * self.height * self.width:
            raise DataError(
                f"Row count {data.shape[0]} does not match "
                f"({self.augment_levels}+1)·{self.height}·{self.width}"
            )
        object.__setattr__(self, "data", _freeze(data))

    @classmethod
    def from_array(cls, data: np.ndarray, dt: float) -> SnapshotMatrix:
        """画像でない一般の N×M データから生成する (height=N, width=1)。"""
        data = np.asarray(data, dtype=float)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        return cls(data=data, dt=dt, height=data.shape[0], width=1)

    @property
    def state_size(self) -> int:
        """物理状態の次元 (拡張前の N)。"""
        return self.height * self.width

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]


def build_snapshot_matrix(frames: FrameSequence) -> SnapshotMatrix:
    """各フレームを列優先 (画像の列を縦に連結) で平坦化し、列として並べる。"""
    m, h, w = frames.frames.shape
    # (M, H, W) → 列優先平坦化 = (M, W, H) を C 順で reshape
    data = frames.frames.transpose(0, 2, 1).reshape(m, h * w).T
    return SnapshotMatrix(data=data, dt=frames.dt, height=h, width=w)


def unflatten(column: np.ndarray, height: int, width: int) -> np.ndarray:
    """build_snapshot_matrix の逆変換 (1 列 → H×W 画像)。"""
    return np.reshape(column[: height * width], (height, width), order="F")


# ---------------------------------------------------------------------------
# POD
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PODResult:
    """X = U·diag(σ)·Vᵀ の経済型 SVD。各項 σ_k u_k v_kᵀ が1つの POD モード。"""

    spatial_modes: np.ndarray = field(repr=False)  # U (N×p)
    singular_values: np.ndarray  # σ (p,)
    temporal_modes: np.ndarray = field(repr=False)  # V (M×p)

    def reconstruct(self, rank: int | None = None) -> np.ndarray:
        """先頭 rank 個のモードで X を再構成する。None なら全モード。"""
        k = len(self.singular_values) if rank is None else rank
        return (self.spatial_modes[:, :k] * self.singular_values[:k]) @ self.temporal_modes[:, :k].T

    def energy_fraction(self) -> np.ndarray:
        """累積エネルギー比 Σ_{k≤i} σ_k² / Σ σ_k²。"""
        energy = self.singular_values ** 2
        total = energy.sum()
        if total == 0:
            return np.zeros_like(energy)
        return np.cumsum(energy) / total

    def first_mode_image(self, height: int, width: int) -> np.ndarray:
        """第1モードの時間平均成分 σ₁·mean(v₁)·u₁ を H×W 画像として返す。

        u₁ と v₁ の符号は同時に反転するため、積は符号に依存しない。
        """
        weight = self.singular_values[0] * float(np.mean(self.temporal_modes[:, 0]))
        return unflatten(self.spatial_modes[:, 0] * weight, height, width)

    def temporal_spectrum(self, dt: float, modes: int | None = None) -> pd.DataFrame:
        """先頭 modes 個の時間モード v_k の振幅スペクトル |FFT(v_k)|。

        index は周波数 [Hz] (0 から Nyquist まで)、列は mode_1, mode_2, ...。
        """
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        k = self.temporal_modes.shape[1] if modes is None else modes
        if not 1 <= k <= self.temporal_modes.shape[1]:
            raise ValueError(f"modes must be in [1, {self.temporal_modes.shape[1]}], got {k}")
        samples = self.temporal_modes.shape[0]
        amplitude = np.abs(np.fft.rfft(self.temporal_modes[:, :k], axis=0))
        return pd.DataFrame(
            amplitude,
            index=pd.Index(np.fft.rfftfreq(samples, d=dt), name="frequency_hz"),
            columns=[f"mode_{i + 1}" for i in range(k)],
        )


def compute_pod(x: SnapshotMatrix) -> PODResult:
    """スナップショット行列の POD (経済型 SVD) を計算する。"""
    if not np.isfinite(x.data).all():
        raise NumericalError("Snapshot matrix contains non-finite entries")
    u, s, vh = np.linalg.svd(x.data, full_matrices=False)
    return PODResult(
        spatial_modes=_freeze(u),
        singular_values=_freeze(s),
        temporal_modes=_freeze(vh.T),
    )


# ---------------------------------------------------------------------------
# 状態ベクトル拡張
# ---------------------------------------------------------------------------


def augment_snapshots(x: SnapshotMatrix, levels: int) -> SnapshotMatrix:
    """時間シフトしたコピーを縦に積む (シフトスタック)。

    levels = L のとき出力は (L+1)·N 行 × (M−L) 列で、
    列 k は (x_k; x_{k+1}; …; x_{k+L})。levels = 0 は入力をそのまま返す。
    """
    if levels < 0:
        raise ValueError(f"levels must be non-negative, got {levels}")
    if levels == 0:
        return x
    m = x.n_cols
    if m <= levels + 1:
        raise DataError(f"Need more than {levels + 1} columns for {levels}-level augmentation, got {m}")
    stacked = np.vstack([x.data[:, i:m - levels + i] for i in range(levels + 1)])
    return SnapshotMatrix(
        data=stacked,
        dt=x.dt,
        height=x.height,
        width=x.width,
        augment_levels=x.augment_levels + levels,
    )


# ---------------------------------------------------------------------------
# DMD
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DMDModel:
    """低次元 DMD モデル。x(t) ≈ Re(Φ·diag(e^{ω t})·b)。

    modes は拡張時も物理ブロック (先頭 N 行) のみを保持する。
    全演算子 A の固有値は計算しない。
    """

    order: int
    modes: np.ndarray = field(repr=False)  # Φ (N×r)
    eigenvalues: np.ndarray  # λ (離散時間)
    exponents: np.ndarray  # ω = log(λ)/dt (連続時間, 主値)
    amplitudes: np.ndarray  # b = Φ⁺x₀
    dt: float
    augmented: bool
    height: int
    width: int
    image_valued: bool = False

    @property
    def state_size(self) -> int:
        return self.modes.shape[0]

    @property
    def mode_weights(self) -> np.ndarray:
        """各モードの寄与の大きさ ‖φ_i‖·|b_i|。"""
        return np.linalg.norm(self.modes, axis=0) * np.abs(self.amplitudes)

    def spectrum(self) -> pd.DataFrame:
        """モードごとの固有値 (極形式)・指数・周波数・振幅の一覧。"""
        lam = self.eigenvalues
        return pd.DataFrame({
            "lambda_abs": np.abs(lam),
            "lambda_angle": np.angle(lam),
            "omega_real": self.exponents.real,
            "omega_imag": self.exponents.imag,
            "frequency_hz": self.exponents.imag / (2 * np.pi),
            "amplitude_abs": np.abs(self.amplitudes),
        })


def _split_pairs(x: SnapshotMatrix, augment_levels: int) -> tuple[SnapshotMatrix, np.ndarray, np.ndarray]:
    xa = augment_snapshots(x, augment_levels)
    if xa.n_cols < 2:
        raise DataError(f"DMD needs at least 2 snapshots after augmentation, got {xa.n_cols}")
    return xa, xa.data[:, :-1], xa.data[:, 1:]


def admissible_rank(
    x: SnapshotMatrix, r: int, augment_levels: int = 1, rtol: float = SINGULAR_GUARD,
) -> int:
    """r 以下で、X₁ の特異値 σ_i > rtol·σ₁ を満たす最大の次数を返す (0 ならデータが零)。"""
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    _, x1, _ = _split_pairs(x, augment_levels)
    s = np.linalg.svd(x1, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(min(r, np.count_nonzero(s > s[0] * rtol)))


def compute_dmd(
    x: SnapshotMatrix, r: int, augment_levels: int = 1, *, image_valued: bool = False,
) -> DMDModel:
    """r 次の (拡張) DMD を計算する。

    X₁ = 列 1..M−1, X₂ = 列 2..M として X₁ の SVD を r で打ち切り、
    Ã_r = U_rᵀ X₂ V_r Σ_r⁻¹ を固有分解する。
    Φ = X₂ V_r Σ_r⁻¹ W_r, ω = log(λ)/Δt, b = Φ⁺ x₀。
    """
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    if not np.isfinite(x.data).all():
        raise NumericalError("Snapshot matrix contains non-finite entries")
    xa, x1, x2 = _split_pairs(x, augment_levels)
    limit = min(x1.shape[0], x1.shape[1])
    if r > limit:
        raise RankError(f"Order r={r} exceeds available rank min(rows, cols-1)={limit}")

    u, s, vh = np.linalg.svd(x1, full_matrices=False)
    if s[0] == 0 or s[r - 1] <= s[0] * SINGULAR_GUARD:
        raise RankError(
            f"σ_{r} = {s[r - 1]:.3e} is below the truncation guard "
            f"{SINGULAR_GUARD:g}·σ₁ (σ₁ = {s[0]:.3e})"
        )
    ur = u[:, :r]
    sr_inv = 1.0 / s[:r]
    vr = vh[:r].conj().T

    x2_v_sinv = (x2 @ vr) * sr_inv
    a_tilde = ur.conj().T @ x2_v_sinv
    eigenvalues, w = np.linalg.eig(a_tilde)
    if np.any(eigenvalues == 0):
        raise NumericalError("DMD produced a zero eigenvalue; log(λ) is undefined")

    phi = x2_v_sinv @ w
    amplitudes = np.linalg.pinv(phi) @ xa.data[:, 0]
    exponents = np.log(eigenvalues.astype(complex)) / x.dt

    n = x.n_rows
    return DMDModel(
        order=r,
        modes=_freeze(phi[:n]),
        eigenvalues=_freeze(eigenvalues.astype(complex)),
        exponents=_freeze(exponents),
        amplitudes=_freeze(amplitudes),
        dt=x.dt,
        augmented=augment_levels > 0,
        height=x.height,
        width=x.width,
        image_valued=image_valued,
    )


def _dynamics(model: DMDModel, times: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        growth = np.exp(np.outer(model.exponents, times))
    if not np.isfinite(growth).all():
        raise NumericalError(
            f"exp(ω·t) overflowed for t up to {float(np.max(times)):.3g} s; "
            "horizon too long for this model"
        )
    return growth


def _readout(model: DMDModel, states: np.ndarray) -> np.ndarray:
    residue = float(np.max(np.abs(states.imag))) if states.size else 0.0
    if residue > _IMAG_RESIDUE_TOL:
        logger.debug("DMD readout imaginary residue %.3e", residue)
    real = states.real
    if model.image_valued:
        real = np.clip(real, 0.0, 1.0)
    return real


def evaluate_dmd(model: DMDModel, t: float) -> np.ndarray:
    """時刻 t (秒, t=0 が先頭スナップショット) の状態ベクトル Re(Φ e^{Ωt} b) を返す。"""
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    growth = _dynamics(model, np.array([float(t)]))[:, 0]
    return _readout(model, model.modes @ (growth * model.amplitudes))


def reconstruct_series(model: DMDModel, steps: int) -> SnapshotMatrix:
    """t = 0, Δt, …, (steps−1)·Δt で評価した列からなる行列を返す。"""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    times = np.arange(steps) * model.dt
    growth = _dynamics(model, times)
    states = _readout(model, model.modes @ (model.amplitudes[:, np.newaxis] * growth))
    if model.state_size != model.height * model.width:
        return SnapshotMatrix.from_array(states, model.dt)
    return SnapshotMatrix(data=states, dt=model.dt, height=model.height, width=model.width)


def reconstruction_error(model: DMDModel, x: SnapshotMatrix) -> float:
    """x の全列に対する再構成の相対フロベニウス誤差。"""
    if x.n_rows != model.state_size:
        raise DataError(f"State size mismatch: model {model.state_size}, data {x.n_rows}")
    recon = reconstruct_series(model, x.n_cols).data
    norm = np.linalg.norm(x.data)
    if norm == 0:
        return float(np.linalg.norm(recon))
    return float(np.linalg.norm(x.data - recon) / norm)
