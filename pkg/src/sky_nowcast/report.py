"""予測結果の集計と出力 (CSV / JSON / PNG / HTML)。"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots
from pydantic import BaseModel, Field

from sky_nowcast import __version__
from sky_nowcast.forecast import (
    CsiSeries,
    ForecastMethod,
    first_sustained_detection,
    mean_absolute_error,
)
from sky_nowcast.models import ReportConfig
from sky_nowcast.sources.images import write_image

logger = logging.getLogger(__name__)

FORECAST_CSV = "forecast.csv"
SUMMARY_JSON = "summary.json"
SPECTRA_CSV = "spectra.csv"
TRAJECTORIES_CSV = "trajectories.csv"
FIGURE_HTML = "forecast.html"
FRAMES_DIR = "frames"

FORECAST_COLUMNS = ["step", "time_s", "actual_k", "dmd_k", "frozen_k", "horizon_s", "warnings"]
_SPECTRUM_KEYS = ["step", "row0", "row1", "col0", "col1", "mode"]
_TRAJECTORY_COLUMNS = ["step", "method", "horizon_s", "k"]

# CSV の浮動小数は小数 6 桁に固定 (出力を決定的にする)
_FLOAT_FORMAT = "%.6f"


# ---------------------------------------------------------------------------
# サマリー
# ---------------------------------------------------------------------------


class DiskSummary(BaseModel):
    center_row: float
    center_col: float
    radius: float


class WindSummary(BaseModel):
    speed_px_per_step: float
    speed_px_per_s: float
    angle_rad: float


class MethodSummary(BaseModel):
    """手法ごとの評価指標。"""

    forecasts: int
    first_clear_step: int | None = Field(description="晴天予測が継続し始める最初のステップ")
    first_clear_time_s: float | None
    mean_abs_error: float | None


class ForecastSummary(BaseModel):
    """summary.json の内容。"""

    version: str
    steps: int
    dt: float
    window: int
    t_max_s: float | None
    disk: DiskSummary
    wind: WindSummary | None
    dissolution_threshold: float
    methods: dict[str, MethodSummary]
    detection_lead_s: float | None = Field(description="DMD が凍結移流より早く晴天を予測した時間")


@dataclass
class ForecastReport:
    rows: pd.DataFrame
    summary: ForecastSummary
    spectra: pd.DataFrame
    trajectories: pd.DataFrame


# ---------------------------------------------------------------------------
# 集計
# ---------------------------------------------------------------------------


def forecast_rows(series: CsiSeries) -> pd.DataFrame:
    """ステップごとの実測 K と両手法の予測 K の表。"""
    dmd = series.forecasts[ForecastMethod.DMD]
    frozen = series.forecasts[ForecastMethod.FROZEN]
    steps = [r.issue_step for r in dmd]
    return pd.DataFrame({
        "step": steps,
        "time_s": [(s - 1) * series.dt for s in steps],
        "actual_k": [series.actual_at(s) for s in steps],
        "dmd_k": [r.k_value for r in dmd],
        "frozen_k": [r.k_value for r in frozen],
        "horizon_s": [r.horizon_s for r in dmd],
        "warnings": [";".join(r.warnings) for r in dmd],
    }, columns=FORECAST_COLUMNS)


def spectra_frame(series: CsiSeries) -> pd.DataFrame:
    """インセットごとの DMD スペクトルを縦に連結した表。"""
    frames = []
    for record in series.inset_forecasts:
        if record.method != ForecastMethod.DMD or record.spectrum is None or record.inset is None:
            continue
        df = record.spectrum.copy()
        df.insert(0, "mode", np.arange(len(df)))
        inset = record.inset
        for i, (key, value) in enumerate(zip(
            _SPECTRUM_KEYS[:5],
            [record.issue_step, inset.rows[0], inset.rows[1], inset.cols[0], inset.cols[1]],
        )):
            df.insert(i, key, value)
        frames.append(df)
    if not frames:
        return pd.DataFrame(columns=_SPECTRUM_KEYS)
    return pd.concat(frames, ignore_index=True)


def trajectory_frame(series: CsiSeries, steps: list[int]) -> pd.DataFrame:
    """指定ステップの合成予測軌跡 K(τ) の表。"""
    wanted = set(steps)
    frames = []
    for method in ForecastMethod:
        for record in series.forecasts[method]:
            if record.issue_step not in wanted or record.trajectory is None:
                continue
            frames.append(pd.DataFrame({
                "step": record.issue_step,
                "method": method.value,
                "horizon_s": record.trajectory[:, 0],
                "k": record.trajectory[:, 1],
            }))
    if not frames:
        return pd.DataFrame(columns=_TRAJECTORY_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def _method_summary(series: CsiSeries, method: ForecastMethod, config: ReportConfig) -> MethodSummary:
    records = series.forecasts[method]
    step = first_sustained_detection(records, config.dissolution_threshold, config.sustain_fraction)
    return MethodSummary(
        forecasts=len(records),
        first_clear_step=step,
        first_clear_time_s=None if step is None else (step - 1) * series.dt,
        mean_abs_error=mean_absolute_error(series, method),
    )


def build_report(series: CsiSeries, config: ReportConfig) -> ForecastReport:
    methods = {m.value: _method_summary(series, m, config) for m in ForecastMethod}
    dmd_time = methods[ForecastMethod.DMD.value].first_clear_time_s
    frozen_time = methods[ForecastMethod.FROZEN.value].first_clear_time_s
    lead = None if dmd_time is None or frozen_time is None else frozen_time - dmd_time

    wind = None
    if series.wind is not None:
        wind = WindSummary(
            speed_px_per_step=series.wind.speed,
            speed_px_per_s=series.wind.speed / series.dt,
            angle_rad=series.wind.angle,
        )
    summary = ForecastSummary(
        version=__version__,
        steps=series.steps,
        dt=series.dt,
        window=series.window,
        t_max_s=series.t_max_s,
        disk=DiskSummary(center_row=series.disk.row, center_col=series.disk.col, radius=series.disk.radius),
        wind=wind,
        dissolution_threshold=config.dissolution_threshold,
        methods=methods,
        detection_lead_s=lead,
    )
    return ForecastReport(
        rows=forecast_rows(series),
        summary=summary,
        spectra=spectra_frame(series),
        trajectories=trajectory_frame(series, config.trace_steps),
    )


# ---------------------------------------------------------------------------
# 図
# ---------------------------------------------------------------------------


def csi_figure(rows: pd.DataFrame) -> go.Figure:
    """実測 K と両手法の予測 K、および予測時間の推移。"""
    fig = make_subplots(
        rows=2, cols=1, shared_xaxes=True,
        vertical_spacing=0.05,
        row_heights=[0.7, 0.3],
        subplot_titles=("", "予測時間 (s)"),
    )
    for column, name, color, dash in [
        ("actual_k", "実測 K", "#111827", "solid"),
        ("dmd_k", "DMD 予測", "#2563eb", "solid"),
        ("frozen_k", "凍結移流予測", "#dc2626", "dash"),
    ]:
        fig.add_trace(
            go.Scatter(
                x=rows["time_s"], y=rows[column], name=name,
                line=dict(color=color, width=1.5, dash=dash),
                hovertemplate="%{x:.0f} s<br>K: %{y:.3f}<extra></extra>",
            ),
            row=1, col=1,
        )
    fig.add_trace(
        go.Scatter(
            x=rows["time_s"], y=rows["horizon_s"], name="予測時間", fill="tozeroy",
            line=dict(color="#10b981", width=1), fillcolor="rgba(16,185,129,0.2)",
            hovertemplate="%{x:.0f} s<br>τ: %{y:.0f} s<extra></extra>",
        ),
        row=2, col=1,
    )
    fig.update_layout(
        height=500, margin=dict(l=0, r=0, t=30, b=0),
        legend=dict(orientation="h", yanchor="bottom", y=1.02, xanchor="right", x=1),
        hovermode="x",
    )
    fig.update_yaxes(title_text="晴天指数 K", range=[0, 1.05], row=1, col=1)
    fig.update_yaxes(title_text="τ (s)", row=2, col=1)
    fig.update_xaxes(title_text="発行時刻 (s)", row=2, col=1)
    return fig


# ---------------------------------------------------------------------------
# 入出力
# ---------------------------------------------------------------------------


def frame_filename(step: int) -> str:
    """合成予測画像のファイル名。"""
    return f"forecast_{step:05d}.png"


def _write_csv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, float_format=_FLOAT_FORMAT, lineterminator="\n")


def write_report(
    report: ForecastReport, series: CsiSeries, out_dir: Path, emit_frames: bool = False,
) -> list[Path]:
    """出力ディレクトリに全ファイルを書き出し、そのパスを返す。"""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    path = out_dir / FORECAST_CSV
    _write_csv(report.rows, path)
    written.append(path)

    path = out_dir / SUMMARY_JSON
    path.write_text(report.summary.model_dump_json(indent=2) + "\n", encoding="utf-8")
    written.append(path)

    path = out_dir / SPECTRA_CSV
    _write_csv(report.spectra, path)
    written.append(path)

    if not report.trajectories.empty:
        path = out_dir / TRAJECTORIES_CSV
        _write_csv(report.trajectories, path)
        written.append(path)

    path = out_dir / FIGURE_HTML
    csi_figure(report.rows).write_html(path, include_plotlyjs="cdn", div_id="csi-forecast")
    written.append(path)

    if emit_frames:
        blank = np.zeros(series.disk.shape)
        for record in series.forecasts[ForecastMethod.DMD]:
            path = out_dir / FRAMES_DIR / frame_filename(record.issue_step)
            write_image(record.frame if record.frame is not None else blank, path)
            written.append(path)

    logger.info("Wrote %d output files to %s", len(written), out_dir)
    return written


def read_report(out_dir: Path) -> ForecastReport:
    """write_report の出力を読み戻す。"""
    rows = pd.read_csv(out_dir / FORECAST_CSV, keep_default_na=False)
    summary = ForecastSummary.model_validate_json((out_dir / SUMMARY_JSON).read_text(encoding="utf-8"))
    spectra_path = out_dir / SPECTRA_CSV
    spectra = pd.read_csv(spectra_path) if spectra_path.exists() else pd.DataFrame(columns=_SPECTRUM_KEYS)
    traj_path = out_dir / TRAJECTORIES_CSV
    trajectories = pd.read_csv(traj_path) if traj_path.exists() else pd.DataFrame(columns=_TRAJECTORY_COLUMNS)
    return ForecastReport(rows=rows, summary=summary, spectra=spectra, trajectories=trajectories)
