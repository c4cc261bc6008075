"""Sky Nowcast - 予測結果ビューア。"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd
import plotly.graph_objects as go
import streamlit as st

from sky_nowcast.errors import DataError
from sky_nowcast.forecast import ForecastMethod
from sky_nowcast.report import (
    FRAMES_DIR,
    SUMMARY_JSON,
    ForecastReport,
    ForecastSummary,
    csi_figure,
    frame_filename,
    read_report,
)
from sky_nowcast.sources.images import read_image

logger = logging.getLogger(__name__)


def main() -> None:
    st.set_page_config(page_title="Sky Nowcast", page_icon="⛅", layout="wide")
    st.markdown(
        "<style>"
        "header[data-testid='stHeader'] {display: none;}"
        ".block-container {padding-top: 1rem;}"
        "</style>",
        unsafe_allow_html=True,
    )
    st.markdown(
        "#### ⛅ Sky Nowcast <small style='color:#888;font-weight:normal;'>DMD による晴天指数予測</small>",
        unsafe_allow_html=True,
    )

    out_dir = Path(st.sidebar.text_input("出力ディレクトリ", value="output"))
    if not (out_dir / SUMMARY_JSON).exists():
        st.info("`sky-nowcast forecast --config ...` の出力ディレクトリを指定してください。")
        return

    report = _load_report(str(out_dir), (out_dir / SUMMARY_JSON).stat().st_mtime)
    _render_summary(report.summary)
    st.plotly_chart(csi_figure(report.rows), use_container_width=True)
    _render_frames(out_dir, report.rows)
    _render_spectra(report.spectra)


@st.cache_data(show_spinner=False)
def _load_report(out_dir: str, mtime: float) -> ForecastReport:
    """出力を読み込む。mtime はキャッシュの無効化用。"""
    return read_report(Path(out_dir))


def _render_summary(summary: ForecastSummary) -> None:
    dmd = summary.methods[ForecastMethod.DMD.value]
    frozen = summary.methods[ForecastMethod.FROZEN.value]
    col1, col2, col3, col4, col5 = st.columns(5)
    with col1:
        speed = f"{summary.wind.speed_px_per_s:.2f} px/s" if summary.wind else "観測不能"
        st.metric("雲の移動速度", speed)
    with col2:
        st.metric("最大予測時間", f"{summary.t_max_s:.0f} s" if summary.t_max_s else "-")
    with col3:
        st.metric("DMD 晴天予測", _format_time(dmd.first_clear_time_s))
    with col4:
        st.metric("凍結移流 晴天予測", _format_time(frozen.first_clear_time_s))
    with col5:
        lead = summary.detection_lead_s
        st.metric("先行時間", f"{lead:+.0f} s" if lead is not None else "-")


def _format_time(value: float | None) -> str:
    return "なし" if value is None else f"{value:.0f} s"


def _render_frames(out_dir: Path, rows: pd.DataFrame) -> None:
    frames_dir = out_dir / FRAMES_DIR
    if not frames_dir.is_dir() or rows.empty:
        return
    st.subheader("合成予測画像 (DMD)")
    steps = rows["step"].astype(int).tolist()
    step = st.select_slider("発行ステップ", options=steps, value=steps[0])
    try:
        image = read_image(frames_dir / frame_filename(step))
    except DataError as e:
        logger.warning("Frame not shown: %s", e)
        st.caption("画像なし")
        return
    st.image(image, clamp=True, use_container_width=True)


def _render_spectra(spectra: pd.DataFrame) -> None:
    if spectra.empty:
        return
    st.subheader("DMD 固有値")
    angle = np.linspace(0, 2 * np.pi, 200)
    lam = spectra["lambda_abs"].to_numpy() * np.exp(1j * spectra["lambda_angle"].to_numpy())
    fig = go.Figure()
    fig.add_trace(go.Scatter(
        x=np.cos(angle), y=np.sin(angle), name="単位円",
        line=dict(color="#94a3b8", width=0.5), hoverinfo="skip",
    ))
    fig.add_trace(go.Scatter(
        x=lam.real, y=lam.imag, mode="markers", name="λ",
        marker=dict(color=spectra["step"], colorscale="Viridis", size=5, showscale=True),
        hovertemplate="step %{marker.color}<br>|λ|: %{customdata:.4f}<extra></extra>",
        customdata=spectra["lambda_abs"],
    ))
    fig.update_layout(height=400, margin=dict(l=0, r=0, t=30, b=0), hovermode="closest")
    fig.update_yaxes(scaleanchor="x", scaleratio=1)
    st.plotly_chart(fig, use_container_width=True)
    st.dataframe(spectra, hide_index=True, use_container_width=True)
