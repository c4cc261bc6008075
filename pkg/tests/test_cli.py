from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from sky_nowcast import __version__
from sky_nowcast.cli import main, run_forecast_command
from sky_nowcast.config import load_config, save_config, save_scenario
from sky_nowcast.models import BlobSpec, DiskSpec, RunConfig, SynthScenario
from sky_nowcast.report import FORECAST_COLUMNS, FORECAST_CSV, SUMMARY_JSON, frame_filename, read_report
from sky_nowcast.sources.images import load_sequence
from sky_nowcast.synth import generate


def _make_scenario() -> SynthScenario:
    """短い合成シナリオ (雲塊1つが円盤へ向かう)。"""
    return SynthScenario(
        height=40,
        width=64,
        dt=2.0,
        steps=14,
        disk=DiskSpec(center_row=20, center_col=12, radius=5, brightness=0.9),
        background=0.05,
        blobs=[BlobSpec(center_row=20, center_col=50, sigma=4.0, amplitude=0.7, velocity_x=-1.5)],
    )


def _write_run(tmp_path: Path, name: str = "run", **overrides: object) -> Path:
    """シナリオと実行設定を書き、設定ファイルのパスを返す。"""
    scenario_path = tmp_path / "scenario.toml"
    if not scenario_path.exists():
        save_scenario(_make_scenario(), scenario_path)
    config = RunConfig(input_path=scenario_path, output_dir=tmp_path / name, **overrides)
    config_path = tmp_path / f"{name}.toml"
    save_config(config, config_path)
    return config_path


class TestForecastCommand:
    def test_writes_outputs(self, tmp_path: Path) -> None:
        assert main(["forecast", "--config", str(_write_run(tmp_path))]) == 0
        out = tmp_path / "run"
        rows = pd.read_csv(out / FORECAST_CSV)
        assert list(rows.columns) == FORECAST_COLUMNS
        assert rows["step"].tolist() == list(range(8, 15))
        assert rows["dmd_k"].between(0.0, 1.0).all()
        assert (out / SUMMARY_JSON).exists()
        assert (out / "config.toml").exists()
        assert (out / "forecast.html").exists()

    def test_summary_contents(self, tmp_path: Path) -> None:
        main(["forecast", "--config", str(_write_run(tmp_path))])
        summary = json.loads((tmp_path / "run" / SUMMARY_JSON).read_text(encoding="utf-8"))
        assert summary["version"] == __version__
        assert summary["steps"] == 14
        assert summary["window"] == 8
        assert set(summary["methods"]) == {"dmd", "frozen_advection"}
        assert summary["methods"]["dmd"]["forecasts"] == 7
        assert summary["wind"]["speed_px_per_step"] > 0

    def test_output_is_deterministic(self, tmp_path: Path) -> None:
        main(["forecast", "--config", str(_write_run(tmp_path, "first"))])
        main(["forecast", "--config", str(_write_run(tmp_path, "second"))])
        for name in (FORECAST_CSV, SUMMARY_JSON):
            assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()

    def test_emit_frames(self, tmp_path: Path) -> None:
        config = load_config(_write_run(tmp_path, emit_frames=True))
        report = run_forecast_command(config)
        frames = sorted((tmp_path / "run" / "frames").glob("*.png"))
        assert len(frames) == len(report.rows)
        assert frames[0].name == frame_filename(8)

    def test_trace_steps(self, tmp_path: Path) -> None:
        config = load_config(_write_run(tmp_path))
        config.report.trace_steps = [8, 10]
        report = run_forecast_command(config)
        assert set(report.trajectories["step"]) == {8, 10}
        assert set(report.trajectories["method"]) == {"dmd", "frozen_advection"}

    def test_read_report(self, tmp_path: Path) -> None:
        config = load_config(_write_run(tmp_path))
        report = run_forecast_command(config)
        loaded = read_report(config.output_dir)
        assert loaded.summary == report.summary
        assert loaded.rows["step"].tolist() == report.rows["step"].tolist()
        assert loaded.rows["dmd_k"].tolist() == pytest.approx(report.rows["dmd_k"].tolist(), abs=1e-6)


class TestExitCodes:
    def test_version(self, capsys: pytest.CaptureFixture[str]) -> None:
        assert main(["version"]) == 0
        assert capsys.readouterr().out.strip() == __version__

    def test_missing_config_is_config_error(self, tmp_path: Path) -> None:
        assert main(["forecast", "--config", str(tmp_path / "missing.toml")]) == 1

    def test_image_directory_without_dt_is_config_error(self, tmp_path: Path) -> None:
        (tmp_path / "frames").mkdir()
        path = tmp_path / "run.toml"
        save_config(RunConfig(input_path=tmp_path / "frames"), path)
        assert main(["forecast", "--config", str(path)]) == 1

    def test_empty_image_directory_is_data_error(self, tmp_path: Path) -> None:
        (tmp_path / "frames").mkdir()
        path = tmp_path / "run.toml"
        save_config(RunConfig(input_path=tmp_path / "frames", dt=2.0), path)
        assert main(["forecast", "--config", str(path)]) == 2

    def test_sequence_shorter_than_window_is_data_error(self, tmp_path: Path) -> None:
        scenario = _make_scenario().model_copy(update={"steps": 4})
        save_scenario(scenario, tmp_path / "scenario.toml")
        assert main(["forecast", "--config", str(_write_run(tmp_path))]) == 2

    def test_linear_algebra_failure_is_numerical_error(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        def _fail(*args: object, **kwargs: object) -> None:
            raise np.linalg.LinAlgError("SVD did not converge")

        monkeypatch.setattr("sky_nowcast.cli.run_pipeline", _fail)
        assert main(["forecast", "--config", str(_write_run(tmp_path))]) == 3


class TestSynthCommand:
    def test_writes_runnable_directory(self, tmp_path: Path) -> None:
        save_scenario(_make_scenario(), tmp_path / "scenario.toml")
        out = tmp_path / "synth"
        assert main(["synth", "--scenario", str(tmp_path / "scenario.toml"), "--seed", "3", "--out", str(out)]) == 0
        assert len(list((out / "frames").glob("*.pgm"))) == 14
        truth = json.loads((out / "truth.json").read_text(encoding="utf-8"))
        assert len(truth["csi"]) == 14
        assert (out / "scenario.toml").exists()

        config = load_config(out / "forecast.toml")
        assert config.input_path == out / "frames"
        assert config.dt == 2.0
        assert config.seed == 3
        assert main(["forecast", "--config", str(out / "forecast.toml")]) == 0
        assert (out / "forecast" / FORECAST_CSV).exists()

    def test_frames_round_trip(self, tmp_path: Path) -> None:
        scenario = _make_scenario().model_copy(update={"noise": 1e-3})
        save_scenario(scenario, tmp_path / "scenario.toml")
        main(["synth", "--scenario", str(tmp_path / "scenario.toml"), "--seed", "1", "--out", str(tmp_path / "out")])
        expected, _ = generate(scenario, seed=1)
        loaded = load_sequence(tmp_path / "out" / "frames", scenario.dt)
        assert np.abs(loaded.frames - expected.frames).max() <= 1 / 65535

    def test_seeded_output_is_deterministic(self, tmp_path: Path) -> None:
        scenario = _make_scenario().model_copy(update={"noise": 1e-3})
        save_scenario(scenario, tmp_path / "scenario.toml")
        for name in ("a", "b"):
            main(["synth", "--scenario", str(tmp_path / "scenario.toml"), "--seed", "7", "--out", str(tmp_path / name)])
        assert (tmp_path / "a" / "truth.json").read_bytes() == (tmp_path / "b" / "truth.json").read_bytes()
        for path in sorted((tmp_path / "a" / "frames").iterdir()):
            assert path.read_bytes() == (tmp_path / "b" / "frames" / path.name).read_bytes()

    def test_empty_scenario_frames_are_identical(self, tmp_path: Path) -> None:
        scenario = _make_scenario().model_copy(update={"blobs": [], "steps": 10})
        save_scenario(scenario, tmp_path / "scenario.toml")
        main(["synth", "--scenario", str(tmp_path / "scenario.toml"), "--out", str(tmp_path / "out")])
        seq = load_sequence(tmp_path / "out" / "frames", scenario.dt)
        assert len(seq) == 10
        assert all(np.array_equal(frame, seq.frames[0]) for frame in seq.frames)

    def test_clear_sky_forecast_is_all_clear(self, tmp_path: Path) -> None:
        scenario = _make_scenario().model_copy(update={"blobs": [], "steps": 10})
        save_scenario(scenario, tmp_path / "scenario.toml")
        main(["synth", "--scenario", str(tmp_path / "scenario.toml"), "--out", str(tmp_path / "out")])
        assert main(["forecast", "--config", str(tmp_path / "out" / "forecast.toml")]) == 0
        rows = pd.read_csv(tmp_path / "out" / "forecast" / FORECAST_CSV)
        assert len(rows) == 3
        for column in ("actual_k", "dmd_k", "frozen_k"):
            assert rows[column].tolist() == pytest.approx([1.0] * 3, abs=1e-6)
        summary = json.loads((tmp_path / "out" / "forecast" / SUMMARY_JSON).read_text(encoding="utf-8"))
        assert summary["wind"] is None

    def test_invalid_scenario_is_config_error(self, tmp_path: Path) -> None:
        path = tmp_path / "scenario.toml"
        path.write_text("height = 10\n", encoding="utf-8")
        assert main(["synth", "--scenario", str(path), "--out", str(tmp_path / "out")]) == 1
