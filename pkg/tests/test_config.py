from __future__ import annotations

import sys
from pathlib import Path

import pytest
from pydantic import ValidationError

from sky_nowcast.config import load_config, load_scenario, save_config, save_scenario
from sky_nowcast.errors import ConfigError
from sky_nowcast.models import BlobSpec, DiskSpec, DMDConfig, RunConfig, SynthScenario

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class TestLoadConfig:
    def test_relative_paths_follow_config_file(self, tmp_path: Path) -> None:
        path = tmp_path / "runs" / "run.toml"
        path.parent.mkdir()
        path.write_text('input_path = "frames"\noutput_dir = "out"\ndt = 2.0\n', encoding="utf-8")
        config = load_config(path)
        assert config.input_path == tmp_path / "runs" / "frames"
        assert config.output_dir == tmp_path / "runs" / "out"
        assert config.dt == 2.0

    def test_absolute_paths_are_kept(self, tmp_path: Path) -> None:
        path = tmp_path / "run.json"
        path.write_text(f'{{"input_path": "{(tmp_path / "x.toml").as_posix()}"}}', encoding="utf-8")
        assert load_config(path).input_path == tmp_path / "x.toml"

    def test_defaults(self, tmp_path: Path) -> None:
        path = tmp_path / "run.toml"
        path.write_text('input_path = "s.toml"\n', encoding="utf-8")
        config = load_config(path)
        assert config.dmd.order == 3
        assert config.dmd.window == 8
        assert config.flow.alpha == 1.0
        assert config.report.dissolution_threshold == 0.95

    def test_nested_sections(self, tmp_path: Path) -> None:
        path = tmp_path / "run.toml"
        path.write_text(
            'input_path = "s.toml"\n[dmd]\norder = 2\nwindow = 10\n[glare]\nper_frame = true\n',
            encoding="utf-8",
        )
        config = load_config(path)
        assert config.dmd.order == 2
        assert config.dmd.window == 10
        assert config.glare.per_frame

    def test_missing_file_raises(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "missing.toml")

    def test_malformed_toml_raises(self, tmp_path: Path) -> None:
        path = tmp_path / "run.toml"
        path.write_text("input_path = [unterminated\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="Malformed"):
            load_config(path)

    def test_non_object_json_raises(self, tmp_path: Path) -> None:
        path = tmp_path / "run.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_invalid_value_raises(self, tmp_path: Path) -> None:
        path = tmp_path / "run.toml"
        path.write_text('input_path = "s.toml"\n[dmd]\norder = 5\nwindow = 6\n', encoding="utf-8")
        with pytest.raises(ConfigError, match="Invalid config"):
            load_config(path)

    def test_unsupported_format_raises(self, tmp_path: Path) -> None:
        path = tmp_path / "run.yaml"
        path.write_text("input_path: s.toml\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="Unsupported config format"):
            load_config(path)


class TestSaveConfig:
    @pytest.mark.parametrize("name", ["saved.toml", "saved.json"])
    def test_save_then_load(self, tmp_path: Path, name: str) -> None:
        config = RunConfig(
            input_path=tmp_path / "frames",
            output_dir=tmp_path / "out",
            dt=2.5,
            emit_frames=True,
            dmd=DMDConfig(order=2, window=12, augment_levels=2),
        )
        path = tmp_path / name
        save_config(config, path)
        assert load_config(path) == config

    def test_dt_can_be_omitted(self, tmp_path: Path) -> None:
        path = tmp_path / "saved.toml"
        save_config(RunConfig(input_path=tmp_path / "s.toml"), path)
        data = tomllib.loads(path.read_text(encoding="utf-8"))
        assert "dt" not in data
        assert data["dmd"]["order"] == 3
        assert load_config(path).dt is None


class TestDMDConfig:
    def test_window_must_exceed_order(self) -> None:
        with pytest.raises(ValidationError):
            DMDConfig(order=3, window=4)

    def test_augmentation_must_fit_window(self) -> None:
        with pytest.raises(ValidationError):
            DMDConfig(order=1, window=4, augment_levels=3)


class TestScenarioFiles:
    def test_save_then_load(self, tmp_path: Path) -> None:
        scenario = SynthScenario(
            height=30, width=40, steps=10,
            disk=DiskSpec(center_row=15, center_col=8, radius=4),
            blobs=[BlobSpec(center_row=15, center_col=30, sigma=3, amplitude=0.5, velocity_x=-1)],
        )
        path = tmp_path / "scenario.toml"
        save_scenario(scenario, path)
        assert load_scenario(path) == scenario

    def test_invalid_scenario_raises(self, tmp_path: Path) -> None:
        path = tmp_path / "scenario.toml"
        path.write_text(
            "height = 10\nwidth = 10\nsteps = 3\n[disk]\ncenter_row = 1\ncenter_col = 5\nradius = 3\n",
            encoding="utf-8",
        )
        with pytest.raises(ConfigError, match="Invalid scenario"):
            load_scenario(path)
