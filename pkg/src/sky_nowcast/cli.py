"""コマンドラインインターフェース。

    sky-nowcast forecast --config run.toml
    sky-nowcast synth --scenario scenario.toml --seed 0 --out synth/
    sky-nowcast version

終了コード: 0 成功, 1 設定エラー, 2 入力データエラー, 3 数値エラー。
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from sky_nowcast import __version__
from sky_nowcast.config import load_config, load_scenario, save_config, save_scenario
from sky_nowcast.errors import DataError, NowcastError, NumericalError
from sky_nowcast.forecast import run_pipeline
from sky_nowcast.models import RunConfig
from sky_nowcast.report import ForecastReport, build_report, write_report
from sky_nowcast.sources import load_frames
from sky_nowcast.sources.images import write_sequence
from sky_nowcast.synth import GroundTruth, generate

logger = logging.getLogger(__name__)

_LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def run_forecast_command(config: RunConfig) -> ForecastReport:
    """入力を読み込んでパイプラインを実行し、結果を出力ディレクトリに書く。"""
    seq = load_frames(config.input_path, config.dt, config.seed)
    series = run_pipeline(seq, config)
    report = build_report(series, config.report)
    write_report(report, series, config.output_dir, config.emit_frames)
    save_config(config, config.output_dir / "config.toml")
    return report


def run_synth_command(scenario_path: Path, seed: int, out_dir: Path) -> GroundTruth:
    """シナリオからフレーム画像・真値・そのまま実行できる設定を書き出す。"""
    scenario = load_scenario(scenario_path)
    seq, truth = generate(scenario, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_sequence(seq, out_dir / "frames")
    (out_dir / "truth.json").write_text(truth.model_dump_json(indent=2) + "\n", encoding="utf-8")
    save_scenario(scenario, out_dir / "scenario.toml")
    save_config(
        RunConfig(input_path=Path("frames"), output_dir=Path("forecast"), dt=scenario.dt, seed=seed),
        out_dir / "forecast.toml",
    )
    logger.info("Synthetic sequence written to %s", out_dir)
    return truth


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sky-nowcast",
        description="Clear-sky index forecasting from sky-image sequences with dynamic mode decomposition.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    forecast = sub.add_parser("forecast", help="run the forecasting pipeline")
    forecast.add_argument("--config", type=Path, required=True, help="run config (.toml or .json)")

    synth = sub.add_parser("synth", help="render a synthetic scenario with ground truth")
    synth.add_argument("--scenario", type=Path, required=True, help="scenario file (.toml or .json)")
    synth.add_argument("--seed", type=int, default=0, help="noise seed (default: 0)")
    synth.add_argument("--out", type=Path, required=True, help="output directory")

    sub.add_parser("version", help="print the version")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=_LOG_FORMAT)

    try:
        if args.command == "version":
            print(__version__)
        elif args.command == "forecast":
            run_forecast_command(load_config(args.config))
        elif args.command == "synth":
            run_synth_command(args.scenario, args.seed, args.out)
    except NowcastError as e:
        logger.error("%s", e)
        return e.exit_code
    except OSError as e:
        logger.error("I/O failure: %s", e)
        return DataError.exit_code
    except np.linalg.LinAlgError as e:
        logger.error("Numerical failure: %s", e)
        return NumericalError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
