from __future__ import annotations

import logging
from pathlib import Path

from sky_nowcast.config import load_scenario
from sky_nowcast.models import FrameSequence
from sky_nowcast.synth import generate

logger = logging.getLogger(__name__)


class ScenarioSource:
    """合成シナリオファイル (TOML / JSON) からフレーム列を生成するソース。"""

    def load(self, path: Path, dt: float | None, seed: int = 0) -> FrameSequence:
        scenario = load_scenario(path)
        if dt is not None and dt != scenario.dt:
            logger.warning("Config dt=%g ignored; scenario %s defines dt=%g", dt, path, scenario.dt)
        frames, _ = generate(scenario, seed)
        return frames
