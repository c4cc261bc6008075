from __future__ import annotations

from enum import Enum
from functools import lru_cache
from pathlib import Path

from sky_nowcast.errors import ConfigError
from sky_nowcast.models import FrameSequence
from sky_nowcast.sources.base import FrameSource
from sky_nowcast.sources.images import ImageDirectorySource
from sky_nowcast.sources.scenario import ScenarioSource


class InputKind(str, Enum):
    """入力パスの種類。"""

    IMAGE_DIR = "image_dir"
    SCENARIO = "scenario"


_KIND_SOURCE_MAP = {
    InputKind.IMAGE_DIR: ImageDirectorySource,
    InputKind.SCENARIO: ScenarioSource,
}

_SCENARIO_SUFFIXES = (".toml", ".json")


def input_kind(path: Path) -> InputKind:
    """ディレクトリなら画像列、.toml / .json ならシナリオとみなす。"""
    if path.is_dir():
        return InputKind.IMAGE_DIR
    if path.suffix.lower() in _SCENARIO_SUFFIXES:
        return InputKind.SCENARIO
    raise ConfigError(f"Input {path} is neither an image directory nor a scenario file")


@lru_cache(maxsize=None)
def get_source(kind: InputKind) -> FrameSource:
    """入力の種類に応じたデータソースを返す。"""
    return _KIND_SOURCE_MAP[kind]()


def load_frames(path: Path, dt: float | None, seed: int = 0) -> FrameSequence:
    return get_source(input_kind(path)).load(path, dt, seed)
