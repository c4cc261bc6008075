from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from pydantic import BaseModel, ValidationError

from sky_nowcast.errors import ConfigError
from sky_nowcast.models import RunConfig, SynthScenario

logger = logging.getLogger(__name__)

# 設定ファイルの位置を基準に解決するパス項目
_RELATIVE_PATH_KEYS = ("input_path", "output_dir")


def _read_document(path: Path) -> dict[str, Any]:
    """TOML または JSON を辞書として読む。"""
    if not path.is_file():
        raise ConfigError(f"Config file {path} not found")
    suffix = path.suffix.lower()
    text = path.read_text(encoding="utf-8")
    try:
        if suffix == ".toml":
            return tomllib.loads(text)
        if suffix == ".json":
            raw = json.loads(text)
            if not isinstance(raw, dict):
                raise ConfigError(f"{path}: top level must be an object")
            return raw
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"Malformed config {path}: {e}") from e
    raise ConfigError(f"Unsupported config format {suffix!r} for {path}; use .toml or .json")


def load_config(path: Path) -> RunConfig:
    """実行設定を読み込む。相対パスは設定ファイルのディレクトリを基準に解決する。

    不正な設定は ConfigError とする (既定値へのフォールバックはしない)。
    """
    raw = _read_document(path)
    for key in _RELATIVE_PATH_KEYS:
        value = raw.get(key)
        if isinstance(value, str) and not Path(value).is_absolute():
            raw[key] = str(path.parent / value)
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid config {path}: {e}") from e
    logger.debug("Loaded config from %s", path)
    return config


def _write_document(model: BaseModel, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    data = model.model_dump(mode="json", exclude_none=True)
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    else:
        path.write_bytes(tomli_w.dumps(data).encode("utf-8"))


def save_config(config: RunConfig, path: Path) -> None:
    """設定を TOML (拡張子 .json なら JSON) で保存する。"""
    _write_document(config, path)


def load_scenario(path: Path) -> SynthScenario:
    """合成シナリオを読み込む。"""
    raw = _read_document(path)
    try:
        return SynthScenario.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid scenario {path}: {e}") from e


def save_scenario(scenario: SynthScenario, path: Path) -> None:
    """シナリオを TOML (拡張子 .json なら JSON) で保存する。"""
    _write_document(scenario, path)
