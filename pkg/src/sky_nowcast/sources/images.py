"""PGM / PNG 画像ディレクトリの読み書き (Pillow)。"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image

from sky_nowcast.errors import ConfigError, DataError
from sky_nowcast.models import FrameSequence

logger = logging.getLogger(__name__)

FRAME_SUFFIXES = (".pgm", ".png")

# Pillow のモードごとの最大階調値
_MODE_MAXVAL = {
    "1": 1.0,
    "L": 255.0,
    "I": 65535.0,
    "I;16": 65535.0,
    "I;16B": 65535.0,
    "I;16L": 65535.0,
}

_MAX_16BIT = 65535


def read_image(path: Path) -> np.ndarray:
    """8/16 bit グレースケール画像を [0, 1] の配列として読む。"""
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            pixels = np.asarray(img)
    except OSError as e:
        raise DataError(f"Unreadable image {path}: {e}") from e
    maxval = _MODE_MAXVAL.get(mode)
    if maxval is None:
        raise DataError(f"Unsupported image mode {mode!r} in {path}: expected 8 or 16 bit grayscale")
    image = pixels.astype(float) / maxval
    if image.max(initial=0.0) > 1.0:
        raise DataError(f"Pixel values in {path} exceed 16 bit range")
    return image


def write_image(image: np.ndarray, path: Path) -> None:
    """[0, 1] の画像を 16 bit グレースケール (PGM / PNG) で保存する。"""
    if path.suffix.lower() not in FRAME_SUFFIXES:
        raise ValueError(f"Unsupported image format {path.suffix!r}; use .pgm or .png")
    levels = np.round(np.clip(image, 0.0, 1.0) * _MAX_16BIT).astype(np.uint16)
    if path.suffix.lower() == ".pgm":
        # PGM は "I" モードから 16 bit (maxval 65535) で書かれる
        picture = Image.fromarray(levels.astype(np.int32))
    else:
        picture = Image.fromarray(levels)  # "I;16"
    path.parent.mkdir(parents=True, exist_ok=True)
    picture.save(path)


def frame_paths(directory: Path) -> list[Path]:
    """ディレクトリ内のフレーム画像をファイル名の辞書順で返す。"""
    return sorted(
        (p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in FRAME_SUFFIXES),
        key=lambda p: p.name,
    )


def load_sequence(directory: Path, dt: float) -> FrameSequence:
    """画像ディレクトリをフレーム列として読み込む。"""
    if not directory.is_dir():
        raise DataError(f"Frame directory {directory} does not exist")
    paths = frame_paths(directory)
    if not paths:
        raise DataError(f"No PGM/PNG frames found in {directory}")
    logger.info("Loading %d frames from %s", len(paths), directory)
    return FrameSequence.from_frames([read_image(p) for p in paths], dt)


def write_sequence(seq: FrameSequence, directory: Path, suffix: str = ".pgm") -> list[Path]:
    """フレーム列を frame_00001.pgm, ... として書き出す。"""
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, frame in enumerate(seq.frames, start=1):
        path = directory / f"frame_{k:05d}{suffix}"
        write_image(frame, path)
        paths.append(path)
    return paths


class ImageDirectorySource:
    """PGM / PNG 画像のディレクトリから読み込むソース。"""

    def load(self, path: Path, dt: float | None, seed: int = 0) -> FrameSequence:
        if dt is None:
            raise ConfigError(f"dt must be set in the config to read image directory {path}")
        return load_sequence(path, dt)
