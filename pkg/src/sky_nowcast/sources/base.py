from __future__ import annotations

from pathlib import Path
from typing import Protocol

from sky_nowcast.models import FrameSequence


class FrameSource(Protocol):
    """フレーム列の読み込み元の共通インターフェース。

    load() は画素値を雲量 [0, 1] に正規化した FrameSequence を返す。
    """

    def load(self, path: Path, dt: float | None, seed: int = 0) -> FrameSequence: ...
