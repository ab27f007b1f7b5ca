"""Run configuration and unit conversions."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigError

FRAME_MS = 40
PRECISION_ENV = "CCO_PRECISION"

_DTYPES = {"single": np.float32, "double": np.float64}


def dtype_for(precision: str) -> type:
    try:
        return _DTYPES[precision]
    except KeyError:
        raise ConfigError(f"precision must be 'single' or 'double', got {precision!r}") from None


def precision_of(dtype) -> str:
    dtype = np.dtype(dtype)
    for name, dt in _DTYPES.items():
        if dtype == dt:
            return name
    raise ConfigError(f"unsupported dtype {dtype}")


def default_precision() -> str:
    value = os.environ.get(PRECISION_ENV, "double")
    dtype_for(value)
    return value


def frames_to_ms(frames: int) -> int:
    return frames * FRAME_MS


def ms_to_frames(ms: int) -> int:
    if ms <= 0 or ms % FRAME_MS:
        raise ConfigError(f"{ms} ms is not a positive multiple of {FRAME_MS} ms")
    return ms // FRAME_MS


def parse_chunk_size(text: str) -> int:
    """Parse ``"16"`` (frames) or ``"640ms"`` into a frame count."""
    text = str(text).strip().lower()
    try:
        if text.endswith("ms"):
            return ms_to_frames(int(text[:-2]))
        value = int(text)
    except ValueError:
        raise ConfigError(f"cannot parse chunk size {text!r}") from None
    if value < 1:
        raise ConfigError("chunk size must be >= 1 frame")
    return value


@dataclass(frozen=True)
class CcoConfig:
    """Streaming/offline encoder configuration.

    ``lc=None`` means all preceding chunks are visible (full left context).
    ``cco_enabled=False`` gives the plain dynamic-chunk baseline without
    context slots; ``n_ctx`` must then be 0.
    """

    chunk_size: int
    lc: Optional[int] = 1
    n_ctx: int = 1
    precision: str = "double"
    cco_enabled: bool = True
    d_model: Optional[int] = None
    eps: float = 1e-5

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ConfigError("chunk_size must be >= 1")
        if self.lc is not None and self.lc < 0:
            raise ConfigError("lc must be >= 0 or None")
        if self.n_ctx < 0:
            raise ConfigError("n_ctx must be >= 0")
        if not self.cco_enabled and self.n_ctx != 0:
            raise ConfigError("n_ctx must be 0 when carry-over is disabled")
        if self.eps <= 0:
            raise ConfigError("eps must be > 0")
        dtype_for(self.precision)

    @property
    def dtype(self) -> type:
        return dtype_for(self.precision)

    def with_(self, **changes) -> "CcoConfig":
        return replace(self, **changes)
