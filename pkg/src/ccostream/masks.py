"""Chunk layouts and block-structured attention masks.

The extended layout interleaves one context slot after every chunk::

    [chunk_1 frames, ctx_1, chunk_2 frames, ctx_2, ...]

Chunks are numbered from 1 in docstrings and error messages; all arrays
are 0-indexed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Optional

import numpy as np

from .errors import ConfigError

LayerClass = Literal["first", "later"]


@dataclass(frozen=True)
class ChunkLayout:
    total_frames: int
    chunk_size: int
    chunk_spans: tuple[tuple[int, int], ...] = field(repr=False)

    @property
    def chunk_count(self) -> int:
        return len(self.chunk_spans)

    @cached_property
    def chunk_of_frame(self) -> np.ndarray:
        return np.arange(self.total_frames) // self.chunk_size

    def lengths(self) -> np.ndarray:
        return np.array([n for _, n in self.chunk_spans])


def make_layout(total_frames: int, chunk_size: int) -> ChunkLayout:
    if total_frames < 1:
        raise ConfigError("total_frames must be >= 1")
    if chunk_size < 1:
        raise ConfigError("chunk_size must be >= 1")
    spans = tuple((s, min(chunk_size, total_frames - s))
                  for s in range(0, total_frames, chunk_size))
    return ChunkLayout(total_frames, chunk_size, spans)


@dataclass(frozen=True)
class ExtendedLayout:
    """Frame sequence with a context slot appended after each chunk."""

    layout: ChunkLayout

    @property
    def extended_len(self) -> int:
        return self.layout.total_frames + self.layout.chunk_count

    @cached_property
    def slot_index(self) -> np.ndarray:
        """Extended column of each chunk's context slot."""
        return np.array([s + n + b for b, (s, n) in enumerate(self.layout.chunk_spans)])

    @cached_property
    def frame_index(self) -> np.ndarray:
        """Extended column of each frame."""
        return np.arange(self.layout.total_frames) + self.layout.chunk_of_frame

    @cached_property
    def chunk_of_row(self) -> np.ndarray:
        out = np.empty(self.extended_len, dtype=np.int64)
        out[self.frame_index] = self.layout.chunk_of_frame
        out[self.slot_index] = np.arange(self.layout.chunk_count)
        return out

    @cached_property
    def is_slot(self) -> np.ndarray:
        out = np.zeros(self.extended_len, dtype=bool)
        out[self.slot_index] = True
        return out


@dataclass(frozen=True)
class MaskSpec:
    """Which keys a chunk may see.

    ``lc=None`` stands for all preceding chunks. Layer-1 masks never admit
    another chunk's context slot, so ``n_ctx`` is ignored for them.
    """

    lc: Optional[int]
    n_ctx: int = 0
    layer_class: LayerClass = "later"
    cco_enabled: bool = True

    def __post_init__(self):
        if self.lc is not None and self.lc < 0:
            raise ConfigError("lc must be >= 0")
        if self.n_ctx < 0:
            raise ConfigError("n_ctx must be >= 0")
        if self.layer_class not in ("first", "later"):
            raise ConfigError(f"unknown layer class {self.layer_class!r}")
        if not self.cco_enabled and self.n_ctx:
            raise ConfigError("n_ctx must be 0 without carry-over")

    @property
    def effective_n_ctx(self) -> int:
        return self.n_ctx if self.cco_enabled and self.layer_class == "later" else 0


def _first_visible(chunk: np.ndarray, lc: Optional[int]) -> np.ndarray:
    if lc is None:
        return np.zeros_like(chunk)
    return np.maximum(chunk - lc, 0)


def build_cco_mask(layout: ExtendedLayout | ChunkLayout, spec: MaskSpec) -> np.ndarray:
    """Boolean attention mask, ``mask[query, key]``.

    With carry-over the mask is (T+B)x(T+B) over the extended layout;
    without it, T x T over frames only.
    """
    if not spec.cco_enabled:
        base = layout.layout if isinstance(layout, ExtendedLayout) else layout
        chunk = base.chunk_of_frame
        q, k = chunk[:, None], chunk[None, :]
        return (k <= q) & (k >= _first_visible(q, spec.lc))
    if isinstance(layout, ChunkLayout):
        layout = ExtendedLayout(layout)

    chunk = layout.chunk_of_row
    slot = layout.is_slot
    q, k = chunk[:, None], chunk[None, :]
    lo = _first_visible(q, spec.lc)
    frame_ok = ~slot[None, :] & (k <= q) & (k >= lo)
    own_slot = slot[None, :] & (k == q)
    mask = frame_ok | own_slot
    n = spec.effective_n_ctx
    if n and spec.lc is not None:
        # ctx slots of chunks b-LC-n_ctx .. b-LC-1 (0-indexed offsets identical)
        carried = slot[None, :] & (k <= q - spec.lc - 1) & (k >= q - spec.lc - n)
        mask = mask | carried
    return mask


def kv_count(spec: MaskSpec, chunk_index: int, layout: ChunkLayout) -> int:
    """Number of keys visible to chunk ``chunk_index`` (1-based)."""
    b = chunk_index
    if not 1 <= b <= layout.chunk_count:
        raise ConfigError(f"chunk index {b} outside 1..{layout.chunk_count}")
    first = 1 if spec.lc is None else max(1, b - spec.lc)
    frames = int(sum(n for _, n in layout.chunk_spans[first - 1:b]))
    if not spec.cco_enabled:
        return frames
    carried = 0
    if spec.lc is not None:
        carried = max(0, min(spec.effective_n_ctx, b - spec.lc - 1))
    return frames + 1 + carried
