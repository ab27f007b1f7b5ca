"""Seeded sampler for dynamic-chunk-training configurations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Union

import numpy as np

from .config import frames_to_ms

ALL = "all"
FULL_CONTEXT_PROB = 0.4
MIN_CHUNK, MAX_CHUNK = 8, 32
DEFAULT_LC_MENU: tuple = (0, 1, 2, 4, ALL)

LeftContext = Union[int, Literal["all"]]


@dataclass(frozen=True)
class DctDraw:
    mode: Literal["full_contextual", "chunked"]
    chunk_size_frames: Optional[int] = None
    left_context_chunks: Optional[LeftContext] = None

    def __post_init__(self):
        if self.mode == "full_contextual":
            if self.chunk_size_frames is not None or self.left_context_chunks is not None:
                raise ValueError("full-contextual draws carry no chunk fields")
        elif self.mode == "chunked":
            if self.chunk_size_frames is None or not MIN_CHUNK <= self.chunk_size_frames <= MAX_CHUNK:
                raise ValueError(f"chunk size must lie in [{MIN_CHUNK}, {MAX_CHUNK}]")
            if self.left_context_chunks is None:
                raise ValueError("chunked draws need a left context")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def chunk_size_ms(self) -> Optional[int]:
        return None if self.chunk_size_frames is None else frames_to_ms(self.chunk_size_frames)

    @property
    def lc(self) -> Optional[int]:
        """Left context as used by ``CcoConfig`` (``None`` = all chunks)."""
        return None if self.left_context_chunks == ALL else self.left_context_chunks


class DctSampler:
    """40% full-contextual, otherwise chunk size uniform on [8, 32] frames and
    left context uniform over ``lc_menu``."""

    def __init__(self, seed=None, lc_menu: Sequence[LeftContext] = DEFAULT_LC_MENU,
                 full_context_prob: float = FULL_CONTEXT_PROB):
        if not lc_menu:
            raise ValueError("lc_menu must not be empty")
        self.rng = np.random.default_rng(seed)
        self.lc_menu = tuple(lc_menu)
        self.full_context_prob = full_context_prob

    def sample(self) -> DctDraw:
        if self.rng.random() < self.full_context_prob:
            return DctDraw("full_contextual")
        size = int(self.rng.integers(MIN_CHUNK, MAX_CHUNK + 1))
        lc = self.lc_menu[int(self.rng.integers(len(self.lc_menu)))]
        return DctDraw("chunked", size, lc)

    def sample_many(self, n: int) -> list[DctDraw]:
        return [self.sample() for _ in range(n)]


def summarize(draws: Sequence[DctDraw]) -> dict:
    chunked = [d for d in draws if d.mode == "chunked"]
    sizes = sorted({d.chunk_size_frames for d in chunked})
    return {
        "draws": len(draws),
        "full_contextual_fraction": (len(draws) - len(chunked)) / len(draws) if draws else 0.0,
        "chunk_sizes_seen": len(sizes),
        "min_chunk": sizes[0] if sizes else None,
        "max_chunk": sizes[-1] if sizes else None,
    }
