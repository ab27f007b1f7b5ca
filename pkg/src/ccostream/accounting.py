"""Key/value memory accounting and per-chunk latency benchmarking."""

from __future__ import annotations

import gc
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .attention import EncoderStack
from .config import CcoConfig
from .masks import MaskSpec, kv_count, make_layout
from .streaming import open_session


@dataclass
class MemoryReport:
    chunk_size: int
    lc: Optional[int]
    n_ctx: int
    n_chunks: int
    per_layer_kv: dict = field(default_factory=dict)   # (layer_class, chunk) -> keys
    baseline_kv: dict = field(default_factory=dict)    # chunk -> keys, full left context
    cco_total: int = 0
    baseline_total: int = 0

    @property
    def ratio(self) -> float:
        return self.cco_total / self.baseline_total

    def ratio_at(self, chunk: int, layer_class: str = "later") -> float:
        return self.per_layer_kv[(layer_class, chunk)] / self.baseline_kv[chunk]


def memory_report(chunk_size: int, lc: Optional[int], n_ctx: int, n_chunks: int,
                  n_layers: int = 2) -> MemoryReport:
    """Exact key counts per chunk for carry-over vs the full-left-context baseline.

    Totals sum over all chunks and all ``n_layers`` layers (layer 1 uses the
    first-layer key set, the rest the later-layer set).
    """
    layout = make_layout(chunk_size * n_chunks, chunk_size)
    specs = {"first": MaskSpec(lc, 0, "first"), "later": MaskSpec(lc, n_ctx, "later")}
    baseline = MaskSpec(None, 0, "later", cco_enabled=False)
    report = MemoryReport(chunk_size, lc, n_ctx, n_chunks)
    for b in range(1, n_chunks + 1):
        for cls, spec in specs.items():
            report.per_layer_kv[(cls, b)] = kv_count(spec, b, layout)
        report.baseline_kv[b] = kv_count(baseline, b, layout)
        report.cco_total += report.per_layer_kv[("first", b)] + (n_layers - 1) * report.per_layer_kv[("later", b)]
        report.baseline_total += n_layers * report.baseline_kv[b]
    return report


def memory_grid(grid: Iterable[tuple]) -> list[MemoryReport]:
    return [memory_report(*point) for point in grid]


def memory_bank_kv(chunk_size: int, lc: int, bank_size: Optional[int], chunk: int) -> int:
    """Keys per chunk for a memory-bank streamer (AM-Transformer/Emformer style):
    left-context frames + chunk frames + up to ``bank_size`` memory slots
    (``None`` = unbounded bank)."""
    left = min(lc, chunk - 1) * chunk_size
    bank = chunk - 1 if bank_size is None else min(bank_size, chunk - 1)
    return left + chunk_size + bank


def percentile_nearest_rank(samples: Sequence[float], pct: float) -> float:
    ordered = sorted(samples)
    rank = max(1, math.ceil(pct / 100 * len(ordered)))
    return ordered[rank - 1]


@dataclass
class LatencyReport:
    """Per-chunk wall times; ``runs`` keeps one list of samples per repetition."""

    cfg: CcoConfig
    runs: list[list[float]]

    @property
    def samples_ms(self) -> list[float]:
        return [t for run in self.runs for t in run]

    @property
    def count(self) -> int:
        return len(self.samples_ms)

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.samples_ms))

    @property
    def best_mean_ms(self) -> float:
        """Lowest per-repetition mean; the least load-disturbed estimate."""
        return min(float(np.mean(run)) for run in self.runs)

    @property
    def p99_ms(self) -> float:
        return percentile_nearest_rank(self.samples_ms, 99)


def bench_many(stack: EncoderStack, cfgs: Sequence[CcoConfig], stream_length: int,
               repetitions: int = 3, warmup: int = 20, seed: int = 0,
               threads: int = 1) -> list[LatencyReport]:
    """Per-chunk wall time for several configs on one fixed input.

    All configs stream in lockstep, one chunk each in rotating order, so
    machine-load drift hits every config alike. The first ``warmup`` chunks
    of each repetition are dropped.
    """
    chunk = cfgs[0].chunk_size
    if any(c.chunk_size != chunk for c in cfgs):
        raise ValueError("all benchmarked configs must share a chunk size")
    frames = np.random.default_rng(seed).standard_normal(((stream_length + warmup) * chunk, stack.d_model))
    inputs = [frames.astype(cfg.dtype) for cfg in cfgs]
    runs: list[list[list[float]]] = [[] for _ in cfgs]
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        with threadpool_limits(threads):
            for _ in range(repetitions):
                sessions = [open_session(stack, cfg) for cfg in cfgs]
                times: list[list[float]] = [[] for _ in cfgs]
                for i in range(stream_length + warmup):
                    for j in np.roll(np.arange(len(cfgs)), i):
                        piece = inputs[j][i * chunk:(i + 1) * chunk]
                        t0 = time.perf_counter()
                        sessions[j].push_frames(piece)
                        elapsed = (time.perf_counter() - t0) * 1e3
                        if i >= warmup:
                            times[j].append(elapsed)
                for j in range(len(cfgs)):
                    runs[j].append(times[j])
    finally:
        if gc_was_enabled:
            gc.enable()
    return [LatencyReport(cfg, r) for cfg, r in zip(cfgs, runs)]


def bench_stream(stack: EncoderStack, cfg: CcoConfig, stream_length: int,
                 repetitions: int = 1, **kwargs) -> LatencyReport:
    return bench_many(stack, [cfg], stream_length, repetitions, **kwargs)[0]
