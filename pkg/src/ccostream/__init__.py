"""Streaming self-attention encoder with dynamic context carry-over."""

from .accounting import LatencyReport, MemoryReport, bench_many, bench_stream, memory_report
from .attention import (EncoderLayerParams, EncoderStack, encoder_forward_offline,
                        init_context_slots, layer_backward, layer_forward, mhsa, random_stack)
from .config import CcoConfig
from .dct import DctDraw, DctSampler
from .estimator import CcoEncoder
from .io import load_weights, save_weights
from .masks import ChunkLayout, ExtendedLayout, MaskSpec, build_cco_mask, kv_count, make_layout
from .streaming import StreamSession, compare_offline, open_session

__version__ = "0.1.0"

__all__ = [
    "CcoConfig", "CcoEncoder", "ChunkLayout", "DctDraw", "DctSampler", "EncoderLayerParams",
    "EncoderStack", "ExtendedLayout", "LatencyReport", "MaskSpec", "MemoryReport",
    "StreamSession", "bench_many", "bench_stream", "build_cco_mask", "compare_offline",
    "encoder_forward_offline", "init_context_slots", "kv_count", "layer_backward",
    "layer_forward", "load_weights", "make_layout", "memory_report", "mhsa", "open_session",
    "random_stack", "save_weights",
]
