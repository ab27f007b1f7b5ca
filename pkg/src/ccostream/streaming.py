"""Chunk-by-chunk streaming inference with bounded per-layer caches.

Each layer keeps the projected keys/values of its last ``lc`` chunk inputs
and of the most recent context rows. A chunk attends only to what is in the
cache plus itself, so per-chunk cost is proportional to its key count and
never grows with the stream.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attention import EncoderStack, encoder_forward_offline
from .config import CcoConfig
from .errors import ConfigError, ShapeError, StreamStateError
from .masks import make_layout
from .tensor import ensure_finite


class ContextRing:
    """Fixed-capacity history of context-row ``[K | V]`` entries.

    Every entry is written twice (slot ``i % cap`` and ``i % cap + cap``) so
    any run of consecutive recent entries is one contiguous slice.
    """

    def __init__(self, capacity: int, width: int, dtype):
        self.capacity = capacity
        self.pushed = 0
        self._store = np.empty((2 * capacity, width), dtype=dtype)

    def __len__(self) -> int:
        return min(self.pushed, self.capacity)

    def append(self, row: np.ndarray) -> None:
        slot = self.pushed % self.capacity
        self._store[slot] = row
        self._store[slot + self.capacity] = row
        self.pushed += 1

    def window(self, lo: int, hi: int) -> np.ndarray:
        """Entries for chunks ``lo..hi`` inclusive (clipped at 0), as a view."""
        lo = max(lo, 0)
        oldest = self.pushed - len(self)
        if hi < lo:
            return self._store[:0]
        if lo < oldest or hi >= self.pushed:
            raise IndexError(f"chunks {lo}..{hi} not retained (have {oldest}..{self.pushed - 1})")
        base = self.pushed % self.capacity + self.capacity - self.pushed
        return self._store[base + lo:base + hi + 1]


class LayerCache:
    """Keys/values one layer needs from the past.

    Entries are fused ``[K | V]`` rows, projected once when their chunk was
    processed. ``recent_chunks`` holds the frame rows of the last ``lc``
    chunks; ``ctx_history`` holds the context rows of the newest
    ``n_ctx + lc + 1`` chunks.
    """

    def __init__(self, lc: Optional[int], n_ctx: int, width: int, dtype):
        self.recent_chunks: deque = deque(maxlen=lc)
        self.ctx_history = ContextRing(1 if lc is None else n_ctx + lc + 1, width, dtype)

    def carried(self, chunk: int, lc: Optional[int], n_ctx: int) -> Optional[np.ndarray]:
        """Context rows of chunks ``chunk-lc-n_ctx .. chunk-lc-1`` (0-based)."""
        if lc is None or n_ctx == 0 or chunk - lc - 1 < 0:
            return None
        ring = self.ctx_history
        if chunk - lc - n_ctx >= 0 and ring.pushed == chunk:
            # steady state: the newest n_ctx entries before the lc most recent
            base = ring.pushed % ring.capacity + ring.capacity - lc
            return ring._store[base - n_ctx:base]
        return ring.window(chunk - lc - n_ctx, chunk - lc - 1)

    def __repr__(self):
        return f"LayerCache(chunks={len(self.recent_chunks)}, ctx={len(self.ctx_history)})"


class _PreparedLayer:
    """Per-session view of a layer with fused Q/K/V weights."""

    __slots__ = ("w_qkv", "w_o", "ffn_w1", "ffn_w2", "ln1", "ln2", "n_heads", "d", "scale")

    def __init__(self, layer):
        self.w_qkv = np.ascontiguousarray(np.concatenate([layer.w_q, layer.w_k, layer.w_v], axis=1))
        self.w_o, self.ffn_w1, self.ffn_w2 = layer.w_o, layer.ffn_w1, layer.ffn_w2
        self.ln1 = (layer.ln1_gain, layer.ln1_bias)
        self.ln2 = (layer.ln2_gain, layer.ln2_bias)
        self.n_heads = layer.n_heads
        self.d = layer.d_model
        self.scale = layer.dtype.type(1.0 / np.sqrt(self.d // self.n_heads))


def _norm(x, gain, bias, eps):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / np.sqrt(var + eps) * gain + bias


class StreamSession:
    """Single-writer streaming session over a shared, read-only stack."""

    def __init__(self, stack: EncoderStack, cfg: CcoConfig):
        if cfg.d_model is not None and cfg.d_model != stack.d_model:
            raise ConfigError(f"config d_model={cfg.d_model} but stack has {stack.d_model}")
        self.stack = stack.astype(cfg.dtype)
        self.cfg = cfg
        self.caches = [LayerCache(cfg.lc, cfg.n_ctx, 2 * stack.d_model, cfg.dtype)
                       for _ in self.stack.layers]
        self.chunks_processed = 0
        self.frames_emitted = 0
        self.closed = False
        self._layers = [_PreparedLayer(layer) for layer in self.stack.layers]
        self._eps = cfg.dtype(cfg.eps)
        self._carry = np.empty((0, stack.d_model), dtype=cfg.dtype)
        # layer 0 never carries context rows; neither does lc=all or n_ctx=0
        self._ctx_read = cfg.cco_enabled and cfg.lc is not None and cfg.n_ctx > 0

    @property
    def pending_frames(self) -> int:
        return self._carry.shape[0]

    def push_frames(self, frames: np.ndarray) -> list[np.ndarray]:
        """Buffer frames and return the outputs of every chunk completed."""
        if self.closed:
            raise StreamStateError("session already flushed")
        frames = np.asarray(frames)
        if frames.ndim != 2 or frames.shape[1] != self.stack.d_model:
            raise ShapeError(f"frames must have {self.stack.d_model} columns, got shape {frames.shape}")
        frames = frames.astype(self.cfg.dtype, copy=False)
        buf = np.concatenate([self._carry, frames]) if self.pending_frames else frames
        c = self.cfg.chunk_size
        n_full = buf.shape[0] // c
        outputs = [self._process_chunk(buf[i * c:(i + 1) * c]) for i in range(n_full)]
        self._carry = buf[n_full * c:].copy()
        return outputs

    def flush(self) -> Optional[np.ndarray]:
        """Process the trailing partial chunk, if any, and close the session."""
        if self.closed:
            raise StreamStateError("session already flushed")
        self.closed = True
        if self.pending_frames == 0:
            return None
        out = self._process_chunk(self._carry)
        self._carry = self._carry[:0]
        return out

    def _process_chunk(self, frames: np.ndarray) -> np.ndarray:
        ensure_finite(frames, "frames")
        n_frames = frames.shape[0]
        if self.cfg.cco_enabled:
            x = np.empty((n_frames + 1, frames.shape[1]), dtype=frames.dtype)
            x[:n_frames] = frames
            np.add.reduce(frames, axis=0, out=x[n_frames])
            x[n_frames] /= n_frames
        else:
            x = frames
        b = self.chunks_processed
        last = len(self._layers) - 1
        for n, (layer, cache) in enumerate(zip(self._layers, self.caches)):
            x = self._layer_step(layer, cache, x, b, n_frames, n_ctx=self.cfg.n_ctx if n else 0,
                                 frames_only=n == last, keep_ctx=n > 0 and self._ctx_read)
        self.chunks_processed += 1
        self.frames_emitted += n_frames
        return ensure_finite(x, "chunk output")

    def _layer_step(self, layer: _PreparedLayer, cache: LayerCache, x, b, n_frames, n_ctx,
                    frames_only=False, keep_ctx=True):
        """One layer for one chunk. With ``frames_only`` the context row still
        contributes its key/value but gets no output row of its own (the last
        layer's context output is never read). ``keep_ctx`` is false when no
        later chunk will read this layer's context history."""
        cfg, d, heads = self.cfg, layer.d, layer.n_heads
        qkv = _norm(x, *layer.ln1, self._eps) @ layer.w_qkv
        kv = qkv[:, d:]
        if frames_only:
            x, q = x[:n_frames], qkv[:n_frames, :d]
        else:
            q = qkv[:, :d]
        rows = x.shape[0]
        carried = cache.carried(b, cfg.lc, n_ctx)
        past = [carried] if carried is not None else []
        past.extend(cache.recent_chunks)
        if past:
            past.append(kv)
            kv_all = np.concatenate(past)
        else:
            kv_all = kv
        n_keys = kv_all.shape[0]
        qh = q.reshape(rows, heads, -1).transpose(1, 0, 2)
        kh = kv_all[:, :d].reshape(n_keys, heads, -1).transpose(1, 2, 0)
        vh = kv_all[:, d:].reshape(n_keys, heads, -1).transpose(1, 0, 2)
        # every gathered key is allowed, so a plain softmax suffices
        s = (qh @ kh) * layer.scale
        s -= s.max(axis=-1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=-1, keepdims=True)
        attn = (s @ vh).transpose(1, 0, 2).reshape(rows, d)
        h = x + attn @ layer.w_o
        u = _norm(h, *layer.ln2, self._eps) @ layer.ffn_w1
        out = h + (u / (1.0 + np.exp(-u))) @ layer.ffn_w2

        if cfg.lc != 0:
            cache.recent_chunks.append(kv[:n_frames])
        if keep_ctx and cfg.cco_enabled:
            cache.ctx_history.append(kv[n_frames])
        return out


def open_session(stack: EncoderStack, cfg: CcoConfig) -> StreamSession:
    return StreamSession(stack, cfg)


def stream_all(frames: np.ndarray, stack: EncoderStack, cfg: CcoConfig,
               push_size: Optional[int] = None) -> np.ndarray:
    """Stream ``frames`` through a fresh session and stack the outputs."""
    session = open_session(stack, cfg)
    step = push_size or frames.shape[0]
    outputs = []
    for start in range(0, frames.shape[0], step):
        outputs.extend(session.push_frames(frames[start:start + step]))
    tail = session.flush()
    if tail is not None:
        outputs.append(tail)
    return np.concatenate(outputs)


@dataclass
class CompareReport:
    max_abs_diff: float
    per_chunk_diffs: list[float] = field(default_factory=list)

    def within(self, tol: float) -> bool:
        return self.max_abs_diff <= tol


TOLERANCE = {"double": 1e-10, "single": 1e-5}


def compare_offline(frames: np.ndarray, stack: EncoderStack, cfg: CcoConfig) -> CompareReport:
    """Run the offline and streaming paths on the same input and diff them."""
    offline = encoder_forward_offline(frames, stack, cfg)
    streamed = stream_all(frames, stack, cfg)
    diff = np.abs(offline.astype(np.float64) - streamed.astype(np.float64))
    layout = make_layout(frames.shape[0], cfg.chunk_size)
    per_chunk = [float(diff[s:s + n].max()) for s, n in layout.chunk_spans]
    return CompareReport(float(diff.max()), per_chunk)
