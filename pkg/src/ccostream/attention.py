"""Carry-over self-attention encoder layers (offline path and gradients).

Layer recipe (pre-norm)::

    h = x + MHSA(LN1(x))
    y = h + W2 . swish(W1 . LN2(h))

Row vectors throughout: a projection is ``x @ W`` with ``W`` of shape
(d_in, d_out). The offline forward materializes the full block mask over
the extended layout and is the reference the streaming path is checked
against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import CcoConfig, precision_of
from .errors import ConfigError, ShapeError
from .masks import ChunkLayout, ExtendedLayout, MaskSpec, build_cco_mask, make_layout
from .tensor import LAYER_NORM_EPS, ensure_finite, layer_norm, masked_row_softmax

WEIGHT_NAMES = ("w_q", "w_k", "w_v", "w_o", "ffn_w1", "ffn_w2",
                "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias")


@dataclass(frozen=True)
class EncoderLayerParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ffn_w1: np.ndarray
    ffn_w2: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray
    n_heads: int

    def __post_init__(self):
        d = self.w_q.shape[0]
        if self.n_heads < 1 or d % self.n_heads:
            raise ConfigError(f"d_model={d} not divisible by n_heads={self.n_heads}")
        for name in ("w_q", "w_k", "w_v", "w_o"):
            if getattr(self, name).shape != (d, d):
                raise ShapeError(f"{name} must be {d}x{d}")
        d_ff = self.ffn_w1.shape[1]
        if self.ffn_w1.shape != (d, d_ff) or self.ffn_w2.shape != (d_ff, d):
            raise ShapeError("ffn weights must be (d_model, d_ff) and (d_ff, d_model)")
        for name in ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"):
            if getattr(self, name).shape != (d,):
                raise ShapeError(f"{name} must have length {d}")
        dtypes = {getattr(self, n).dtype for n in WEIGHT_NAMES}
        if len(dtypes) != 1:
            raise ShapeError(f"mixed precisions in layer weights: {dtypes}")
        for name in WEIGHT_NAMES:
            ensure_finite(getattr(self, name), name)

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_ff(self) -> int:
        return self.ffn_w1.shape[1]

    @property
    def dtype(self):
        return self.w_q.dtype

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in WEIGHT_NAMES}

    def astype(self, dtype) -> "EncoderLayerParams":
        return EncoderLayerParams(
            **{n: getattr(self, n).astype(dtype) for n in WEIGHT_NAMES},
            n_heads=self.n_heads)


@dataclass(frozen=True)
class EncoderStack:
    layers: tuple[EncoderLayerParams, ...]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("an encoder stack needs at least one layer")
        first = self.layers[0]
        for layer in self.layers[1:]:
            if (layer.d_model, layer.n_heads, layer.dtype) != (first.d_model, first.n_heads, first.dtype):
                raise ConfigError("all layers must share d_model, n_heads and precision")

    @property
    def d_model(self) -> int:
        return self.layers[0].d_model

    @property
    def n_heads(self) -> int:
        return self.layers[0].n_heads

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def dtype(self):
        return self.layers[0].dtype

    @property
    def precision(self) -> str:
        return precision_of(self.dtype)

    def astype(self, dtype) -> "EncoderStack":
        if np.dtype(dtype) == self.dtype:
            return self
        return EncoderStack(tuple(layer.astype(dtype) for layer in self.layers))


def random_stack(d_model: int, n_heads: int, n_layers: int, d_ff: Optional[int] = None,
                 rng=None, precision: str = "double") -> EncoderStack:
    """Small random stack; projections scaled by 1/sqrt(fan_in)."""
    rng = np.random.default_rng(rng)
    d_ff = d_ff or 4 * d_model
    layers = []
    for _ in range(n_layers):
        w = {n: rng.standard_normal((d_model, d_model)) / np.sqrt(d_model)
             for n in ("w_q", "w_k", "w_v", "w_o")}
        w["ffn_w1"] = rng.standard_normal((d_model, d_ff)) / np.sqrt(d_model)
        w["ffn_w2"] = rng.standard_normal((d_ff, d_model)) / np.sqrt(d_ff)
        for n in ("ln1", "ln2"):
            w[f"{n}_gain"] = 1.0 + 0.1 * rng.standard_normal(d_model)
            w[f"{n}_bias"] = 0.1 * rng.standard_normal(d_model)
        layers.append(EncoderLayerParams(**w, n_heads=n_heads))
    stack = EncoderStack(tuple(layers))
    return stack.astype(np.float32) if precision == "single" else stack


@dataclass
class ExtendedActivation:
    values: np.ndarray
    layout: ExtendedLayout
    layer_index: int = 0

    def frame_rows(self) -> np.ndarray:
        return self.values[self.layout.frame_index]

    def slot_rows(self) -> np.ndarray:
        return self.values[self.layout.slot_index]


def init_context_slots(frames: np.ndarray, layout: ChunkLayout) -> ExtendedActivation:
    """Interleave one context slot per chunk, set to the chunk's mean frame."""
    if frames.ndim != 2 or frames.shape[0] != layout.total_frames:
        raise ShapeError(f"expected {layout.total_frames} frame rows, got {frames.shape}")
    ext = ExtendedLayout(layout)
    values = np.empty((ext.extended_len, frames.shape[1]), dtype=frames.dtype)
    values[ext.frame_index] = frames
    values[ext.slot_index] = np.stack([frames[s:s + n].mean(axis=0) for s, n in layout.chunk_spans])
    return ExtendedActivation(values, ext, 0)


def split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    rows, d = x.shape
    return x.reshape(rows, n_heads, d // n_heads).transpose(1, 0, 2)


def merge_heads(x: np.ndarray) -> np.ndarray:
    h, rows, dh = x.shape
    return x.transpose(1, 0, 2).reshape(rows, h * dh)


def attend(q: np.ndarray, k: np.ndarray, v: np.ndarray, mask: np.ndarray, n_heads: int,
           return_probs: bool = False):
    """Scaled dot-product attention on already-projected rows.

    Scores are divided by sqrt(d_head). ``mask`` is (rows_q, rows_k).
    """
    qh, kh, vh = (split_heads(t, n_heads) for t in (q, k, v))
    scale = q.dtype.type(1.0 / np.sqrt(qh.shape[-1]))
    probs = masked_row_softmax((qh @ kh.transpose(0, 2, 1)) * scale, mask)
    out = merge_heads(probs @ vh)
    return (out, probs) if return_probs else out


def mhsa(x: np.ndarray, params: EncoderLayerParams, mask: np.ndarray) -> np.ndarray:
    """Bare multi-head self-attention sublayer (no norm, no residual)."""
    out = attend(x @ params.w_q, x @ params.w_k, x @ params.w_v, mask, params.n_heads)
    return ensure_finite(out @ params.w_o, "attention output")


def _swish(h: np.ndarray) -> np.ndarray:
    return h / (1.0 + np.exp(-h))


def feed_forward(h: np.ndarray, params: EncoderLayerParams, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """Second half of the layer recipe: ``h + FFN(LN2(h))``."""
    c = layer_norm(h, params.ln2_gain, params.ln2_bias, eps)
    return ensure_finite(h + _swish(c @ params.ffn_w1) @ params.ffn_w2, "layer output")


def layer_forward(x: np.ndarray, params: EncoderLayerParams, mask: np.ndarray,
                  eps: float = LAYER_NORM_EPS) -> np.ndarray:
    a = layer_norm(x, params.ln1_gain, params.ln1_bias, eps)
    h = x + mhsa(a, params, mask)
    return feed_forward(h, params, eps)


def mhsa_forward(x: ExtendedActivation, params: EncoderLayerParams, mask: np.ndarray,
                 eps: float = LAYER_NORM_EPS) -> ExtendedActivation:
    """Apply one full encoder layer to an extended activation."""
    return ExtendedActivation(layer_forward(x.values, params, mask, eps), x.layout, x.layer_index + 1)


def _check_inputs(frames: np.ndarray, stack: EncoderStack, cfg: CcoConfig) -> None:
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ShapeError(f"frames must be a non-empty 2-D array, got shape {frames.shape}")
    if frames.shape[1] != stack.d_model:
        raise ShapeError(f"frames have {frames.shape[1]} columns, stack expects {stack.d_model}")
    if cfg.d_model is not None and cfg.d_model != stack.d_model:
        raise ConfigError(f"config d_model={cfg.d_model} but stack has {stack.d_model}")


def encoder_forward_offline(frames: np.ndarray, stack: EncoderStack, cfg: CcoConfig) -> np.ndarray:
    """Whole-utterance forward with materialized masks; returns T x d_model."""
    _check_inputs(frames, stack, cfg)
    stack = stack.astype(cfg.dtype)
    frames = np.ascontiguousarray(frames, dtype=cfg.dtype)
    ensure_finite(frames, "frames")
    layout = make_layout(frames.shape[0], cfg.chunk_size)
    if not cfg.cco_enabled:
        mask = build_cco_mask(layout, MaskSpec(cfg.lc, 0, "later", cco_enabled=False))
        x = frames
        for layer in stack.layers:
            x = layer_forward(x, layer, mask, cfg.eps)
        return x

    act = init_context_slots(frames, layout)
    masks = {
        "first": build_cco_mask(act.layout, MaskSpec(cfg.lc, 0, "first")),
        "later": build_cco_mask(act.layout, MaskSpec(cfg.lc, cfg.n_ctx, "later")),
    }
    for n, layer in enumerate(stack.layers):
        act = mhsa_forward(act, layer, masks["first" if n == 0 else "later"], cfg.eps)
    return act.frame_rows()


def full_context_forward(frames: np.ndarray, stack: EncoderStack, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """Non-streaming mode: no context slots, every frame sees every frame."""
    cfg = CcoConfig(chunk_size=frames.shape[0], lc=None, n_ctx=0,
                    precision=precision_of(stack.dtype), cco_enabled=False, eps=eps)
    return encoder_forward_offline(frames, stack, cfg)


# -- gradients ---------------------------------------------------------------

def _layer_norm_backward(dout, x, gain, eps):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    dxhat = dout * gain
    dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, (dout * xhat).sum(axis=0), dout.sum(axis=0)


def layer_backward(x: np.ndarray, params: EncoderLayerParams, mask: np.ndarray,
                   upstream_grad: np.ndarray, eps: float = LAYER_NORM_EPS):
    """Reverse-mode gradients of ``layer_forward`` under a fixed mask.

    Returns ``(grad_x, grad_params)`` where ``grad_params`` maps every name
    in ``WEIGHT_NAMES`` to an array shaped like the parameter.
    """
    if upstream_grad.shape != x.shape:
        raise ShapeError(f"upstream gradient {upstream_grad.shape} does not match input {x.shape}")
    p = params
    n_heads = p.n_heads

    # forward, keeping intermediates
    a = layer_norm(x, p.ln1_gain, p.ln1_bias, eps)
    q, k, v = a @ p.w_q, a @ p.w_k, a @ p.w_v
    ctx, probs = attend(q, k, v, mask, n_heads, return_probs=True)
    h = x + ctx @ p.w_o
    c = layer_norm(h, p.ln2_gain, p.ln2_bias, eps)
    pre = c @ p.ffn_w1
    sig = 1.0 / (1.0 + np.exp(-pre))
    act = pre * sig

    g = {}
    dy = upstream_grad
    g["ffn_w2"] = act.T @ dy
    dpre = (dy @ p.ffn_w2.T) * (sig * (1.0 + pre * (1.0 - sig)))
    g["ffn_w1"] = c.T @ dpre
    dh, g["ln2_gain"], g["ln2_bias"] = _layer_norm_backward(dpre @ p.ffn_w1.T, h, p.ln2_gain, eps)
    dh = dh + dy

    g["w_o"] = ctx.T @ dh
    dctx = split_heads(dh @ p.w_o.T, n_heads)
    qh, kh, vh = (split_heads(t, n_heads) for t in (q, k, v))
    scale = 1.0 / np.sqrt(qh.shape[-1])
    dprobs = dctx @ vh.transpose(0, 2, 1)
    dvh = probs.transpose(0, 2, 1) @ dctx
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) * scale
    dq = merge_heads(dscores @ kh)
    dk = merge_heads(dscores.transpose(0, 2, 1) @ qh)
    dv = merge_heads(dvh)
    g["w_q"], g["w_k"], g["w_v"] = a.T @ dq, a.T @ dk, a.T @ dv
    da = dq @ p.w_q.T + dk @ p.w_k.T + dv @ p.w_v.T
    dx, g["ln1_gain"], g["ln1_bias"] = _layer_norm_backward(da, x, p.ln1_gain, eps)
    dx = dx + dh
    return dx, {name: g[name] for name in WEIGHT_NAMES}


def layer_loss(x, params, mask, upstream, eps=LAYER_NORM_EPS) -> float:
    """Scalar ``sum(upstream * layer_forward(x))`` used for finite differences."""
    return float((layer_forward(x, params, mask, eps) * upstream).sum())


def numerical_gradients(x, params, mask, upstream, h=1e-5, eps=LAYER_NORM_EPS):
    """Central finite differences of ``layer_loss`` for input and every parameter."""
    def fd(target, rebuild):
        grad = np.zeros_like(target)
        for idx in np.ndindex(target.shape):
            orig = target[idx]
            target[idx] = orig + h
            plus = layer_loss(*rebuild(), mask, upstream, eps)
            target[idx] = orig - h
            minus = layer_loss(*rebuild(), mask, upstream, eps)
            target[idx] = orig
            grad[idx] = (plus - minus) / (2 * h)
        return grad

    x = x.copy()
    tensors = {n: t.copy() for n, t in params.tensors().items()}

    def rebuild():
        return x, EncoderLayerParams(**tensors, n_heads=params.n_heads)

    grad_x = fd(x, rebuild)
    grads = {n: fd(tensors[n], rebuild) for n in WEIGHT_NAMES}
    return grad_x, grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


__all__ = [
    "WEIGHT_NAMES", "EncoderLayerParams", "EncoderStack", "ExtendedActivation",
    "random_stack", "init_context_slots", "attend", "mhsa", "mhsa_forward",
    "layer_forward", "feed_forward", "encoder_forward_offline", "full_context_forward",
    "layer_backward", "layer_loss", "numerical_gradients", "relative_error",
]
