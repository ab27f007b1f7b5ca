"""Dense kernels on numpy arrays.

Matrices are plain 2-D ``ndarray`` objects in float32 ("single") or float64
("double"); masks are boolean arrays of the same shape as the scores they
gate. Every function is pure and checks its output for NaN/Inf.
"""

from __future__ import annotations

import numpy as np

from .errors import MaskError, NumericError, ShapeError

LAYER_NORM_EPS = 1e-5


def _check_float(a: np.ndarray, name: str) -> None:
    if a.dtype not in (np.float32, np.float64):
        raise ShapeError(f"{name} must be float32 or float64, got {a.dtype}")


def ensure_finite(a: np.ndarray, what: str = "result") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {what}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with shape and precision checks."""
    _check_float(a, "a")
    _check_float(b, "b")
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"precision mismatch: {a.dtype} vs {b.dtype}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return ensure_finite(out, "matmul")


def masked_row_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the last axis restricted to ``mask``.

    ``mask`` may have fewer leading dimensions than ``scores`` (e.g. one mask
    shared by all heads). Blocked entries are exactly zero and never
    influence the result, even if they hold garbage.
    """
    _check_float(scores, "scores")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != scores.shape[scores.ndim - mask.ndim:]:
        raise ShapeError(f"mask shape {mask.shape} does not match scores {scores.shape}")
    if not mask.any(axis=-1).all():
        row = int(np.flatnonzero(~mask.any(axis=-1).reshape(-1))[0])
        raise MaskError(f"mask row {row} has no allowed entry")
    neg_inf = scores.dtype.type(-np.inf)
    masked = np.where(mask, scores, neg_inf)
    if np.isnan(masked).any() or np.isposinf(masked).any():
        raise NumericError("non-finite score at an allowed position")
    shifted = masked - masked.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return ensure_finite(e / e.sum(axis=-1, keepdims=True), "softmax")


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
               eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """Per-row standardization followed by an affine map."""
    _check_float(x, "x")
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(f"gain/bias must have length {x.shape[-1]}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    out = centered / np.sqrt(var + x.dtype.type(eps)) * gain + bias
    return ensure_finite(out, "layer_norm")
