"""scikit-learn style wrapper around the carry-over encoder."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from .attention import EncoderStack, encoder_forward_offline, random_stack
from .config import CcoConfig, dtype_for
from .io import load_weights
from .streaming import StreamSession, open_session


class CcoEncoder(TransformerMixin, BaseEstimator):
    """Chunked self-attention encoder with context carry-over.

    ``fit`` does no training: like a random projection it draws a stack from
    ``random_state`` (or loads ``weights``, a path or an ``EncoderStack``)
    and records the input width. ``transform`` runs the offline masked
    forward over one utterance (rows = frames); ``stream`` opens an
    incremental session with the same weights and settings.

    ``n_ctx`` and ``lc`` are inference-time settings; changing them with
    ``set_params`` needs no refit as long as the weights stay fixed.
    """

    def __init__(self, chunk_size: int = 16, lc: Optional[int] = 1, n_ctx: int = 1,
                 cco: bool = True, n_layers: int = 2, n_heads: int = 2,
                 d_ff: Optional[int] = None, precision: str = "double",
                 weights=None, random_state=None):
        self.chunk_size = chunk_size
        self.lc = lc
        self.n_ctx = n_ctx
        self.cco = cco
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.precision = precision
        self.weights = weights
        self.random_state = random_state

    def _config(self) -> CcoConfig:
        return CcoConfig(self.chunk_size, self.lc, self.n_ctx if self.cco else 0,
                         self.precision, cco_enabled=self.cco,
                         d_model=getattr(self, "n_features_in_", None))

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=[np.float64, np.float32], ensure_min_samples=1)
        self._config()
        if self.weights is None:
            stack = random_stack(X.shape[1], self.n_heads, self.n_layers, self.d_ff,
                                 self.random_state, self.precision)
        elif isinstance(self.weights, EncoderStack):
            stack = self.weights
        else:
            stack = load_weights(self.weights)
        if stack.d_model != X.shape[1]:
            raise ValueError(f"X has {X.shape[1]} features but the weights expect {stack.d_model}")
        self.stack_ = stack.astype(dtype_for(self.precision))
        return self

    def transform(self, X):
        check_is_fitted(self, "stack_")
        X = validate_data(self, X, reset=False, dtype=[np.float64, np.float32])
        return encoder_forward_offline(X, self.stack_, self._config())

    def stream(self) -> StreamSession:
        check_is_fitted(self, "stack_")
        return open_session(self.stack_, self._config())

    def stream_transform(self, X, push_size: Optional[int] = None):
        """Same result as ``transform`` (to rounding), computed chunk by chunk."""
        X = check_array(X, dtype=[np.float64, np.float32])
        session = self.stream()
        step = push_size or X.shape[0]
        outs = []
        for start in range(0, X.shape[0], step):
            outs.extend(session.push_frames(X[start:start + step]))
        tail = session.flush()
        if tail is not None:
            outs.append(tail)
        return np.concatenate(outs)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = True
        tags.input_tags.allow_nan = False
        return tags
