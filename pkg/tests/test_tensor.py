import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ccostream.errors import MaskError, NumericError, ShapeError
from ccostream.tensor import layer_norm, masked_row_softmax, matmul


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def test_matmul_identity(rng):
    m = rng.standard_normal((3, 5))
    assert np.array_equal(matmul(np.eye(3), m), m)


def test_matmul_hand_example():
    out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
    assert out.tolist() == [[3.0], [7.0]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
    assert np.max(np.abs(matmul(a, b) - triple_loop(a, b))) <= 1e-12


def test_matmul_shape_and_precision_errors():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 2)), np.ones((2, 2), dtype=np.float32))


def test_matmul_overflow_is_an_error():
    with pytest.raises(NumericError):
        matmul(np.array([[1e200]]), np.array([[1e200]]))


def test_softmax_uniform_row():
    out = masked_row_softmax(np.zeros((1, 4)), np.ones((1, 4), bool))
    assert out.tolist() == [[0.25, 0.25, 0.25, 0.25]]


def test_softmax_single_allowed_entry():
    mask = np.array([[False, True, False]])
    out = masked_row_softmax(np.array([[5.0, -3.0, 100.0]]), mask)
    assert out.tolist() == [[0.0, 1.0, 0.0]]


def test_softmax_large_logits_do_not_overflow():
    out = masked_row_softmax(np.array([[1000.0, 1001.0]]), np.ones((1, 2), bool))
    e = np.e
    assert np.allclose(out, [[1 / (1 + e), e / (1 + e)]], atol=1e-12, rtol=0)


def test_softmax_ignores_garbage_in_blocked_entries():
    scores = np.array([[np.nan, 1.0, np.inf, 2.0]])
    mask = np.array([[False, True, False, True]])
    out = masked_row_softmax(scores, mask)
    assert out[0, 0] == 0.0 and out[0, 2] == 0.0
    assert np.isclose(out[0, 3] / out[0, 1], np.e)


def test_softmax_fully_masked_row_raises():
    mask = np.array([[True, False], [False, False]])
    with pytest.raises(MaskError, match="row 1"):
        masked_row_softmax(np.zeros((2, 2)), mask)


def test_softmax_broadcasts_mask_over_heads(rng):
    mask = rng.random((5, 7)) < 0.5
    mask[:, 0] = True
    scores = rng.standard_normal((3, 5, 7))
    out = masked_row_softmax(scores, mask)
    for h in range(3):
        assert np.array_equal(out[h], masked_row_softmax(scores[h], mask))


@settings(max_examples=60, deadline=None)
@given(
    scores=arrays(np.float64, (4, 6), elements=st.floats(-50, 50)),
    bits=arrays(bool, (4, 6)),
    dtype=st.sampled_from([np.float32, np.float64]),
)
def test_softmax_rows_sum_to_one_and_masked_are_zero(scores, bits, dtype):
    bits[:, 2] = True
    out = masked_row_softmax(scores.astype(dtype), bits)
    tol = 1e-6 if dtype == np.float32 else 1e-12
    assert np.all(np.abs(out.sum(axis=1) - 1) <= tol)
    assert np.all(out[~bits] == 0)
    assert not np.signbit(out[~bits]).any()


def test_layer_norm_constant_row():
    out = layer_norm(np.full((1, 4), 3.0), np.ones(4), np.zeros(4))
    assert np.array_equal(out, np.zeros((1, 4)))


def test_layer_norm_two_point_row():
    out = layer_norm(np.array([[1.0, 3.0]]), np.ones(2), np.zeros(2), eps=1e-300)
    assert np.allclose(out, [[-1.0, 1.0]], atol=1e-15)


def test_layer_norm_moments(rng):
    x = rng.standard_normal((1, 64)) * 5 + 2
    out = layer_norm(x, np.ones(64), np.zeros(64), eps=1e-12)
    assert abs(out.mean()) <= 1e-12
    assert abs(out.var() - 1) <= 1e-9


def test_layer_norm_gain_bias_shape_checked():
    with pytest.raises(ShapeError):
        layer_norm(np.ones((2, 3)), np.ones(2), np.zeros(3))
