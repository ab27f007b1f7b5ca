import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccostream.attention import encoder_forward_offline, random_stack
from ccostream.config import CcoConfig
from ccostream.errors import ConfigError, ShapeError, StreamStateError
from ccostream.masks import ExtendedLayout, MaskSpec, build_cco_mask, make_layout
from ccostream.streaming import ContextRing, compare_offline, open_session, stream_all

STACK = random_stack(8, 2, 3, rng=21)


def test_open_session_starts_empty():
    s = open_session(STACK, CcoConfig(4))
    assert s.chunks_processed == 0 and s.pending_frames == 0
    assert all(len(c.recent_chunks) == 0 and len(c.ctx_history) == 0 for c in s.caches)


def test_open_session_rejects_width_mismatch():
    with pytest.raises(ConfigError):
        open_session(STACK, CcoConfig(4, d_model=16))


def test_sessions_are_independent(rng):
    cfg = CcoConfig(4, 1, 1)
    a, b = open_session(STACK, cfg), open_session(STACK, cfg)
    frames = rng.standard_normal((8, 8))
    out_a = a.push_frames(frames)
    assert b.chunks_processed == 0
    out_b = b.push_frames(frames)
    assert all(np.array_equal(x, y) for x, y in zip(out_a, out_b))


def test_incomplete_chunk_is_buffered(rng):
    s = open_session(STACK, CcoConfig(4))
    assert s.push_frames(rng.standard_normal((3, 8))) == []
    assert s.pending_frames == 3


def test_second_chunk_sees_first_context_embedding(rng):
    frames = rng.standard_normal((8, 8))
    cfg = CcoConfig(4, lc=0, n_ctx=1)
    outs = open_session(STACK, cfg).push_frames(frames)
    assert len(outs) == 2
    ext = ExtendedLayout(make_layout(8, 4))
    mask = build_cco_mask(ext, MaskSpec(0, 1, "later"))
    assert mask[ext.frame_index[4], ext.slot_index[0]]
    # dropping the carried embedding changes chunk 2
    no_carry = open_session(STACK, cfg.with_(n_ctx=0)).push_frames(frames)
    assert np.array_equal(no_carry[0], outs[0])
    assert not np.allclose(no_carry[1], outs[1])
    assert np.max(np.abs(np.concatenate(outs) - encoder_forward_offline(frames, STACK, cfg))) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(cuts=st.lists(st.integers(0, 37), max_size=6), C=st.sampled_from([2, 3, 4, 8]),
       lc=st.sampled_from([0, 1, 2, None]), n_ctx=st.integers(0, 3))
def test_split_invariance_is_bitwise(cuts, C, lc, n_ctx):
    frames = np.random.default_rng(5).standard_normal((37, 8))
    cfg = CcoConfig(C, lc, n_ctx)
    whole = stream_all(frames, STACK, cfg)
    s = open_session(STACK, cfg)
    outs = []
    bounds = [0, *sorted(cuts), 37]
    for lo, hi in zip(bounds, bounds[1:]):
        outs.extend(s.push_frames(frames[lo:hi]))
    tail = s.flush()
    outs += [tail] if tail is not None else []
    assert np.array_equal(np.concatenate(outs), whole)


def test_flush_behaviour(rng):
    s = open_session(STACK, CcoConfig(4))
    s.push_frames(rng.standard_normal((8, 8)))
    assert s.flush() is None
    with pytest.raises(StreamStateError):
        s.flush()
    with pytest.raises(StreamStateError):
        s.push_frames(rng.standard_normal((1, 8)))

    s = open_session(STACK, CcoConfig(4))
    s.push_frames(rng.standard_normal((6, 8)))
    assert s.flush().shape == (2, 8)


def test_frame_count_conservation(rng):
    s = open_session(STACK, CcoConfig(4))
    outs = s.push_frames(rng.standard_normal((10, 8)))
    outs.append(s.flush())
    assert sum(o.shape[0] for o in outs) == 10 == s.frames_emitted


def test_push_rejects_wrong_width():
    with pytest.raises(ShapeError):
        open_session(STACK, CcoConfig(4)).push_frames(np.zeros((4, 3)))


@pytest.mark.parametrize("T,C,lc,n_ctx,cco", [
    (64, 8, 1, 1, True), (37, 4, 0, 2, True), (50, 3, 2, 16, True), (20, 4, None, 0, True),
    (30, 4, 1, 0, False), (19, 5, None, 0, False), (5, 8, 1, 1, True),
])
def test_compare_offline_double(rng, T, C, lc, n_ctx, cco):
    rep = compare_offline(rng.standard_normal((T, 8)), STACK, CcoConfig(C, lc, n_ctx, cco_enabled=cco))
    assert rep.max_abs_diff <= 1e-10
    assert len(rep.per_chunk_diffs) == -(-T // C)


def test_compare_offline_single(rng):
    rep = compare_offline(rng.standard_normal((40, 8)), STACK, CcoConfig(4, 1, 2, "single"))
    assert rep.max_abs_diff <= 1e-5


def test_n_ctx_irrelevant_for_two_chunks(rng):
    frames = rng.standard_normal((8, 8))
    a = stream_all(frames, STACK, CcoConfig(4, 1, 0))
    b = stream_all(frames, STACK, CcoConfig(4, 1, 1))
    assert np.array_equal(a, b)
    ra = compare_offline(frames, STACK, CcoConfig(4, 1, 0))
    rb = compare_offline(frames, STACK, CcoConfig(4, 1, 1))
    assert ra == rb


@pytest.mark.parametrize("lc,n_ctx", [(0, 0), (1, 1), (2, 4), (1, 16)])
def test_cache_stays_bounded(rng, lc, n_ctx):
    s = open_session(STACK, CcoConfig(2, lc, n_ctx))
    for _ in range(100):
        s.push_frames(rng.standard_normal((2, 8)))
        for c in s.caches:
            assert len(c.recent_chunks) <= lc
            assert len(c.ctx_history) <= n_ctx + lc + 1
    for c in s.caches:
        assert len(c.recent_chunks) == min(100, lc)


def test_streaming_prefix_causality(rng):
    frames = rng.standard_normal((40, 8))
    cfg = CcoConfig(4, 1, 2)
    full = stream_all(frames, STACK, cfg)
    s = open_session(STACK, cfg)
    prefix = np.concatenate(s.push_frames(frames[:20]))
    assert np.array_equal(prefix, full[:20])


@settings(max_examples=50, deadline=None)
@given(cap=st.integers(1, 6), pushes=st.integers(0, 20), data=st.data())
def test_context_ring_matches_list_model(cap, pushes, data):
    ring = ContextRing(cap, 2, np.float64)
    model = []
    for i in range(pushes):
        ring.append(np.array([i, -i], dtype=float))
        model.append(i)
    assert len(ring) == min(pushes, cap)
    if pushes:
        lo = data.draw(st.integers(max(0, pushes - cap), pushes - 1))
        hi = data.draw(st.integers(lo - 1, pushes - 1))
        assert ring.window(lo, hi)[:, 0].tolist() == model[lo:hi + 1]
        if pushes > cap:
            with pytest.raises(IndexError):
                ring.window(pushes - cap - 1, pushes - 1)
