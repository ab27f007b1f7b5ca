import numpy as np
import pytest

from ccostream.accounting import (bench_many, bench_stream, memory_bank_kv, memory_report,
                                  percentile_nearest_rank)
from ccostream.attention import random_stack
from ccostream.config import CcoConfig
from ccostream.masks import ExtendedLayout, MaskSpec, build_cco_mask, make_layout


def test_steady_state_key_count():
    rep = memory_report(8, 1, 2, 10)
    for b in range(4, 11):
        assert rep.per_layer_kv[("later", b)] == 19
    # popcount oracle
    ext = ExtendedLayout(make_layout(80, 8))
    mask = build_cco_mask(ext, MaskSpec(1, 2, "later"))
    assert mask[ext.slot_index[5]].sum() == 19


def test_baseline_grows_linearly():
    rep = memory_report(8, 1, 16, 100)
    assert rep.baseline_kv[100] == 800
    assert all(rep.baseline_kv[b] == 8 * b for b in rep.baseline_kv)
    assert rep.per_layer_kv[("later", 100)] == 33
    assert rep.ratio_at(100) == 33 / 800


def test_entries_agree_with_popcount():
    C, lc, n_ctx, B = 4, 2, 3, 9
    rep = memory_report(C, lc, n_ctx, B, n_layers=3)
    ext = ExtendedLayout(make_layout(B * C, C))
    for cls in ("first", "later"):
        mask = build_cco_mask(ext, MaskSpec(lc, n_ctx if cls == "later" else 0, cls))
        for b in range(1, B + 1):
            assert rep.per_layer_kv[(cls, b)] == mask[ext.slot_index[b - 1]].sum()
    first = sum(rep.per_layer_kv[("first", b)] for b in range(1, B + 1))
    later = sum(rep.per_layer_kv[("later", b)] for b in range(1, B + 1))
    assert rep.cco_total == first + 2 * later
    assert rep.baseline_total == 3 * sum(4 * b for b in range(1, B + 1))
    assert rep.ratio < 1


def test_cco_constant_after_warmup():
    for lc in (0, 1, 2):
        for n_ctx in (0, 1, 4):
            rep = memory_report(4, lc, n_ctx, 30)
            steady = {rep.per_layer_kv[("later", b)] for b in range(lc + n_ctx + 2, 31)}
            assert steady == {(lc + 1) * 4 + 1 + n_ctx}


def test_memory_bank_counts():
    assert memory_bank_kv(16, 2, 4, 1) == 16
    assert memory_bank_kv(16, 2, 4, 10) == 32 + 16 + 4
    assert memory_bank_kv(16, 2, None, 10) == 32 + 16 + 9


def test_nearest_rank():
    assert percentile_nearest_rank(list(range(1, 101)), 99) == 99
    assert percentile_nearest_rank([5.0], 99) == 5.0
    assert percentile_nearest_rank(list(range(1, 501)), 99) == 495


def test_bench_reports():
    stack = random_stack(8, 2, 1, rng=0)
    rep = bench_stream(stack, CcoConfig(4, 1, 1), stream_length=30, repetitions=2, warmup=2)
    assert rep.count == 60 and len(rep.runs) == 2
    assert rep.p99_ms >= rep.mean_ms >= 0
    assert rep.best_mean_ms <= max(np.mean(r) for r in rep.runs)


def test_bench_many_requires_common_chunk():
    stack = random_stack(8, 2, 1, rng=0)
    with pytest.raises(ValueError):
        bench_many(stack, [CcoConfig(4), CcoConfig(8)], 5)
