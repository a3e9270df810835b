"""Reference-math checks: RNG, error metric, dense and paged references."""

from __future__ import annotations

import numpy as np
import pytest

from tilec.oracle import (
    AttentionProblem,
    PagedKV,
    attention_ref,
    gemm_ref,
    paged_attention_ref,
    paged_blockwise_ref,
    philox,
    rand_f16,
    rel_max_err,
)


def test_philox_reproducible():
    a = philox(7).random(16)
    b = philox(7).random(16)
    c = philox(8).random(16)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_rand_f16_range_and_quantization():
    x = rand_f16(philox(3), 64, 32)
    assert x.shape == (64, 32)
    assert x.dtype == np.float32
    assert x.min() >= 0.0 and x.max() < 1.0
    assert np.array_equal(x, x.astype(np.float16).astype(np.float32))


def test_rel_max_err_floor():
    got = np.array([1.0, 0.0, 2.0])
    assert rel_max_err(got, got) == 0.0
    # a tiny reference is floored, so noise near zero stays finite
    err = rel_max_err(np.array([1e-9]), np.array([0.0]))
    assert err == pytest.approx(1e-9 / 1e-6)


def test_rel_max_err_shape_mismatch():
    with pytest.raises(ValueError):
        rel_max_err(np.zeros(3), np.zeros(4))


def test_gemm_ref_matches_f32_matmul():
    rng = philox(11)
    a = rand_f16(rng, 8, 12)
    b = rand_f16(rng, 12, 6)
    c0 = rng.random((8, 6)).astype(np.float32)
    want = c0 + a.astype(np.float32) @ b.astype(np.float32)
    assert np.array_equal(gemm_ref(a, b, c0), want)


def test_gemm_ref_shape_mismatch():
    with pytest.raises(ValueError):
        gemm_ref(np.zeros((4, 3)), np.zeros((5, 2)), np.zeros((4, 2)))


def test_attention_ref_agrees_with_monolithic():
    rng = philox(13)
    q = rand_f16(rng, 32, 16)
    k = rand_f16(rng, 32, 16)
    v = rand_f16(rng, 32, 16)
    out = attention_ref(AttentionProblem(q, k, v, block_size=8))

    s = q.astype(np.float64) @ k.astype(np.float64).T
    p = np.exp(s - s.max(axis=1, keepdims=True))
    mono = (p / p.sum(axis=1, keepdims=True)) @ v.astype(np.float64)
    assert rel_max_err(out, mono) <= 1e-3


def test_attention_problem_validation():
    q = np.zeros((8, 4))
    with pytest.raises(ValueError):
        AttentionProblem(q, np.zeros((8, 5)), q, 4)
    with pytest.raises(ValueError):
        AttentionProblem(q, q, q, 3)  # 8 % 3 != 0


def test_paged_refs():
    rng = philox(17)
    kb = rand_f16(rng, 6, 4, 8)
    vb = rand_f16(rng, 6, 4, 8)
    q = rand_f16(rng, 1, 8)
    kv = PagedKV((2, 0, 5, 2), kb, vb)

    # exact reference equals attention over the gathered cache
    k, v = kv.gathered()
    assert k.shape == (16, 8)
    s = q.astype(np.float64) @ k.astype(np.float64).T
    p = np.exp(s - s.max())
    want = (p / p.sum()) @ v.astype(np.float64)
    assert rel_max_err(paged_attention_ref(q, kv), want) < 1e-12

    # blockwise reference sums per-block softmax outputs instead
    blockwise = paged_blockwise_ref(q, kv)
    assert blockwise.shape == (1, 8)
    assert rel_max_err(blockwise, paged_attention_ref(q, kv)) > 1e-3


def test_paged_kv_validation():
    kb = np.zeros((2, 4, 8))
    with pytest.raises(ValueError):
        PagedKV((0, 2), kb, kb)  # table entry out of range
    with pytest.raises(ValueError):
        PagedKV((0,), kb, np.zeros((2, 4, 7)))
