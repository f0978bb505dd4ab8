"""Kernel correctness: numpy oracles, jit/numpy parity, wrapper validation."""

from __future__ import annotations

import numpy as np
import pytest

from mhqagen import kernels


def _random_vectors(rng, n, d):
    return rng.uniform(-1, 1, size=(n, d)) + 0.01


def test_cosine_matrix_matches_per_entry_loop():
    rng = np.random.default_rng(0)
    u = _random_vectors(rng, 4, 16)
    v = _random_vectors(rng, 5, 16)
    k = kernels.cosine_matrix(u, v)
    assert k.shape == (4, 5)
    for p in range(4):
        for q in range(5):
            expected = np.dot(u[p], v[q]) / (np.linalg.norm(u[p]) * np.linalg.norm(v[q]))
            assert abs(k[p, q] - expected) < 1e-12


def test_cosine_matrix_rejects_dimension_mismatch_and_zero_rows():
    with pytest.raises(ValueError, match="dimension mismatch"):
        kernels.cosine_matrix(np.ones((2, 3)), np.ones((2, 4)))
    with pytest.raises(ValueError, match="zero norm"):
        kernels.cosine_matrix(np.array([[0.0, 0.0]]), np.ones((1, 2)))


def test_gated_abs_sum_spec_example():
    k = np.array([[0.5, 0.2], [0.4, 0.35]])
    assert kernels.gated_abs_sum(k, 0.3) == pytest.approx(1.25, abs=1e-12)
    assert kernels.gated_abs_sum(np.array([[0.1, -0.5]]), 0.3) == 0.0
    assert kernels.gated_abs_sum(np.array([[1.0]]), 0.3) == 1.0


def test_gate_count():
    k = np.array([[0.5, 0.2], [0.4, 0.35]])
    assert kernels.gate_count(k, 0.3) == 3
    assert kernels.gate_count(k, 0.6) == 0


def test_pair_argmax_first_occurrence_on_ties():
    k = np.array([[0.2, 0.9], [0.9, 0.1]])
    assert kernels.pair_argmax(k) == (0, 1, pytest.approx(0.9))
    with pytest.raises(ValueError):
        kernels.pair_argmax(np.empty((0, 0)))


def test_distinctiveness_sums_brute_force():
    rng = np.random.default_rng(1)
    target = _random_vectors(rng, 3, 8)
    others = _random_vectors(rng, 5, 8)
    sums = kernels.distinctiveness_sums(target, others)
    for i in range(3):
        expected = 0.0
        for j in range(5):
            cos = np.dot(target[i], others[j]) / (
                np.linalg.norm(target[i]) * np.linalg.norm(others[j]))
            expected += 1.0 - cos
        assert abs(sums[i] - expected) < 1e-9


def test_distinctiveness_sums_empty_others():
    assert kernels.distinctiveness_sums(np.ones((2, 4)), np.empty((0, 4))).tolist() == [0.0, 0.0]


def _lcs_brute(a, b):
    # Quadratic reference DP with a full table.
    m, n = len(a), len(b)
    table = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[m][n]


def test_lcs_length_cases_and_fuzz():
    assert kernels.lcs_length([1, 3], [1, 2, 3]) == 2
    assert kernels.lcs_length([], [1, 2]) == 0
    assert kernels.lcs_length([5, 5, 5], [5, 5]) == 2
    rng = np.random.default_rng(2)
    for _ in range(100):
        a = rng.integers(0, 6, size=rng.integers(0, 15)).tolist()
        b = rng.integers(0, 6, size=rng.integers(0, 15)).tolist()
        assert kernels.lcs_length(a, b) == _lcs_brute(a, b)


@pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not installed")
def test_jit_and_numpy_paths_agree():
    rng = np.random.default_rng(3)
    for _ in range(25):
        u = np.ascontiguousarray(_random_vectors(rng, int(rng.integers(1, 7)), 12))
        v = np.ascontiguousarray(_random_vectors(rng, int(rng.integers(1, 7)), 12))
        np.testing.assert_allclose(kernels.cosine_matrix_numba(u, v),
                                   kernels.cosine_matrix_numpy(u, v), atol=1e-12)
        k = np.ascontiguousarray(rng.uniform(-1, 1, size=(4, 5)))
        for tau in (0.0, 0.3, 0.6):
            assert kernels.gated_abs_sum_numba(k, tau) == pytest.approx(
                kernels.gated_abs_sum_numpy(k, tau), abs=1e-12)
            assert kernels.gate_count_numba(k, tau) == kernels.gate_count_numpy(k, tau)
        assert tuple(kernels.pair_argmax_numba(k)) == pytest.approx(
            tuple(kernels.pair_argmax_numpy(k)))
        np.testing.assert_allclose(
            kernels.distinctiveness_sums_numba(u, v),
            kernels.distinctiveness_sums_numpy(u, v), atol=1e-9)
        a = np.ascontiguousarray(rng.integers(0, 5, size=10), dtype=np.int64)
        b = np.ascontiguousarray(rng.integers(0, 5, size=12), dtype=np.int64)
        assert kernels.lcs_length_numba(a, b) == kernels.lcs_length_numpy(a, b)


def test_env_flag_selects_numpy_path(monkeypatch):
    import importlib
    import os
    import mhqagen.kernels as mod

    original = os.environ.get("MHQAGEN_DISABLE_NUMBA")
    monkeypatch.setenv("MHQAGEN_DISABLE_NUMBA", "1")
    try:
        reloaded = importlib.reload(mod)
        assert not reloaded.NUMBA_ENABLED
        assert reloaded.gated_abs_sum(np.array([[0.5]]), 0.3) == 0.5
    finally:
        # restore whatever the session started with before re-binding the
        # dispatchers, or the rest of the suite runs on the wrong path
        if original is None:
            monkeypatch.delenv("MHQAGEN_DISABLE_NUMBA", raising=False)
        else:
            monkeypatch.setenv("MHQAGEN_DISABLE_NUMBA", original)
        importlib.reload(mod)
