#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Workload sizes mirror real corpus-scale matching: hundreds of question
vectors per document pair, thousands of section-pair gated sums, and
token-sequence LCS at answer length. Run:

    python3 benchmarks/bench_kernels.py

The active pipeline path is selected at import time by MHQAGEN_DISABLE_NUMBA;
this script always times both implementations directly.
"""

from __future__ import annotations

import time

import numpy as np

from mhqagen import kernels


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - started)
    return best


def _bench(name: str, numpy_fn, numba_fn, repeats: int = 5) -> None:
    t_np = _time(numpy_fn, repeats)
    if numba_fn is None:
        print(f"{name:<28} numpy {t_np * 1e3:9.3f} ms   (numba unavailable)")
        return
    numba_fn()  # compile outside the timed region
    t_nb = _time(numba_fn, repeats)
    speedup = t_np / t_nb if t_nb > 0 else float("inf")
    print(f"{name:<28} numpy {t_np * 1e3:9.3f} ms   numba {t_nb * 1e3:9.3f} ms"
          f"   speedup {speedup:5.2f}x")


def main() -> None:
    print(f"numba available: {kernels.NUMBA_AVAILABLE}; "
          f"pipeline path: {'numba' if kernels.NUMBA_ENABLED else 'numpy'}")
    rng = np.random.default_rng(0)
    have = kernels.NUMBA_AVAILABLE

    u = np.ascontiguousarray(rng.normal(size=(300, 256)))
    v = np.ascontiguousarray(rng.normal(size=(400, 256)))
    _bench("cosine_matrix 300x400x256",
           lambda: kernels.cosine_matrix_numpy(u, v),
           (lambda: kernels.cosine_matrix_numba(u, v)) if have else None)

    mats = [np.ascontiguousarray(rng.uniform(-1, 1, size=(12, 12))) for _ in range(5000)]

    def gated_numpy():
        total = 0.0
        for k in mats:
            total += kernels.gated_abs_sum_numpy(k, 0.3)
        return total

    def gated_numba():
        total = 0.0
        for k in mats:
            total += kernels.gated_abs_sum_numba(k, 0.3)
        return total

    _bench("gated_abs_sum 5000x(12x12)", gated_numpy, gated_numba if have else None)

    target = np.ascontiguousarray(rng.normal(size=(60, 256)))
    others = np.ascontiguousarray(rng.normal(size=(900, 256)))
    _bench("distinctiveness 60x900x256",
           lambda: kernels.distinctiveness_sums_numpy(target, others),
           (lambda: kernels.distinctiveness_sums_numba(target, others)) if have else None)

    a = np.ascontiguousarray(rng.integers(0, 50, size=400), dtype=np.int64)
    b = np.ascontiguousarray(rng.integers(0, 50, size=400), dtype=np.int64)
    _bench("lcs_length 400x400",
           lambda: kernels.lcs_length_numpy(a, b),
           (lambda: kernels.lcs_length_numba(a, b)) if have else None)

    # agreement spot-check between the two paths
    if have:
        assert abs(gated_numpy() - gated_numba()) < 1e-6
        assert kernels.lcs_length_numpy(a, b) == kernels.lcs_length_numba(a, b)
        np.testing.assert_allclose(kernels.cosine_matrix_numpy(u, v),
                                   kernels.cosine_matrix_numba(u, v), atol=1e-9)
        print("cross-path agreement: OK")


if __name__ == "__main__":
    main()
