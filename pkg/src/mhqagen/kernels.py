"""Numeric hot kernels: pairwise cosine matrices, threshold-gated similarity
sums, distinctiveness totals, and LCS length.

Every kernel ships in two implementations: a numba ``@njit`` fast path and a
pure-numpy fallback. The active path is chosen once at import time. Set
``MHQAGEN_DISABLE_NUMBA=1`` to force the numpy path; it is also selected
automatically when numba is not installed. ``benchmarks/bench_kernels.py``
compares the two paths on representative workloads.

All kernels take float64 C-contiguous arrays; the public wrappers coerce and
validate. The numba kernels avoid ``prange`` on purpose: reduction order must
be fixed so repeated runs produce identical bytes.
"""

from __future__ import annotations

import os

import numpy as np


def _env_disabled() -> bool:
    return os.environ.get("MHQAGEN_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None
    NUMBA_AVAILABLE = False

NUMBA_ENABLED = NUMBA_AVAILABLE and not _env_disabled()


# ---------------------------------------------------------------------------
# numpy implementations (always defined; also the oracle for the jit path)

def cosine_matrix_numpy(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    un = np.linalg.norm(u, axis=1)
    vn = np.linalg.norm(v, axis=1)
    return (u @ v.T) / np.outer(un, vn)


def gated_abs_sum_numpy(k: np.ndarray, tau: float) -> float:
    mask = k >= tau
    return float(np.sum(np.abs(k[mask])))


def gate_count_numpy(k: np.ndarray, tau: float) -> int:
    return int(np.count_nonzero(k >= tau))


def pair_argmax_numpy(k: np.ndarray) -> tuple[int, int, float]:
    flat = int(np.argmax(k))
    p, q = divmod(flat, k.shape[1])
    return p, q, float(k[p, q])


def distinctiveness_sums_numpy(target: np.ndarray, others: np.ndarray) -> np.ndarray:
    tn = target / np.linalg.norm(target, axis=1, keepdims=True)
    on = others / np.linalg.norm(others, axis=1, keepdims=True)
    return others.shape[0] - (tn @ on.T).sum(axis=1)


def lcs_length_numpy(a: np.ndarray, b: np.ndarray) -> int:
    # Rolling 1-D DP; the left-neighbour dependency keeps the inner loop
    # scalar, which is why the jit path exists.
    m, n = a.shape[0], b.shape[0]
    if m == 0 or n == 0:
        return 0
    row = np.zeros(n + 1, dtype=np.int64)
    for i in range(m):
        prev_diag = 0
        ai = a[i]
        for j in range(1, n + 1):
            tmp = row[j]
            if ai == b[j - 1]:
                row[j] = prev_diag + 1
            elif row[j - 1] > row[j]:
                row[j] = row[j - 1]
            prev_diag = tmp
    return int(row[n])


# ---------------------------------------------------------------------------
# numba implementations

if NUMBA_AVAILABLE:

    @njit(cache=True)
    def cosine_matrix_numba(u, v):  # pragma: no cover - exercised via dispatch
        # np.dot lowers to BLAS inside numba; the win over the numpy
        # fallback is the fused normalization (no outer-product temporary).
        n, d = u.shape
        m = v.shape[0]
        un = np.empty(n)
        vm = np.empty(m)
        for i in range(n):
            s = 0.0
            for t in range(d):
                s += u[i, t] * u[i, t]
            un[i] = np.sqrt(s)
        for j in range(m):
            s = 0.0
            for t in range(d):
                s += v[j, t] * v[j, t]
            vm[j] = np.sqrt(s)
        out = np.dot(u, v.T)
        for i in range(n):
            for j in range(m):
                out[i, j] /= un[i] * vm[j]
        return out

    @njit(cache=True)
    def gated_abs_sum_numba(k, tau):  # pragma: no cover
        total = 0.0
        n, m = k.shape
        for p in range(n):
            for q in range(m):
                val = k[p, q]
                if val >= tau:
                    total += abs(val)
        return total

    @njit(cache=True)
    def gate_count_numba(k, tau):  # pragma: no cover
        count = 0
        n, m = k.shape
        for p in range(n):
            for q in range(m):
                if k[p, q] >= tau:
                    count += 1
        return count

    @njit(cache=True)
    def pair_argmax_numba(k):  # pragma: no cover
        n, m = k.shape
        best_p = 0
        best_q = 0
        best = k[0, 0]
        for p in range(n):
            for q in range(m):
                if k[p, q] > best:
                    best = k[p, q]
                    best_p = p
                    best_q = q
        return best_p, best_q, best

    @njit(cache=True)
    def distinctiveness_sums_numba(target, others):  # pragma: no cover
        t, d = target.shape
        o = others.shape[0]
        tn = np.empty(t)
        for i in range(t):
            s = 0.0
            for x in range(d):
                s += target[i, x] * target[i, x]
            tn[i] = np.sqrt(s)
        on = np.empty(o)
        for j in range(o):
            s = 0.0
            for x in range(d):
                s += others[j, x] * others[j, x]
            on[j] = np.sqrt(s)
        dots = np.dot(target, others.T)
        out = np.empty(t)
        for i in range(t):
            total = 0.0
            for j in range(o):
                total += 1.0 - dots[i, j] / (tn[i] * on[j])
            out[i] = total
        return out

    @njit(cache=True)
    def lcs_length_numba(a, b):  # pragma: no cover
        m = a.shape[0]
        n = b.shape[0]
        if m == 0 or n == 0:
            return 0
        row = np.zeros(n + 1, dtype=np.int64)
        for i in range(m):
            prev_diag = 0
            ai = a[i]
            for j in range(1, n + 1):
                tmp = row[j]
                if ai == b[j - 1]:
                    row[j] = prev_diag + 1
                elif row[j - 1] > row[j]:
                    row[j] = row[j - 1]
                prev_diag = tmp
        return int(row[n])


if NUMBA_ENABLED:
    _cosine_matrix = cosine_matrix_numba
    _gated_abs_sum = gated_abs_sum_numba
    _gate_count = gate_count_numba
    _pair_argmax = pair_argmax_numba
    _distinctiveness_sums = distinctiveness_sums_numba
    _lcs_length = lcs_length_numba
else:
    _cosine_matrix = cosine_matrix_numpy
    _gated_abs_sum = gated_abs_sum_numpy
    _gate_count = gate_count_numpy
    _pair_argmax = pair_argmax_numpy
    _distinctiveness_sums = distinctiveness_sums_numpy
    _lcs_length = lcs_length_numpy


# ---------------------------------------------------------------------------
# public wrappers: validation + dtype/contiguity coercion, then dispatch

def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {arr.shape}")
    return arr


def _check_nonzero_rows(arr: np.ndarray, name: str) -> None:
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms == 0.0):
        idx = int(np.flatnonzero(norms == 0.0)[0])
        raise ValueError(f"{name}[{idx}] has zero norm")


def cosine_matrix(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities, shape (len(u), len(v))."""
    u = _as_matrix(u, "u")
    v = _as_matrix(v, "v")
    if u.shape[1] != v.shape[1]:
        raise ValueError(f"dimension mismatch: {u.shape[1]} vs {v.shape[1]}")
    _check_nonzero_rows(u, "u")
    _check_nonzero_rows(v, "v")
    return _cosine_matrix(u, v)


def gated_abs_sum(k: np.ndarray, tau: float) -> float:
    """Sum of |k[p,q]| over entries with k[p,q] >= tau."""
    k = _as_matrix(k, "k")
    return float(_gated_abs_sum(k, float(tau)))


def gate_count(k: np.ndarray, tau: float) -> int:
    """Number of entries with k[p,q] >= tau."""
    k = _as_matrix(k, "k")
    return int(_gate_count(k, float(tau)))


def pair_argmax(k: np.ndarray) -> tuple[int, int, float]:
    """Indices and value of the maximum entry; ties resolve to the first in
    row-major order."""
    k = _as_matrix(k, "k")
    if k.size == 0:
        raise ValueError("empty matrix")
    p, q, val = _pair_argmax(k)
    return int(p), int(q), float(val)


def distinctiveness_sums(target: np.ndarray, others: np.ndarray) -> np.ndarray:
    """For each target row, the sum of cosine distances (1 - cos) to every
    row of ``others``."""
    target = _as_matrix(target, "target")
    if others is None or len(others) == 0:
        return np.zeros(target.shape[0])
    others = _as_matrix(others, "others")
    if target.shape[1] != others.shape[1]:
        raise ValueError(f"dimension mismatch: {target.shape[1]} vs {others.shape[1]}")
    _check_nonzero_rows(target, "target")
    _check_nonzero_rows(others, "others")
    return np.asarray(_distinctiveness_sums(target, others), dtype=np.float64)


def lcs_length(a, b) -> int:
    """Length of the longest common subsequence of two integer sequences."""
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("lcs_length expects 1-D integer sequences")
    if a.shape[0] == 0 or b.shape[0] == 0:
        return 0
    return int(_lcs_length(a, b))
