"""Numeric kernels over sparse binary footprint rows.

Every kernel has two interchangeable backends: a plain-loop version compiled
with numba (default whenever numba imports) and a vectorized numpy version.
Set FOOTCLOAK_DISABLE_NUMBA=1 to force the numpy path. The backends agree to
floating-point roundoff, not bit-for-bit; benchmarks/bench_kernels.py
compares their speed.

Rows are CSR-style: indptr (n+1,), indices (nnz,) with ascending item ids
per row, all values implicitly 1.
"""

from __future__ import annotations

import os

import numpy as np


def _flag_disabled() -> bool:
    val = os.environ.get("FOOTCLOAK_DISABLE_NUMBA", "")
    return val.strip().lower() in {"1", "true", "yes", "on"}


_have_numba = False
if not _flag_disabled():
    try:
        from numba import njit as _njit

        _have_numba = True
    except ImportError:  # pragma: no cover - depends on environment
        _have_numba = False

NUMBA_ENABLED = _have_numba


# ---------------------------------------------------------------------------
# loop bodies (compiled with numba when enabled)


def _row_margins_loop(indptr, indices, weights, intercept):
    n = indptr.shape[0] - 1
    m = weights.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        acc = intercept
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j < m:  # items outside the model vocabulary contribute 0
                acc += weights[j]
        out[i] = acc
    return out


def _scatter_add_rows_loop(indptr, indices, row_values, n_items):
    out = np.zeros(n_items, dtype=np.float64)
    n = indptr.shape[0] - 1
    for i in range(n):
        v = row_values[i]
        for p in range(indptr[i], indptr[i + 1]):
            out[indices[p]] += v
    return out


def _component_col_sums_loop(indptr, indices, W, n_items):
    n, k = W.shape
    out = np.zeros((k, n_items), dtype=np.float64)
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            for c in range(k):
                out[c, j] += W[i, c]
    return out


def _row_component_sums_loop(indptr, indices, H):
    k = H.shape[0]
    n = indptr.shape[0] - 1
    out = np.zeros((n, k), dtype=np.float64)
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            for c in range(k):
                out[i, c] += H[c, j]
    return out


# ---------------------------------------------------------------------------
# vectorized numpy fallbacks


def _row_sums_from_values(indptr, vals):
    csum = np.concatenate((np.zeros(1), np.cumsum(vals, dtype=np.float64)))
    return csum[indptr[1:]] - csum[indptr[:-1]]


def _row_margins_numpy(indptr, indices, weights, intercept):
    m = weights.shape[0]
    valid = indices < m
    safe = np.where(valid, indices, 0)
    vals = np.where(valid, weights[safe], 0.0)
    return _row_sums_from_values(indptr, vals) + intercept


def _scatter_add_rows_numpy(indptr, indices, row_values, n_items):
    reps = np.diff(indptr)
    expanded = np.repeat(row_values, reps)
    return np.bincount(indices, weights=expanded, minlength=n_items).astype(np.float64)


def _component_col_sums_numpy(indptr, indices, W, n_items):
    n, k = W.shape
    rows = np.repeat(np.arange(n), np.diff(indptr))
    out = np.empty((k, n_items), dtype=np.float64)
    for c in range(k):
        out[c] = np.bincount(indices, weights=W[rows, c], minlength=n_items)
    return out


def _row_component_sums_numpy(indptr, indices, H):
    k = H.shape[0]
    n = indptr.shape[0] - 1
    out = np.empty((n, k), dtype=np.float64)
    for c in range(k):
        out[:, c] = _row_sums_from_values(indptr, H[c][indices])
    return out


# ---------------------------------------------------------------------------
# backend selection

_LOOP_IMPLS = {
    "row_margins": _row_margins_loop,
    "scatter_add_rows": _scatter_add_rows_loop,
    "component_col_sums": _component_col_sums_loop,
    "row_component_sums": _row_component_sums_loop,
}
_NUMPY_IMPLS = {
    "row_margins": _row_margins_numpy,
    "scatter_add_rows": _scatter_add_rows_numpy,
    "component_col_sums": _component_col_sums_numpy,
    "row_component_sums": _row_component_sums_numpy,
}

if NUMBA_ENABLED:
    # no parallel=True anywhere: reductions must stay deterministic
    _ACTIVE = {name: _njit(cache=True)(fn) for name, fn in _LOOP_IMPLS.items()}
else:
    _ACTIVE = dict(_NUMPY_IMPLS)


def row_margins(indptr, indices, weights, intercept):
    """Per-row w.x + b for binary CSR rows; out-of-vocabulary items ignored."""
    return _ACTIVE["row_margins"](indptr, indices, weights, float(intercept))


def scatter_add_rows(indptr, indices, row_values, n_items):
    """X^T v for binary CSR X: out[j] = sum of row_values[i] over rows containing j."""
    return _ACTIVE["scatter_add_rows"](indptr, indices, row_values, int(n_items))


def component_col_sums(indptr, indices, W, n_items):
    """W^T X for binary CSR X: out[c, j] = sum of W[i, c] over rows containing j."""
    return _ACTIVE["component_col_sums"](indptr, indices, W, int(n_items))


def row_component_sums(indptr, indices, H):
    """X H^T for binary CSR X: out[i, c] = sum of H[c, j] over items j in row i."""
    return _ACTIVE["row_component_sums"](indptr, indices, H)
