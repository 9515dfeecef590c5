"""Hot aggregation kernels with a numba fast path and a pure-numpy fallback.

Segment reductions and row scatters run once per layer per epoch and dominate
non-BLAS runtime, so they compile with numba @njit when available. Set
HCGNN_NUMBA=0 to force the numpy implementations (used by the benchmark and
by CI environments without a working LLVM). Matrix products are left to
numpy's BLAS in either mode.

Segments use CSR layout: `indices[indptr[g]:indptr[g+1]]` are the input rows
of segment g.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via HCGNN_NUMBA=0 instead
    numba = None
    HAVE_NUMBA = False

NUMBA_ENABLED = HAVE_NUMBA and os.environ.get("HCGNN_NUMBA", "1").lower() not in (
    "0",
    "false",
    "off",
)


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def seg_sum_np(x, indices, indptr):
    gathered = x[indices]
    out = np.add.reduceat(gathered, indptr[:-1], axis=0) if len(indices) else np.zeros(
        (len(indptr) - 1, x.shape[1])
    )
    # reduceat misbehaves on empty segments: patch them to zero
    counts = np.diff(indptr)
    if (counts == 0).any():
        out = out.copy()
        out[counts == 0] = 0.0
    return np.ascontiguousarray(out, dtype=np.float64)


def seg_mean_backward_np(gy, indices, indptr, out_rows):
    counts = np.diff(indptr).astype(np.float64)
    scaled = gy / np.maximum(counts, 1.0)[:, None]
    gx = np.zeros((out_rows, gy.shape[1]))
    seg_of_pair = np.repeat(np.arange(len(counts)), np.diff(indptr))
    np.add.at(gx, indices, scaled[seg_of_pair])
    return gx


def seg_weighted_sum_np(x, indices, indptr, w):
    seg_of_pair = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    contrib = x[indices] * w[:, None]
    out = np.zeros((len(indptr) - 1, x.shape[1]))
    np.add.at(out, seg_of_pair, contrib)
    return out


def seg_weighted_sum_backward_np(gy, x, indices, indptr, w):
    seg_of_pair = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    gy_per_pair = gy[seg_of_pair]
    gx = np.zeros_like(x)
    np.add.at(gx, indices, gy_per_pair * w[:, None])
    gw = np.einsum("ij,ij->i", gy_per_pair, x[indices])
    return gx, gw


def scatter_add_rows_np(src, idx, out_rows):
    out = np.zeros((out_rows, src.shape[1]))
    np.add.at(out, idx, src)
    return out


# ---------------------------------------------------------------------------
# numba fast paths (same contracts as the numpy versions)
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _seg_sum_nb(x, indices, indptr):
        ncols = x.shape[1]
        out = np.zeros((indptr.shape[0] - 1, ncols))
        for g in range(indptr.shape[0] - 1):
            for j in range(indptr[g], indptr[g + 1]):
                r = indices[j]
                for c in range(ncols):
                    out[g, c] += x[r, c]
        return out

    @numba.njit(cache=True)
    def _seg_mean_backward_nb(gy, indices, indptr, out_rows):
        ncols = gy.shape[1]
        gx = np.zeros((out_rows, ncols))
        for g in range(indptr.shape[0] - 1):
            lo, hi = indptr[g], indptr[g + 1]
            if hi == lo:
                continue
            inv = 1.0 / (hi - lo)
            for j in range(lo, hi):
                r = indices[j]
                for c in range(ncols):
                    gx[r, c] += gy[g, c] * inv
        return gx

    @numba.njit(cache=True)
    def _seg_weighted_sum_nb(x, indices, indptr, w):
        ncols = x.shape[1]
        out = np.zeros((indptr.shape[0] - 1, ncols))
        for g in range(indptr.shape[0] - 1):
            for j in range(indptr[g], indptr[g + 1]):
                r = indices[j]
                wj = w[j]
                for c in range(ncols):
                    out[g, c] += wj * x[r, c]
        return out

    @numba.njit(cache=True)
    def _seg_weighted_sum_backward_nb(gy, x, indices, indptr, w):
        ncols = x.shape[1]
        gx = np.zeros(x.shape)
        gw = np.zeros(w.shape[0])
        for g in range(indptr.shape[0] - 1):
            for j in range(indptr[g], indptr[g + 1]):
                r = indices[j]
                wj = w[j]
                acc = 0.0
                for c in range(ncols):
                    gx[r, c] += wj * gy[g, c]
                    acc += gy[g, c] * x[r, c]
                gw[j] = acc
        return gx, gw

    @numba.njit(cache=True)
    def _scatter_add_rows_nb(src, idx, out_rows):
        ncols = src.shape[1]
        out = np.zeros((out_rows, ncols))
        for j in range(idx.shape[0]):
            r = idx[j]
            for c in range(ncols):
                out[r, c] += src[j, c]
        return out

    def seg_sum_nb(x, indices, indptr):
        return _seg_sum_nb(np.ascontiguousarray(x), indices, indptr)

    def seg_mean_backward_nb(gy, indices, indptr, out_rows):
        return _seg_mean_backward_nb(np.ascontiguousarray(gy), indices, indptr, out_rows)

    def seg_weighted_sum_nb(x, indices, indptr, w):
        return _seg_weighted_sum_nb(np.ascontiguousarray(x), indices, indptr, w)

    def seg_weighted_sum_backward_nb(gy, x, indices, indptr, w):
        return _seg_weighted_sum_backward_nb(
            np.ascontiguousarray(gy), np.ascontiguousarray(x), indices, indptr, w
        )

    def scatter_add_rows_nb(src, idx, out_rows):
        return _scatter_add_rows_nb(np.ascontiguousarray(src), idx, out_rows)


if NUMBA_ENABLED:
    seg_sum = seg_sum_nb
    seg_mean_backward = seg_mean_backward_nb
    seg_weighted_sum = seg_weighted_sum_nb
    seg_weighted_sum_backward = seg_weighted_sum_backward_nb
    scatter_add_rows = scatter_add_rows_nb
else:
    seg_sum = seg_sum_np
    seg_mean_backward = seg_mean_backward_np
    seg_weighted_sum = seg_weighted_sum_np
    seg_weighted_sum_backward = seg_weighted_sum_backward_np
    scatter_add_rows = scatter_add_rows_np


def backend() -> str:
    """Name of the active kernel backend ("numba" or "numpy")."""
    return "numba" if NUMBA_ENABLED else "numpy"
