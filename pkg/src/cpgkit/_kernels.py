"""Hot all-pairs kernels, compiled with numba when available.

Set ``CPGKIT_NO_NUMBA=1`` to force the pure-numpy path. Both paths are
always importable (``*_numpy`` / ``*_numba``) so tests and the benchmark
can compare them; the unsuffixed names dispatch to the active one.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("CPGKIT_NO_NUMBA", "").lower() in ("1", "true", "yes")

try:
    import numba as nb
except ImportError:  # pragma: no cover - numba is optional
    nb = None

HAS_NUMBA = nb is not None
USE_NUMBA = HAS_NUMBA and not _DISABLED

njit_kwargs = {"nogil": True, "cache": True}


# -- numpy -------------------------------------------------------------------

def hb_matrix_numpy(clocks: np.ndarray, threads: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """``out[i, j]`` iff vertex i happens before vertex j.

    ``clocks`` is (n, T) with thread t in column t-1, ``threads`` holds
    0-based columns. i precedes j iff j's clock has seen past i's index.
    """
    if clocks.shape[0] == 0:
        return np.zeros((0, 0), dtype=np.bool_)
    return clocks[:, threads].T > indices[:, None]


def transitive_closure_numpy(adj: np.ndarray) -> np.ndarray:
    reach = adj.astype(np.bool_, copy=True)
    for k in range(reach.shape[0]):
        reach |= reach[:, k, None] & reach[k, None, :]
    return reach


def data_pairs_numpy(hb: np.ndarray, writers: np.ndarray, readers: np.ndarray) -> np.ndarray:
    """(writer, reader) pairs where the writer is hb-maximal among writers preceding the reader."""
    out = []
    if writers.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    ww = hb[np.ix_(writers, writers)]
    for b in readers:
        mask = hb[writers, b]
        if not mask.any():
            continue
        dominated = ww[:, mask].any(axis=1)
        for w in writers[mask & ~dominated]:
            out.append((w, b))
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


# -- numba -------------------------------------------------------------------

if HAS_NUMBA:

    @nb.njit(**njit_kwargs)
    def hb_matrix_numba(clocks, threads, indices):
        n = clocks.shape[0]
        out = np.zeros((n, n), dtype=np.bool_)
        for i in range(n):
            col = threads[i]
            idx = indices[i]
            for j in range(n):
                out[i, j] = clocks[j, col] > idx
        return out

    @nb.njit(**njit_kwargs)
    def transitive_closure_numba(adj):
        n = adj.shape[0]
        reach = adj.copy()
        for k in range(n):
            for i in range(n):
                if reach[i, k]:
                    for j in range(n):
                        if reach[k, j]:
                            reach[i, j] = True
        return reach

    @nb.njit(**njit_kwargs)
    def data_pairs_numba(hb, writers, readers):
        nw = writers.size
        out = np.empty((nw * readers.size, 2), dtype=np.int64)
        cand = np.empty(nw, dtype=np.int64)
        k = 0
        for r in range(readers.size):
            b = readers[r]
            m = 0
            for i in range(nw):
                if hb[writers[i], b]:
                    cand[m] = writers[i]
                    m += 1
            for i in range(m):
                a = cand[i]
                dominated = False
                for j in range(m):
                    if hb[a, cand[j]]:
                        dominated = True
                        break
                if not dominated:
                    out[k, 0] = a
                    out[k, 1] = b
                    k += 1
        return out[:k]

else:  # pragma: no cover
    hb_matrix_numba = hb_matrix_numpy
    transitive_closure_numba = transitive_closure_numpy
    data_pairs_numba = data_pairs_numpy


if USE_NUMBA:
    hb_matrix = hb_matrix_numba
    transitive_closure = transitive_closure_numba
    data_pairs = data_pairs_numba
else:
    hb_matrix = hb_matrix_numpy
    transitive_closure = transitive_closure_numpy
    data_pairs = data_pairs_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
