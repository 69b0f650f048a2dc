"""Exact brute-force k-NN scoring over a feature bank."""

from __future__ import annotations

import time

import numpy as np

from ._validation import check_matrix, check_positive_int, check_vector
from .exceptions import InvalidInputError

EXACT_MATCH_TOL = 1e-12

# Extra candidates kept from the expanded-norm pass so that round-off in
# |a|^2 + |b|^2 - 2ab can never change the final neighbour set.
_CANDIDATE_MARGIN = 8


class SearchIndex:
    """Read-only view of a bank matrix with cached squared row norms."""

    def __init__(self, matrix):
        matrix = check_matrix(matrix, "bank", min_rows=1)
        matrix = np.array(matrix, dtype=np.float64, order="C", copy=True)
        matrix.setflags(write=False)
        self.matrix = matrix
        norms = np.einsum("ij,ij->i", matrix, matrix)
        norms.setflags(write=False)
        self.sq_norms = norms

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __repr__(self):
        return f"SearchIndex(n_rows={self.n_rows}, dim={self.dim})"


def _as_index(index) -> SearchIndex:
    if isinstance(index, SearchIndex):
        return index
    matrix = getattr(index, "matrix", index)
    return SearchIndex(matrix)


def _score_chunk(index: SearchIndex, Q: np.ndarray, k: int, exclude_exact: bool):
    """Scores for one chunk of queries; NaN marks queries with too few neighbours."""
    B = index.matrix
    n_rows = index.n_rows
    n_cand = min(n_rows, k + 1 + _CANDIDATE_MARGIN)
    if n_cand < n_rows:
        d2 = np.einsum("ij,ij->i", Q, Q)[:, None] + index.sq_norms[None, :] - 2.0 * (Q @ B.T)
        np.maximum(d2, 0.0, out=d2)
        cand = np.argpartition(d2, n_cand - 1, axis=1)[:, :n_cand]
    else:
        cand = np.broadcast_to(np.arange(n_rows), (Q.shape[0], n_rows))
    diff = B[cand] - Q[:, None, :]
    dist = np.sqrt(np.einsum("qcd,qcd->qc", diff, diff))
    # ascending distance, lowest row index first among ties
    order = np.lexsort((cand, dist), axis=1)
    dist = np.take_along_axis(dist, order, axis=1)

    start = np.zeros(Q.shape[0], dtype=np.int64)
    if exclude_exact:
        start[dist[:, 0] <= EXACT_MATCH_TOL] = 1
    out = np.full(Q.shape[0], np.nan)
    ok = start + k <= n_cand
    if ok.any():
        cols = start[ok, None] + np.arange(k)[None, :]
        out[ok] = np.take_along_axis(dist[ok], cols, axis=1).mean(axis=1)
    return out


def knn_score_batch(index, queries, k: int, exclude_exact: bool = False, *, chunk_size: int = 1024,
                    on_error: str = "raise") -> np.ndarray:
    """Mean L2 distance from each query to its ``k`` nearest bank rows.

    With ``exclude_exact`` at most one neighbour at distance <= 1e-12 is dropped
    before taking the ``k`` nearest. ``on_error="mark"`` returns NaN for queries
    that lack ``k`` usable neighbours instead of failing the whole batch.
    """
    index = _as_index(index)
    k = check_positive_int(k, "k")
    if on_error not in ("raise", "mark"):
        raise InvalidInputError(f"on_error must be 'raise' or 'mark', got {on_error!r}")
    Q = check_matrix(queries, "queries", n_features=index.dim)
    if k > index.n_rows:
        if on_error == "raise" or Q.shape[0] == 0:
            raise InvalidInputError(f"k={k} exceeds the bank size {index.n_rows}")
        return np.full(Q.shape[0], np.nan)
    chunk_size = check_positive_int(chunk_size, "chunk_size")
    out = np.empty(Q.shape[0])
    for lo in range(0, Q.shape[0], chunk_size):
        out[lo:lo + chunk_size] = _score_chunk(index, Q[lo:lo + chunk_size], k, exclude_exact)
    if on_error == "raise" and np.isnan(out).any():
        bad = int(np.flatnonzero(np.isnan(out))[0])
        raise InvalidInputError(
            f"query {bad}: only {index.n_rows - 1} neighbours remain after exact-match exclusion, k={k}"
        )
    return out


def knn_score(index, query, k: int, exclude_exact: bool = False) -> float:
    index = _as_index(index)
    q = check_vector(query, "query", size=index.dim)
    return float(knn_score_batch(index, q[None, :], k, exclude_exact)[0])


def bench_throughput(index, k: int = 4, duration: float = 1.0, *, batch_size: int = 256, p=None,
                     seed: int = 0) -> dict:
    """Measure single-query and batched search rates against ``index``.

    Each query stands for one frame with one object, so queries per second
    are reported as frames per second.
    """
    from .core import make_rng

    index = _as_index(index)
    k = min(check_positive_int(k, "k"), index.n_rows)
    rng = make_rng(seed, "bench")
    pool = index.matrix[rng.integers(0, index.n_rows, size=max(batch_size, 64))]
    pool = pool + rng.normal(scale=1e-3, size=pool.shape)
    budget = max(float(duration), 1e-3) / 2.0

    n_stream, t0 = 0, time.perf_counter()
    while True:
        knn_score_batch(index, pool[n_stream % len(pool)][None, :], k)
        n_stream += 1
        stream_elapsed = time.perf_counter() - t0
        if stream_elapsed >= budget:
            break

    n_batch, t0 = 0, time.perf_counter()
    while True:
        knn_score_batch(index, pool[:batch_size], k)
        n_batch += batch_size
        batch_elapsed = time.perf_counter() - t0
        if batch_elapsed >= budget:
            break

    return {
        "bank_size": index.n_rows,
        "d": index.dim,
        "k": k,
        "p": p,
        "batch_size": batch_size,
        "stream_queries": n_stream,
        "stream_seconds": stream_elapsed,
        "stream_fps": n_stream / stream_elapsed,
        "stream_ms_per_query": 1e3 * stream_elapsed / n_stream,
        "batch_queries": n_batch,
        "batch_seconds": batch_elapsed,
        "batch_fps": n_batch / batch_elapsed,
    }
