"""Exact flat similarity search and per-class centroids.

Distances are computed in float64 with a fixed reduction order, so repeated
identical queries return identical scores regardless of batch fan-out. L2
scores are squared distances (ascending-better); cosine scores are
similarities (descending-better). Stored vectors are never normalized; cosine
queries use per-row norms precomputed at build time.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .model import EmbeddingMatrix

Metric = Literal["l2", "cosine"]
METRICS: tuple[str, ...] = ("l2", "cosine")


@dataclass(frozen=True)
class Neighbor:
    """One retrieved database row."""

    row: int
    record_id: str
    label: int | None
    score: float


@dataclass(frozen=True, eq=False)
class FlatIndex:
    """Immutable exhaustive-scan index over an embedding matrix."""

    matrix: EmbeddingMatrix
    metric: Metric
    data64: np.ndarray = field(repr=False)
    norms: np.ndarray | None = field(repr=False, default=None)

    @property
    def count(self) -> int:
        return self.matrix.count

    @property
    def dimension(self) -> int:
        return self.matrix.dimension


def build_flat_index(matrix: EmbeddingMatrix, metric: Metric = "l2") -> FlatIndex:
    """Build a flat index; O(N*D) norm precomputation under cosine only."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric: {metric!r}")
    data64 = matrix.data.astype(np.float64)
    if data64.size and not np.isfinite(data64).all():
        raise ValueError("matrix contains NaN/Inf")
    norms: np.ndarray | None = None
    if metric == "cosine":
        norms = np.sqrt(np.sum(data64 * data64, axis=1))
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise ValueError(
                f"cosine metric rejects zero-norm rows (first at row {zero[0]})"
            )
    return FlatIndex(matrix=matrix, metric=metric, data64=data64, norms=norms)


def _scores(index: FlatIndex, query: np.ndarray) -> np.ndarray:
    """Raw metric scores of every row against one query."""
    if index.metric == "l2":
        diff = index.data64 - query
        return np.sum(diff * diff, axis=1)
    qnorm = float(np.sqrt(np.sum(query * query)))
    if qnorm == 0.0:
        raise ValueError("cosine metric rejects a zero-norm query")
    return (index.data64 @ query) / (index.norms * qnorm)


def search_topk(index: FlatIndex, query: np.ndarray, k: int) -> list[Neighbor]:
    """Return the min(k, N) best rows, ties broken by ascending row index.

    The ordering is identical to sorting every row by (score, row); the
    partition step only prunes rows strictly worse than the k-th score.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != index.dimension:
        raise ValueError(
            f"query dimension {query.shape[0]} != index dimension {index.dimension}"
        )
    if not np.isfinite(query).all():
        raise ValueError("query contains NaN/Inf")
    n = index.count
    if n == 0:
        return []

    scores = _scores(index, query)
    # Ascending sort keys: negate similarities so "best" is always smallest.
    keys = scores if index.metric == "l2" else -scores

    if k < n:
        kth = np.partition(keys, k - 1)[k - 1]
        cand = np.flatnonzero(keys <= kth)
    else:
        cand = np.arange(n)
    order = cand[np.lexsort((cand, keys[cand]))][: min(k, n)]

    mat = index.matrix
    return [
        Neighbor(row=int(r), record_id=mat.ids[r], label=mat.labels[r],
                 score=float(scores[r]))
        for r in order
    ]


def search_topk_batch(
    index: FlatIndex,
    queries: np.ndarray | Sequence[np.ndarray],
    k: int,
    threads: int = 1,
) -> list[list[Neighbor]]:
    """Search many queries, reassembling results in query order.

    Per-query arithmetic is independent, so results do not depend on the
    thread count.
    """
    qs = [np.asarray(q, dtype=np.float64).reshape(-1) for q in queries]
    if threads <= 1 or len(qs) < 2:
        return [search_topk(index, q, k) for q in qs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda q: search_topk(index, q, k), qs))


@dataclass(frozen=True, eq=False)
class CentroidSet:
    """Arithmetic-mean embedding per class, with member counts."""

    labels: tuple[int, ...]  # ascending
    vectors: np.ndarray  # (C, D) float64
    counts: tuple[int, ...]

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]


def class_centroids(matrix: EmbeddingMatrix) -> CentroidSet:
    """Mean vector per label over a fully labeled matrix."""
    for i, label in enumerate(matrix.labels):
        if label is None:
            raise ValueError(f"unlabeled row {i} ({matrix.ids[i]})")
    if matrix.count == 0:
        return CentroidSet(labels=(), vectors=np.zeros((0, matrix.dimension)), counts=())
    labels = np.asarray(matrix.labels, dtype=np.int64)
    uniq = np.unique(labels)
    data64 = matrix.data.astype(np.float64)
    vectors = np.empty((uniq.size, matrix.dimension), dtype=np.float64)
    counts = []
    for i, lab in enumerate(uniq):
        rows = data64[labels == lab]
        vectors[i] = rows.mean(axis=0)
        counts.append(rows.shape[0])
    return CentroidSet(labels=tuple(int(v) for v in uniq), vectors=vectors,
                       counts=tuple(counts))
