"""Exact Euclidean first/second nearest-neighbour search by linear scan.

The batch search computes every query-to-point distance with the same
arithmetic as :func:`distance`, so results are bitwise reproducible however
the queries are split across workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import DimensionError, ReNNError

CHUNK_ROWS = 2048


class InsufficientPointsError(ReNNError, ValueError):
    pass


class TwoNearest(NamedTuple):
    first_index: int
    first_distance: float
    second_index: int
    second_distance: float


@dataclass
class NearestPairs:
    """Column form of a batch of :class:`TwoNearest` records."""

    first_index: np.ndarray
    first_distance: np.ndarray
    second_index: np.ndarray
    second_distance: np.ndarray

    def __len__(self) -> int:
        return len(self.first_index)

    def row(self, k: int) -> TwoNearest:
        return TwoNearest(
            int(self.first_index[k]),
            float(self.first_distance[k]),
            int(self.second_index[k]),
            float(self.second_distance[k]),
        )

    def rows(self) -> list[TwoNearest]:
        return [self.row(k) for k in range(len(self))]


def distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.sqrt(np.sum(diff * diff)))


def pairwise_distances(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    """``(m, k)`` Euclidean distance matrix."""
    diff = queries[:, None, :] - points[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def _scan(queries: np.ndarray, points: np.ndarray):
    dist = pairwise_distances(queries, points)
    rows = np.arange(len(queries))
    # argmin returns the first occurrence, which is the lowest-index tie-break
    first = np.argmin(dist, axis=1)
    d1 = dist[rows, first]
    dist[rows, first] = np.inf
    second = np.argmin(dist, axis=1)
    d2 = dist[rows, second]
    return first, d1, second, d2


def _check(queries, points):
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) < 2:
        raise InsufficientPointsError(f"need at least 2 points, got {len(points)}")
    if queries.ndim == 1:
        queries = queries.reshape(1, -1)
    if queries.shape[1] != points.shape[1] and len(queries):
        raise DimensionError(f"dimension mismatch: {queries.shape[1]} vs {points.shape[1]}")
    return queries, points


def batch_two_nearest_arrays(queries, points, workers: int = 1) -> NearestPairs:
    queries, points = _check(queries, points)
    m = len(queries)
    if m == 0:
        empty_i = np.empty(0, dtype=np.int64)
        empty_d = np.empty(0, dtype=np.float64)
        return NearestPairs(empty_i, empty_d, empty_i.copy(), empty_d.copy())

    # bound the (rows, k, D) temporary
    rows_per_chunk = max(1, min(CHUNK_ROWS, (1 << 22) // max(1, points.size)))
    bounds = [(s, min(s + rows_per_chunk, m)) for s in range(0, m, rows_per_chunk)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _scan(queries[b[0]:b[1]], points), bounds))
    else:
        parts = [_scan(queries[s:e], points) for s, e in bounds]

    first, d1, second, d2 = (np.concatenate(col) for col in zip(*parts))
    return NearestPairs(first.astype(np.int64), d1, second.astype(np.int64), d2)


def batch_two_nearest(queries, points, workers: int = 1) -> list[TwoNearest]:
    return batch_two_nearest_arrays(queries, points, workers).rows()


def two_nearest(query, points) -> TwoNearest:
    """First and second nearest of ``points`` to ``query``; ties go to the lower index."""
    query = np.asarray(query, dtype=np.float64).reshape(1, -1)
    return batch_two_nearest_arrays(query, points).row(0)


def two_nearest_oracle(query, points) -> TwoNearest:
    """Reference implementation: compute every distance, stable-sort, take two."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        raise InsufficientPointsError(f"need at least 2 points, got {len(points)}")
    dists = [distance(query, p) for p in points]
    order = sorted(range(len(dists)), key=lambda j: (dists[j], j))
    i, j = order[0], order[1]
    return TwoNearest(i, dists[i], j, dists[j])
