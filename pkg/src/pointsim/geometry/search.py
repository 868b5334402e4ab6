"""Object-aware nearest-neighbor search and voxel-grid downsampling."""
from __future__ import annotations

import numpy as np

from .types import Neighborhood, PointCloudFrame

_CHUNK = 512  # query rows per distance block, bounds the (chunk x n) matrix


def _sorted_knn(d2_block: np.ndarray, cand_idx: np.ndarray, k: int, r2: float | None):
    """Per row of d2_block: candidate indices of the k smallest squared
    distances, ascending, ties broken by lower global index."""
    rows = []
    for d2 in d2_block:
        order = np.lexsort((cand_idx, d2))[:k]
        if r2 is not None:
            order = order[d2[order] <= r2]
        rows.append(cand_idx[order])
    return rows


def _knn_grouped(sources: np.ndarray, queries: np.ndarray, group_members, k: int,
                 r: float | None) -> Neighborhood:
    """kNN where each query group searches one fixed candidate index set."""
    n = len(sources)
    lists = [None] * len(queries)
    r2 = None if r is None else float(r) ** 2
    for q_rows, cand_idx in group_members:
        if len(cand_idx) == 0:
            for q in q_rows:
                lists[q] = np.empty(0, dtype=np.int64)
            continue
        cand = sources[cand_idx]
        for start in range(0, len(q_rows), _CHUNK):
            chunk = q_rows[start:start + _CHUNK]
            diff = queries[chunk][:, None, :] - cand[None, :, :]
            d2 = np.einsum("qnd,qnd->qn", diff, diff)
            for q, neigh in zip(chunk, _sorted_knn(d2, cand_idx, k, r2)):
                lists[q] = neigh
    return Neighborhood.from_lists(lists, n)


def knn_points(sources: np.ndarray, source_ids: np.ndarray, queries: np.ndarray,
               query_ids: np.ndarray, k: int, r: float | None = None,
               same_object: bool = True) -> Neighborhood:
    """Array-level kNN restricted to same-object or cross-object sources.

    Results are sorted ascending by Euclidean distance with ties broken by
    lower source index. The radius filter, when given, is inclusive (<= r).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    sources = np.asarray(sources, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    source_ids = np.asarray(source_ids, dtype=np.int64)
    query_ids = np.asarray(query_ids, dtype=np.int64)
    if len(sources) == 0:
        raise ValueError("empty source")
    if len(queries) != len(query_ids):
        raise ValueError("queries and query_ids must align")

    groups = []
    for oid in np.unique(query_ids):
        q_rows = np.flatnonzero(query_ids == oid)
        mask = (source_ids == oid) if same_object else (source_ids != oid)
        groups.append((q_rows, np.flatnonzero(mask)))
    return _knn_grouped(sources, queries, groups, k, r)


def knn_same_object(frame: PointCloudFrame, queries: np.ndarray,
                    query_object_ids: np.ndarray, k: int) -> Neighborhood:
    """k nearest frame points sharing the query's object id (self included)."""
    return knn_points(frame.positions, frame.object_ids, queries, query_object_ids,
                      k, r=None, same_object=True)


def knn_cross_object(frame: PointCloudFrame, queries: np.ndarray,
                     query_object_ids: np.ndarray, k: int, r: float) -> Neighborhood:
    """k nearest frame points of other objects, then filtered to distance <= r."""
    if r <= 0:
        raise ValueError("r must be positive")
    return knn_points(frame.positions, frame.object_ids, queries, query_object_ids,
                      k, r=r, same_object=False)


def grid_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """Keep at most one point per voxel of the origin-anchored grid.

    The kept point is the one nearest its voxel centroid (ties: lowest
    index). Returns kept indices in ascending order.
    """
    points = np.asarray(points, dtype=np.float64)
    if voxel <= 0:
        raise ValueError("voxel must be positive")
    if len(points) == 0:
        raise ValueError("empty points")
    cells = np.floor(points / voxel).astype(np.int64)
    centroids = (cells + 0.5) * voxel
    d2 = ((points - centroids) ** 2).sum(axis=1)
    _, cell_of = np.unique(cells, axis=0, return_inverse=True)
    idx = np.arange(len(points))
    # winner per cell = first row after sorting by (cell, distance, index)
    order = np.lexsort((idx, d2, cell_of))
    first = np.ones(len(points), dtype=bool)
    first[1:] = cell_of[order][1:] != cell_of[order][:-1]
    kept = idx[order][first]
    kept.sort()
    return kept
