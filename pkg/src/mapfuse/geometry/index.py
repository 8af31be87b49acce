"""k-nearest-neighbour and radius queries with deterministic ordering."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..errors import EmptyInputError, ParameterError


class SpatialIndex:
    """Read-only KD-tree over a point array.

    Results are sorted by ascending distance; equal distances are ordered by
    ascending point index, so queries are reproducible regardless of how the
    tree happens to visit its leaves.
    """

    def __init__(self, points):
        points = np.asarray(getattr(points, "points", points), dtype=float)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ParameterError("SpatialIndex expects an (N, 3) point array")
        if len(points) == 0:
            raise EmptyInputError("cannot index an empty cloud")
        self.points = points
        self._tree = cKDTree(points)

    def __len__(self):
        return len(self.points)

    def knn(self, queries, k):
        """Indices and distances of the ``min(k, N)`` nearest points.

        ``queries`` may be a single point (returns 1-d arrays) or an (M, 3)
        array (returns (M, k) arrays).
        """
        queries = np.asarray(queries, dtype=float)
        single = queries.ndim == 1
        q = np.atleast_2d(queries)
        if k < 1:
            raise ParameterError("k must be >= 1")
        n = len(self.points)
        k = min(int(k), n)
        m = min(k + 1, n)
        _, idx = self._tree.query(q, k=m)
        idx = np.asarray(idx).reshape(len(q), m)
        d2 = self._sqdist(q, idx)
        order = np.lexsort((idx, d2), axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        d2 = np.take_along_axis(d2, order, axis=1)
        if m > k:
            # a tie across the k-th boundary means points outside the fetched
            # set may share that distance; resolve those rows exhaustively
            for row in np.flatnonzero(d2[:, k] <= d2[:, k - 1]):
                idx_row, d2_row = self._resolve_ties(q[row], k, d2[row, k - 1])
                idx[row, :k] = idx_row
                d2[row, :k] = d2_row
            idx, d2 = idx[:, :k], d2[:, :k]
        dist = np.sqrt(d2)
        if single:
            return idx[0], dist[0]
        return idx, dist

    def nearest(self, queries):
        """Single nearest neighbour: (indices (M,), distances (M,))."""
        idx, dist = self.knn(np.atleast_2d(queries), 1)
        return idx[:, 0], dist[:, 0]

    def radius(self, query, r):
        """Indices within distance ``r`` of one query point, sorted."""
        query = np.asarray(query, dtype=float)
        idx = np.asarray(self._tree.query_ball_point(query, r), dtype=np.int64)
        if len(idx) == 0:
            return idx
        d2 = np.sum((self.points[idx] - query) ** 2, axis=1)
        return idx[np.lexsort((idx, d2))]

    def radius_lists(self, queries, r):
        """Unsorted neighbour index lists for many queries (bulk helper)."""
        return self._tree.query_ball_point(np.asarray(queries, dtype=float), r)

    def _sqdist(self, q, idx):
        diff = self.points[idx] - q[:, None, :]
        return np.einsum("mkc,mkc->mk", diff, diff)

    def _resolve_ties(self, query, k, d2_k):
        r = np.sqrt(d2_k) * (1.0 + 1e-9) + 1e-12
        cand = np.asarray(self._tree.query_ball_point(query, r), dtype=np.int64)
        d2 = np.sum((self.points[cand] - query) ** 2, axis=1)
        order = np.lexsort((cand, d2))[:k]
        return cand[order], d2[order]
