"""A small exact k-d tree compiled with numba.

Used for the per-scan nearest-surface-point queries.  Voxel-centre queries
arrive in key order, so consecutive queries are neighbours; each search is
seeded with the previous query's answer, which makes the pruning bound tight
from the first node on.  Batches are split into fixed chunks that run on
numba's thread pool.  Ties are broken towards the lower point index, as a
linear scan with ``argmin`` would.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

# Prefer OpenMP: older TBB builds are rejected by numba with a warning.
nb.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

_LEAF = 32
_CHUNK = 2048  # queries per parallel work item


@nb.njit(cache=True)
def _build(points, leaf_size):
    n = points.shape[0]
    perm = np.arange(n)
    cap = 2 * n + 1  # every leaf holds at least one point
    lo = np.empty((cap, 3))
    hi = np.empty((cap, 3))
    start = np.empty(cap, dtype=np.int64)
    end = np.empty(cap, dtype=np.int64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    count = 1
    start[0] = 0
    end[0] = n
    stack = np.empty(cap, dtype=np.int64)
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        s = start[node]
        e = end[node]
        for a in range(3):
            lo[node, a] = np.inf
            hi[node, a] = -np.inf
        for i in range(s, e):
            p = perm[i]
            for a in range(3):
                v = points[p, a]
                if v < lo[node, a]:
                    lo[node, a] = v
                if v > hi[node, a]:
                    hi[node, a] = v
        if e - s <= leaf_size:
            continue
        dim = 0
        for a in range(1, 3):
            if hi[node, a] - lo[node, a] > hi[node, dim] - lo[node, dim]:
                dim = a
        if hi[node, dim] <= lo[node, dim]:
            continue  # all points coincide
        split = 0.5 * (lo[node, dim] + hi[node, dim])
        i = s
        j = e - 1
        while i <= j:
            if points[perm[i], dim] < split:
                i += 1
            else:
                tmp = perm[i]
                perm[i] = perm[j]
                perm[j] = tmp
                j -= 1
        if i == s or i == e:
            continue
        left[node] = count
        right[node] = count + 1
        start[count] = s
        end[count] = i
        start[count + 1] = i
        end[count + 1] = e
        stack[top] = count
        stack[top + 1] = count + 1
        top += 2
        count += 2
    return perm, lo[:count].copy(), hi[:count].copy(), start[:count].copy(), end[:count].copy(), left[:count].copy(), right[:count].copy()


@nb.njit(cache=True, inline="always")
def _box_d2(lo, hi, node, x, y, z):
    d2 = 0.0
    if x < lo[node, 0]:
        d2 += (lo[node, 0] - x) ** 2
    elif x > hi[node, 0]:
        d2 += (x - hi[node, 0]) ** 2
    if y < lo[node, 1]:
        d2 += (lo[node, 1] - y) ** 2
    elif y > hi[node, 1]:
        d2 += (y - hi[node, 1]) ** 2
    if z < lo[node, 2]:
        d2 += (lo[node, 2] - z) ** 2
    elif z > hi[node, 2]:
        d2 += (z - hi[node, 2]) ** 2
    return d2


@nb.njit(cache=True, parallel=True)
def _nearest(tp, perm, lo, hi, start, end, left, right, queries):
    """``tp`` holds the points in tree order (``points[perm]``).

    Queries are split into fixed chunks searched in parallel; the warm start
    chains only within a chunk, so results do not depend on thread count.
    """
    m = queries.shape[0]
    dist = np.empty(m)
    index = np.empty(m, dtype=np.int64)
    nchunks = (m + _CHUNK - 1) // _CHUNK
    for c in nb.prange(nchunks):
        _nearest_chunk(tp, perm, lo, hi, start, end, left, right, queries, c * _CHUNK, min(m, (c + 1) * _CHUNK), dist, index)
    return dist, index


@nb.njit(cache=True)
def _nearest_chunk(tp, perm, lo, hi, start, end, left, right, queries, r0, r1, dist, index):
    stack = np.empty(lo.shape[0] + 1, dtype=np.int64)
    guess = 0
    for r in range(r0, r1):
        x = queries[r, 0]
        y = queries[r, 1]
        z = queries[r, 2]
        best = guess
        best_d2 = (tp[best, 0] - x) ** 2 + (tp[best, 1] - y) ** 2 + (tp[best, 2] - z) ** 2
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            if _box_d2(lo, hi, node, x, y, z) > best_d2:
                continue
            a = left[node]
            if a < 0:
                for i in range(start[node], end[node]):
                    d2 = (tp[i, 0] - x) ** 2 + (tp[i, 1] - y) ** 2 + (tp[i, 2] - z) ** 2
                    if d2 < best_d2 or (d2 == best_d2 and perm[i] < perm[best]):
                        best_d2 = d2
                        best = i
                continue
            b = right[node]
            da = _box_d2(lo, hi, a, x, y, z)
            db = _box_d2(lo, hi, b, x, y, z)
            if da <= db:
                stack[top] = b
                stack[top + 1] = a
            else:
                stack[top] = a
                stack[top + 1] = b
            top += 2
        dist[r] = math.sqrt(best_d2)
        index[r] = perm[best]
        guess = best


@nb.njit(cache=True, inline="always")
def _knn_insert(best_d2, best_i, n, k, d2, p):
    """Insert ``(d2, p)`` into the sorted list of length ``n``; returns the new length."""
    if n == k and (d2 > best_d2[k - 1] or (d2 == best_d2[k - 1] and p > best_i[k - 1])):
        return n
    pos = n if n < k else k - 1
    while pos > 0 and (best_d2[pos - 1] > d2 or (best_d2[pos - 1] == d2 and best_i[pos - 1] > p)):
        best_d2[pos] = best_d2[pos - 1]
        best_i[pos] = best_i[pos - 1]
        pos -= 1
    best_d2[pos] = d2
    best_i[pos] = p
    return n + 1 if n < k else n


@nb.njit(cache=True, parallel=True)
def _knn(tp, perm, lo, hi, start, end, left, right, queries, k, radius):
    """``k`` nearest points within ``radius`` (inclusive); ``-1`` pads."""
    m = queries.shape[0]
    out = np.full((m, k), -1, dtype=np.int64)
    nchunks = (m + _CHUNK - 1) // _CHUNK
    for c in nb.prange(nchunks):
        _knn_chunk(tp, perm, lo, hi, start, end, left, right, queries, k, radius, c * _CHUNK, min(m, (c + 1) * _CHUNK), out)
    return out


@nb.njit(cache=True)
def _knn_chunk(tp, perm, lo, hi, start, end, left, right, queries, k, radius, r0, r1, out):
    best_d2 = np.empty(k)
    best_i = np.empty(k, dtype=np.int64)  # tree-order positions
    stack = np.empty(lo.shape[0] + 1, dtype=np.int64)
    r2 = radius * radius
    for r in range(r0, r1):
        x = queries[r, 0]
        y = queries[r, 1]
        z = queries[r, 2]
        n = 0
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            bound = best_d2[k - 1] if n == k else r2
            if _box_d2(lo, hi, node, x, y, z) > bound:
                continue
            a = left[node]
            if a < 0:
                for i in range(start[node], end[node]):
                    d2 = (tp[i, 0] - x) ** 2 + (tp[i, 1] - y) ** 2 + (tp[i, 2] - z) ** 2
                    if d2 <= r2:
                        n = _knn_insert(best_d2, best_i, n, k, d2, i)
                continue
            b = right[node]
            da = _box_d2(lo, hi, a, x, y, z)
            db = _box_d2(lo, hi, b, x, y, z)
            if da <= db:
                stack[top] = b
                stack[top + 1] = a
            else:
                stack[top] = a
                stack[top + 1] = b
            top += 2
        for c in range(n):
            out[r, c] = perm[best_i[c]]


class KDTree:
    """Exact nearest-neighbour index over an ``(N, 3)`` point array."""

    def __init__(self, points, leaf_size: int = _LEAF):
        pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
        if len(pts) == 0:
            raise ValueError("cannot index an empty point set")
        self.points = pts
        nodes = _build(pts, leaf_size)
        self._tree_points = np.ascontiguousarray(pts[nodes[0]])
        self._nodes = nodes

    def __len__(self):
        return len(self.points)

    def query(self, q) -> tuple[np.ndarray, np.ndarray]:
        """Distance to and index of the nearest point, for one or many queries."""
        q = np.asarray(q, dtype=float)
        flat = np.ascontiguousarray(q.reshape(-1, 3))
        d, i = _nearest(self._tree_points, *self._nodes, flat)
        if q.ndim == 1:
            return d[0], i[0]
        return d.reshape(q.shape[:-1]), i.reshape(q.shape[:-1])

    def query_knn(self, q, k: int, radius: float) -> np.ndarray:
        """Indices of up to ``k`` nearest points within ``radius``, nearest first; -1 pads."""
        flat = np.ascontiguousarray(np.asarray(q, dtype=float).reshape(-1, 3))
        return _knn(self._tree_points, *self._nodes, flat, int(k), float(radius))

    def self_knn(self, k: int, radius: float) -> np.ndarray:
        """``query_knn`` of the indexed points themselves (visited in tree order for locality)."""
        perm = self._nodes[0]
        found = _knn(self._tree_points, *self._nodes, self._tree_points, int(k), float(radius))
        out = np.empty_like(found)
        out[perm] = found
        return out
