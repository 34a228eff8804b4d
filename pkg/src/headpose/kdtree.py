"""Exact 3-D k-d tree for nearest-neighbor queries.

Median-split construction, leaf buckets, branch-and-bound search.
Ties in distance are broken toward the lowest original point index,
so results match a brute-force scan exactly.
"""

from __future__ import annotations

import numpy as np

try:  # optional JIT for the hot traversal loop; results are identical
    from numba import njit as _njit
except ImportError:  # pragma: no cover
    _njit = None

_LEAF_SIZE = 16


class KdTree:
    def __init__(self, points: np.ndarray, leaf_size: int = _LEAF_SIZE):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError("points must be (N, 3)")
        if len(points) == 0:
            raise ValueError("empty point set")
        self.points = points
        self.leaf_size = max(1, leaf_size)
        # flat node arrays: internal nodes carry (dim, threshold, children);
        # leaves carry a slice of self.order
        self._dim = []
        self._thr = []
        self._left = []
        self._right = []
        self._lo = []
        self._hi = []
        self.order = np.arange(len(points))
        self._build(0, len(points))
        self._dim = np.array(self._dim)
        self._thr = np.array(self._thr)
        self._left = np.array(self._left)
        self._right = np.array(self._right)
        self._lo = np.array(self._lo)
        self._hi = np.array(self._hi)

    def _new_node(self):
        for arr in (self._dim, self._thr, self._left, self._right,
                    self._lo, self._hi):
            arr.append(-1)
        return len(self._dim) - 1

    def _build(self, lo: int, hi: int) -> int:
        node = self._new_node()
        if hi - lo <= self.leaf_size:
            self._lo[node], self._hi[node] = lo, hi
            return node
        seg = self.order[lo:hi]
        pts = self.points[seg]
        dim = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
        mid = (hi - lo) // 2
        part = np.argpartition(pts[:, dim], mid)
        self.order[lo:hi] = seg[part]
        thr = self.points[self.order[lo + mid], dim]
        self._dim[node] = dim
        self._thr[node] = thr
        self._left[node] = self._build(lo, lo + mid)
        self._right[node] = self._build(lo + mid, hi)
        return node

    def query_one(self, p) -> tuple[float, int]:
        """Nearest neighbor of a single point: (distance, index)."""
        p = np.asarray(p, dtype=np.float64)
        best_d2 = np.inf
        best_i = -1
        stack = [(0, 0.0)]
        pts, order = self.points, self.order
        while stack:
            node, plane_d2 = stack.pop()
            if plane_d2 > best_d2:
                continue
            dim = self._dim[node]
            if dim < 0:  # leaf
                seg = order[self._lo[node]:self._hi[node]]
                diff = pts[seg] - p
                d2 = np.einsum("ij,ij->i", diff, diff)
                j = int(np.argmin(d2))
                dj = d2[j]
                if dj < best_d2 or (dj == best_d2 and seg[j] < best_i):
                    # collect all ties within the leaf, keep lowest index
                    ties = seg[d2 == dj]
                    cand = int(ties.min())
                    if dj < best_d2 or cand < best_i:
                        best_d2, best_i = dj, cand
                continue
            delta = p[dim] - self._thr[node]
            near, far = ((self._left[node], self._right[node]) if delta < 0
                         else (self._right[node], self._left[node]))
            stack.append((far, delta * delta))
            stack.append((near, plane_d2))
        return float(np.sqrt(best_d2)), best_i

    def query(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest neighbors for an (M, 3) array: (distances, indices)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        if _query_batch_jit is not None:
            d2, idx = _query_batch_jit(self.points, self.order, self._dim,
                                       self._thr, self._left, self._right,
                                       self._lo, self._hi, pts)
            return np.sqrt(d2), idx
        dist = np.empty(len(pts))
        idx = np.empty(len(pts), dtype=np.int64)
        for k, p in enumerate(pts):
            dist[k], idx[k] = self.query_one(p)
        return dist, idx


def _query_batch_impl(points, order, ndim, nthr, nleft, nright, nlo, nhi, qpts):
    m = qpts.shape[0]
    out_d2 = np.empty(m)
    out_i = np.empty(m, dtype=np.int64)
    stack_node = np.empty(64, dtype=np.int64)
    stack_d2 = np.empty(64)
    for k in range(m):
        px, py, pz = qpts[k, 0], qpts[k, 1], qpts[k, 2]
        best_d2 = np.inf
        best_i = -1
        top = 0
        stack_node[0] = 0
        stack_d2[0] = 0.0
        top = 1
        while top > 0:
            top -= 1
            node = stack_node[top]
            if stack_d2[top] > best_d2:
                continue
            dim = ndim[node]
            if dim < 0:
                for j in range(nlo[node], nhi[node]):
                    i = order[j]
                    dx = points[i, 0] - px
                    dy = points[i, 1] - py
                    dz = points[i, 2] - pz
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < best_d2 or (d2 == best_d2 and i < best_i):
                        best_d2 = d2
                        best_i = i
                continue
            if dim == 0:
                delta = px - nthr[node]
            elif dim == 1:
                delta = py - nthr[node]
            else:
                delta = pz - nthr[node]
            if delta < 0:
                near, far = nleft[node], nright[node]
            else:
                near, far = nright[node], nleft[node]
            stack_node[top] = far
            stack_d2[top] = delta * delta
            top += 1
            stack_node[top] = near
            stack_d2[top] = 0.0
            top += 1
        out_d2[k] = best_d2
        out_i[k] = best_i
    return out_d2, out_i


_query_batch_jit = (_njit(cache=True)(_query_batch_impl)
                    if _njit is not None else None)


def brute_force_nearest(points: np.ndarray, p) -> tuple[float, int]:
    """Reference oracle: linear scan, lowest index wins ties."""
    diff = np.asarray(points, dtype=np.float64) - np.asarray(p, dtype=np.float64)
    d2 = np.einsum("ij,ij->i", diff, diff)
    i = int(np.argmin(d2))  # argmin returns the first (lowest) index on ties
    return float(np.sqrt(d2[i])), i
