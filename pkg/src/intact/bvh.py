"""Linear BVH over axis-aligned boxes, built on a Morton-sorted primitive order.

Nodes are stored in post-order (children strictly before parents), which makes
refit a single bottom-up sweep and lets levels be processed with array ops.
"""

from __future__ import annotations

import numpy as np

_U = np.uint64


def _expand_bits(v: np.ndarray) -> np.ndarray:
    """Spread the low 21 bits of each value so they occupy every third bit."""
    v = v.astype(np.uint64)
    v = (v | (v << _U(32))) & _U(0x1F00000000FFFF)
    v = (v | (v << _U(16))) & _U(0x1F0000FF0000FF)
    v = (v | (v << _U(8))) & _U(0x100F00F00F00F00F)
    v = (v | (v << _U(4))) & _U(0x10C30C30C30C30C3)
    v = (v | (v << _U(2))) & _U(0x1249249249249249)
    return v


def morton_codes(points: np.ndarray) -> np.ndarray:
    """63-bit interleaved codes for points normalized into the unit cube.

    Returned as int64 (the codes fit in 63 bits) so downstream comparisons
    and searches stay in exact integer arithmetic.
    """
    lo = points.min(axis=0)
    span = points.max(axis=0) - lo
    span[span == 0.0] = 1.0
    q = np.clip(((points - lo) / span) * (2**21 - 1), 0, 2**21 - 1).astype(np.uint64)
    codes = (
        (_expand_bits(q[:, 0]) << _U(2))
        | (_expand_bits(q[:, 1]) << _U(1))
        | _expand_bits(q[:, 2])
    )
    return codes.astype(np.int64)


def _find_split(codes: np.ndarray, lo: int, hi: int) -> int:
    first = int(codes[lo])
    last = int(codes[hi - 1])
    if first == last:
        return (lo + hi) // 2
    split_bit = (first ^ last).bit_length() - 1
    mask = 1 << split_bit
    target = np.int64((first & ~((mask << 1) - 1)) | mask)
    return lo + int(np.searchsorted(codes[lo:hi], target, side="left"))


class AABBTree:
    """Static-topology BVH; box geometry is swapped in via refit."""

    def __init__(self, boxes_lo: np.ndarray, boxes_hi: np.ndarray):
        m = len(boxes_lo)
        self.n_prims = m
        if m == 0:
            self.left = np.empty(0, dtype=np.int64)
            self.right = np.empty(0, dtype=np.int64)
            self.prim = np.empty(0, dtype=np.int64)
            self.levels = []
            self.lo = np.empty((0, 3))
            self.hi = np.empty((0, 3))
            self.root = -1
            return
        centers = 0.5 * (np.asarray(boxes_lo) + np.asarray(boxes_hi))
        codes = morton_codes(centers)
        order = np.argsort(codes, kind="stable")
        codes = codes[order]

        left = np.empty(2 * m - 1, dtype=np.int64)
        right = np.empty(2 * m - 1, dtype=np.int64)
        prim = np.full(2 * m - 1, -1, dtype=np.int64)
        height = np.zeros(2 * m - 1, dtype=np.int64)
        count = 0
        results: list[int] = []
        stack: list[tuple[int, int, int]] = [(0, m, -1)]
        while stack:
            a, b, mid = stack.pop()
            if b - a == 1:
                prim[count] = order[a]
                left[count] = right[count] = -1
                results.append(count)
                count += 1
                continue
            if mid < 0:
                mid = _find_split(codes, a, b)
                if not a < mid < b:
                    mid = (a + b) // 2
                stack.append((a, b, mid))
                stack.append((mid, b, -1))
                stack.append((a, mid, -1))
                continue
            r = results.pop()
            l = results.pop()
            left[count] = l
            right[count] = r
            height[count] = 1 + max(height[l], height[r])
            results.append(count)
            count += 1
        self.root = results.pop()
        assert count == 2 * m - 1
        self.left = left
        self.right = right
        self.prim = prim
        # node indices grouped by height: levels[0] is all leaves
        order_h = np.argsort(height, kind="stable")
        bounds = np.searchsorted(height[order_h], np.arange(height.max() + 2))
        self.levels = [
            order_h[bounds[i]:bounds[i + 1]] for i in range(height.max() + 1)
        ]
        self.lo = np.empty((2 * m - 1, 3))
        self.hi = np.empty((2 * m - 1, 3))
        self.refit(boxes_lo, boxes_hi)

    def refit(self, boxes_lo: np.ndarray, boxes_hi: np.ndarray) -> None:
        """Recompute node boxes for current primitive boxes; topology is kept."""
        if self.n_prims == 0:
            return
        leaves = self.levels[0]
        self.lo[leaves] = boxes_lo[self.prim[leaves]]
        self.hi[leaves] = boxes_hi[self.prim[leaves]]
        for idxs in self.levels[1:]:
            l, r = self.left[idxs], self.right[idxs]
            self.lo[idxs] = np.minimum(self.lo[l], self.lo[r])
            self.hi[idxs] = np.maximum(self.hi[l], self.hi[r])

    def query(self, qlo: np.ndarray, qhi: np.ndarray):
        """All (query index, primitive index) box overlaps, frontier descent."""
        nq = len(qlo)
        if self.n_prims == 0 or nq == 0:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        out_q: list[np.ndarray] = []
        out_p: list[np.ndarray] = []
        q = np.arange(nq, dtype=np.int64)
        n = np.full(nq, self.root, dtype=np.int64)
        while len(q):
            hit = np.all(qlo[q] <= self.hi[n], axis=1) & np.all(
                qhi[q] >= self.lo[n], axis=1
            )
            q, n = q[hit], n[hit]
            at_leaf = self.prim[n] >= 0
            if at_leaf.any():
                out_q.append(q[at_leaf])
                out_p.append(self.prim[n[at_leaf]])
            qi, ni = q[~at_leaf], n[~at_leaf]
            q = np.concatenate([qi, qi])
            n = np.concatenate([self.left[ni], self.right[ni]])
        if not out_q:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        return np.concatenate(out_q), np.concatenate(out_p)


def boxes_for_triangles(x: np.ndarray, tris: np.ndarray, pad: float = 0.0):
    pts = x[tris]
    return pts.min(axis=1) - pad, pts.max(axis=1) + pad


def boxes_for_edges(x: np.ndarray, edges: np.ndarray, pad: float = 0.0):
    pts = x[edges]
    return pts.min(axis=1) - pad, pts.max(axis=1) + pad


def boxes_for_points(x: np.ndarray, ids: np.ndarray, pad: float = 0.0):
    pts = x[ids]
    return pts - pad, pts + pad


def swept_boxes(lo0, hi0, lo1, hi1, pad: float = 0.0):
    """Union of start and end boxes, inflated by pad on all sides."""
    return np.minimum(lo0, lo1) - pad, np.maximum(hi0, hi1) + pad
