"""Static triangle-triangle intersection reporting over surface meshes.

Non-coplanar triangles intersect exactly when an edge of one passes through
the interior of the other, so the test is plane-side rejection followed by
six inclusive segment-triangle probes; near-coplanar survivors fall back to
an exact 2D overlap check in the dominant plane. Triangle pairs sharing a
vertex are skipped (they meet at the shared simplex by construction).
"""

from __future__ import annotations

import numpy as np

from .bvh import AABBTree


def _dot(a, b):
    return np.einsum("...k,...k->...", a, b)


def segment_triangle_hits(p, q, a, b, c, eps: float = 1e-12) -> np.ndarray:
    """Inclusive segment-vs-triangle intersection, batched; misses coplanar."""
    d = q - p
    e1 = b - a
    e2 = c - a
    h = np.cross(d, e2)
    det = _dot(e1, h)
    scale = np.linalg.norm(d, axis=-1) * np.linalg.norm(e1, axis=-1) * np.linalg.norm(
        e2, axis=-1
    )
    ok = np.abs(det) > eps * np.maximum(scale, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = p - a
        u = f * _dot(s, h)
        qv = np.cross(s, e1)
        v = f * _dot(d, qv)
        t = f * _dot(e2, qv)
    return (
        ok
        & (u >= -eps)
        & (v >= -eps)
        & (u + v <= 1.0 + eps)
        & (t >= -eps)
        & (t <= 1.0 + eps)
    )


def _coplanar_overlap_2d(tri_a: np.ndarray, tri_b: np.ndarray) -> bool:
    n = np.cross(tri_a[1] - tri_a[0], tri_a[2] - tri_a[0])
    drop = int(np.argmax(np.abs(n)))
    keep = [k for k in range(3) if k != drop]
    A = tri_a[:, keep]
    B = tri_b[:, keep]

    def seg_hit(p, q, r, s):
        d1 = q - p
        d2 = s - r
        den = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(den) < 1e-300:
            return False
        t = ((r[0] - p[0]) * d2[1] - (r[1] - p[1]) * d2[0]) / den
        u = ((r[0] - p[0]) * d1[1] - (r[1] - p[1]) * d1[0]) / den
        return -1e-12 <= t <= 1 + 1e-12 and -1e-12 <= u <= 1 + 1e-12

    def inside(pt, tri):
        sign = 0.0
        for k in range(3):
            e = tri[(k + 1) % 3] - tri[k]
            w = pt - tri[k]
            cr = e[0] * w[1] - e[1] * w[0]
            if sign == 0.0:
                sign = cr
            elif cr * sign < 0.0:
                return False
        return True

    for i in range(3):
        for j in range(3):
            if seg_hit(A[i], A[(i + 1) % 3], B[j], B[(j + 1) % 3]):
                return True
    return inside(A[0], B) or inside(B[0], A)


def tri_tri_intersections(tri_a: np.ndarray, tri_b: np.ndarray) -> np.ndarray:
    """Boolean per pair; inputs (n, 3, 3) vertex stacks."""
    n = len(tri_a)
    if n == 0:
        return np.zeros(0, dtype=bool)

    def plane_separated(t1, t2):
        nrm = np.cross(t1[:, 1] - t1[:, 0], t1[:, 2] - t1[:, 0])
        d = _dot(t2 - t1[:, 0:1], nrm[:, None, :])
        tol = 1e-12 * np.linalg.norm(nrm, axis=-1, keepdims=True) * (
            1.0 + np.abs(t2).max(axis=(1, 2), keepdims=False)[:, None]
        )
        return np.all(d > tol, axis=1) | np.all(d < -tol, axis=1)

    sep = plane_separated(tri_a, tri_b) | plane_separated(tri_b, tri_a)
    hit = np.zeros(n, dtype=bool)
    live = ~sep
    if live.any():
        A = tri_a[live]
        B = tri_b[live]
        h = np.zeros(live.sum(), dtype=bool)
        for i in range(3):
            p, q = A[:, i], A[:, (i + 1) % 3]
            h |= segment_triangle_hits(p, q, B[:, 0], B[:, 1], B[:, 2])
            p, q = B[:, i], B[:, (i + 1) % 3]
            h |= segment_triangle_hits(p, q, A[:, 0], A[:, 1], A[:, 2])
        # survivors with no crossing edge may still overlap coplanar
        for k in np.nonzero(~h)[0]:
            nrm = np.cross(A[k, 1] - A[k, 0], A[k, 2] - A[k, 0])
            nn = np.linalg.norm(nrm)
            if nn < 1e-300:
                continue
            dist = np.abs((B[k] - A[k, 0]) @ nrm) / nn
            span = max(np.abs(A[k]).max(), np.abs(B[k]).max(), 1.0)
            if dist.max() < 1e-9 * span:
                h[k] = _coplanar_overlap_2d(A[k], B[k])
        hit[live] = h
    return hit


def static_intersection_test(x: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """All intersecting surface triangle pairs (k, 2), excluding shared-vertex pairs."""
    if len(tris) == 0:
        return np.empty((0, 2), dtype=np.int64)
    pts = x[tris]
    tree = AABBTree(pts.min(axis=1), pts.max(axis=1))
    ai, bi = tree.query(pts.min(axis=1), pts.max(axis=1))
    keep = ai < bi
    ai, bi = ai[keep], bi[keep]
    ta, tb = tris[ai], tris[bi]
    shared = (
        (ta[:, 0:1] == tb) | (ta[:, 1:2] == tb) | (ta[:, 2:3] == tb)
    ).any(axis=1)
    ai, bi = ai[~shared], bi[~shared]
    hit = tri_tri_intersections(x[tris[ai]], x[tris[bi]])
    return np.stack([ai[hit], bi[hit]], axis=1)
