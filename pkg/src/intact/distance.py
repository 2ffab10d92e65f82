"""Unsigned distances and gradients for vertex-face and edge-edge pairs.

All kernels are batched over leading axis n. The 12-vector gradient of an
unsigned pair distance factors as (signed witness weights) x (unit direction
between the witness points), which is the analytic gradient of the active
region's closed-form distance; the four 3-vector sub-blocks always sum to zero.
"""

from __future__ import annotations

import dataclasses
from enum import IntEnum

import numpy as np

# Edges closer to parallel than this (cross norm relative to length product)
# take the point-edge fallback path.
EE_PARALLEL_TOL = 1e-10

# Distances below this are treated as coincident geometry: undefined direction.
DEGENERATE_DISTANCE = 1e-30

# Relative floor: the direction (p - closest)/d loses all significant digits
# to cancellation once d falls within ~1e-12 of the coordinate magnitude.
DEGENERATE_RELATIVE = 1e-12


class PairKind(IntEnum):
    VERTEX_FACE = 0
    EDGE_EDGE = 1


@dataclasses.dataclass
class DistanceEval:
    """Distance, its 12-gradient, signed witness weights, and a degeneracy flag."""

    d: float
    grad: np.ndarray       # (12,) stacked over the 4 vertices
    weights: np.ndarray    # (4,) signed: positive for primitive A, negative for B
    degenerate: bool


def _dot(a, b):
    return np.einsum("...k,...k->...", a, b)


def point_triangle_weights(p, a, b, c):
    """Barycentric weights of the closest point on triangle (a,b,c) to p.

    Standard closest-point region classification (vertex / edge / interior).
    Batched: all inputs (n, 3), output (n, 3).
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    bp = p - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    cp = p - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    n = p.shape[0]
    w = np.zeros((n, 3))
    done = np.zeros(n, dtype=bool)

    def settle(mask, w0, w1, w2):
        nonlocal done
        m = mask & ~done
        w[m, 0] = np.broadcast_to(w0, (n,))[m]
        w[m, 1] = np.broadcast_to(w1, (n,))[m]
        w[m, 2] = np.broadcast_to(w2, (n,))[m]
        done = done | m

    settle((d1 <= 0.0) & (d2 <= 0.0), 1.0, 0.0, 0.0)          # vertex a
    settle((d3 >= 0.0) & (d4 <= d3), 0.0, 1.0, 0.0)           # vertex b
    settle((d6 >= 0.0) & (d5 <= d6), 0.0, 0.0, 1.0)           # vertex c

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = np.where(d1 != d3, d1 / (d1 - d3), 0.0)
        settle((vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0), 1.0 - v_ab, v_ab, 0.0)

        v_ac = np.where(d2 != d6, d2 / (d2 - d6), 0.0)
        settle((vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0), 1.0 - v_ac, 0.0, v_ac)

        num = d4 - d3
        den = (d4 - d3) + (d5 - d6)
        v_bc = np.where(den != 0.0, num / den, 0.0)
        settle((va <= 0.0) & (d4 >= d3) & (d5 >= d6), 0.0, 1.0 - v_bc, v_bc)

        total = va + vb + vc
        v = np.where(total != 0.0, vb / total, 1.0 / 3.0)
        u = np.where(total != 0.0, vc / total, 1.0 / 3.0)
        settle(np.ones(n, dtype=bool), 1.0 - v - u, v, u)     # interior
    return w


def _clamp01(t):
    return np.clip(t, 0.0, 1.0)


def segment_segment_params(p1, p2, q1, q2):
    """Closest-point parameters (s, t) between segments p and q, batched.

    Near-parallel segments fall back to the best of the four point-segment
    projections so the downstream gradient has a well-defined closed form.
    """
    d1 = p2 - p1
    d2 = q2 - q1
    r = p1 - q1
    a = _dot(d1, d1)
    e = _dot(d2, d2)
    b = _dot(d1, d2)
    c = _dot(d1, r)
    f = _dot(d2, r)
    a_safe = np.maximum(a, 1e-300)
    e_safe = np.maximum(e, 1e-300)

    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 0.0, _clamp01((b * f - c * e) / np.maximum(denom, 1e-300)), 0.0)
        t_raw = (b * s + f) / e_safe
        t = _clamp01(t_raw)
        s = np.where(t_raw < 0.0, _clamp01(-c / a_safe), s)
        s = np.where(t_raw > 1.0, _clamp01((b - c) / a_safe), s)

    cross = np.cross(d1, d2)
    parallel = np.linalg.norm(cross, axis=-1) < EE_PARALLEL_TOL * np.sqrt(a * e)
    if parallel.any():
        # candidates: (s, t) for each endpoint projected on the other segment
        t1 = _clamp01(f / e_safe)
        t2 = _clamp01((f + b) / e_safe)
        s3 = _clamp01(-c / a_safe)
        s4 = _clamp01((b - c) / a_safe)
        cs = np.stack([np.zeros_like(s3), np.ones_like(s3), s3, s4], axis=-1)
        ct = np.stack([t1, t2, np.zeros_like(t1), np.ones_like(t1)], axis=-1)
        pa = p1[..., None, :] + cs[..., :, None] * d1[..., None, :]
        pb = q1[..., None, :] + ct[..., :, None] * d2[..., None, :]
        dist2 = ((pa - pb) ** 2).sum(axis=-1)
        best = dist2.argmin(axis=-1)
        rows = np.arange(s.shape[0])
        s = np.where(parallel, cs[rows, best], s)
        t = np.where(parallel, ct[rows, best], t)
    return s, t


def vf_eval(pts: np.ndarray):
    """Distance data for vertex-face pairs.

    Args:
        pts: (n, 4, 3) stacked as (vertex, tri0, tri1, tri2).

    Returns:
        d (n,), grad (n, 12), weights (n, 4) signed, degenerate (n,) bool.
    """
    p, a, b, c = pts[:, 0], pts[:, 1], pts[:, 2], pts[:, 3]
    w = point_triangle_weights(p, a, b, c)
    closest = w[:, 0:1] * a + w[:, 1:2] * b + w[:, 2:3] * c
    diff = p - closest
    d = np.linalg.norm(diff, axis=-1)
    weights = np.concatenate([np.ones((len(p), 1)), -w], axis=1)
    return _finish(d, diff, weights, pts)


def ee_eval(pts: np.ndarray):
    """Distance data for edge-edge pairs; pts stacked as (a0, a1, b0, b1)."""
    p1, p2, q1, q2 = pts[:, 0], pts[:, 1], pts[:, 2], pts[:, 3]
    s, t = segment_segment_params(p1, p2, q1, q2)
    pa = p1 + s[:, None] * (p2 - p1)
    pb = q1 + t[:, None] * (q2 - q1)
    diff = pa - pb
    d = np.linalg.norm(diff, axis=-1)
    weights = np.stack([1.0 - s, s, -(1.0 - t), -t], axis=1)
    return _finish(d, diff, weights, pts)


def _finish(d, diff, weights, pts):
    scale = np.abs(pts).max(axis=(1, 2))
    degenerate = d <= np.maximum(DEGENERATE_DISTANCE, DEGENERATE_RELATIVE * scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        direction = np.where(degenerate[:, None], 0.0, diff / np.maximum(d, 1e-300)[:, None])
    grad = (weights[:, :, None] * direction[:, None, :]).reshape(len(d), 12)
    return d, grad, weights, degenerate


def pair_distances(kind: PairKind, pts: np.ndarray) -> np.ndarray:
    """Distances only (n,), used by the CCD inner loop."""
    if kind == PairKind.VERTEX_FACE:
        p, a, b, c = pts[:, 0], pts[:, 1], pts[:, 2], pts[:, 3]
        w = point_triangle_weights(p, a, b, c)
        closest = w[:, 0:1] * a + w[:, 1:2] * b + w[:, 2:3] * c
        return np.linalg.norm(p - closest, axis=-1)
    p1, p2, q1, q2 = pts[:, 0], pts[:, 1], pts[:, 2], pts[:, 3]
    s, t = segment_segment_params(p1, p2, q1, q2)
    pa = p1 + s[:, None] * (p2 - p1)
    pb = q1 + t[:, None] * (q2 - q1)
    return np.linalg.norm(pa - pb, axis=-1)


def unsigned_distance(kind: PairKind, p0, p1, p2, p3) -> DistanceEval:
    """Single-pair distance evaluation (see module docstring for conventions)."""
    pts = np.asarray([p0, p1, p2, p3], dtype=np.float64)[None]
    if kind == PairKind.VERTEX_FACE:
        d, grad, weights, degenerate = vf_eval(pts)
    else:
        d, grad, weights, degenerate = ee_eval(pts)
    return DistanceEval(float(d[0]), grad[0], weights[0], bool(degenerate[0]))
