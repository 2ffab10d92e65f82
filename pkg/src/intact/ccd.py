"""Conservative continuous collision detection and step-size limiting.

TOIs come from additive conservative advancement: repeatedly step time
forward by (gap / max combined displacement bound), which can never jump
past the first contact, and stop once the remaining gap falls inside a
slack fraction of the starting gap. Broad phase pairs come from swept,
margin-inflated boxes so every pair that could close below the gap during
the motion is proposed.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .bvh import AABBTree, swept_boxes
from .distance import PairKind, pair_distances

S_ACCD = 0.1
ACCD_MAX_ITERS = 100


def _split_means(kind, p):
    if kind == PairKind.VERTEX_FACE:
        return p[:, 0], p[:, 1:].mean(axis=1)
    return p[:, :2].mean(axis=1), p[:, 2:].mean(axis=1)


def _motion_bound(kind, p):
    norms = np.linalg.norm(p, axis=2)
    if kind == PairKind.VERTEX_FACE:
        return norms[:, 0] + norms[:, 1:].max(axis=1)
    return norms[:, :2].max(axis=1) + norms[:, 2:].max(axis=1)


def accd_batch(kind: PairKind, x0: np.ndarray, x1: np.ndarray, min_gap: float):
    """Earliest safe time in [0, 1] per pair; 1 where the motion never closes.

    Pairs already at or below min_gap report 0.
    """
    n = len(x0)
    toi = np.ones(n)
    if n == 0:
        return toi
    p = x1 - x0
    mean_a, mean_b = _split_means(kind, p)
    p = p - 0.5 * (mean_a + mean_b)[:, None, :]
    lp = _motion_bound(kind, p)

    gap0 = pair_distances(kind, x0) - min_gap
    toi[gap0 <= 0.0] = 0.0
    # d(t) >= d(0) - lp*t, so motion shorter than the starting gap can
    # never close it; those pairs keep toi = 1 without advancement.
    idx = np.nonzero((gap0 > 0.0) & (lp >= gap0))[0]
    if len(idx) == 0:
        return toi

    x = x0[idx].copy()
    pm = p[idx]
    lpm = lp[idx]
    slack = S_ACCD * gap0[idx]
    t = np.zeros(len(idx))
    t_l = (1.0 - S_ACCD) * gap0[idx] / lpm

    for _ in range(ACCD_MAX_ITERS):
        x = x + t_l[:, None, None] * pm
        gap = pair_distances(kind, x) - min_gap
        stop = (t > 0.0) & (gap < slack)
        if stop.any():
            toi[idx[stop]] = t[stop]
        keep = ~stop
        t = t[keep] + t_l[keep]
        over = t >= 1.0
        if over.any():
            toi[idx[keep][over]] = 1.0
        keep2 = ~over
        idx = idx[keep][keep2]
        if len(idx) == 0:
            break
        x = x[keep][keep2]
        pm = pm[keep][keep2]
        lpm = lpm[keep][keep2]
        slack = slack[keep][keep2]
        gap = gap[keep][keep2]
        t = t[keep2]
        t_l = 0.9 * gap / lpm
    else:
        # iteration cap: current committed time is still conservative
        toi[idx] = t
    return toi


def accd_toi(kind: PairKind, x0, x1, min_gap: float) -> float:
    return float(accd_batch(
        kind, np.asarray(x0, float)[None], np.asarray(x1, float)[None], min_gap
    )[0])


# Below this many box-box tests a dense overlap matrix beats building a tree.
_BRUTE_FORCE_PAIRS = 1 << 14


def _box_overlap_pairs(a_lo, a_hi, b_lo, b_hi):
    """All (i, j) with box i of A touching box j of B, row-major order."""
    hit = np.logical_and(
        (a_lo[:, None] <= b_hi[None]).all(axis=2),
        (b_lo[None] <= a_hi[:, None]).all(axis=2),
    )
    return np.nonzero(hit)


def candidate_pairs(x0, x1, tris, edges, verts, min_gap):
    """Swept broad phase: (vf indices (n,4), ee indices (m,4)), no shared verts."""
    pad = min_gap
    tri_lo, tri_hi = swept_boxes(
        x0[tris].min(axis=1), x0[tris].max(axis=1),
        x1[tris].min(axis=1), x1[tris].max(axis=1), pad,
    )
    v_lo, v_hi = swept_boxes(x0[verts], x0[verts], x1[verts], x1[verts])
    if len(verts) * len(tris) <= _BRUTE_FORCE_PAIRS:
        qi, ti = _box_overlap_pairs(v_lo, v_hi, tri_lo, tri_hi)
    else:
        qi, ti = AABBTree(tri_lo, tri_hi).query(v_lo, v_hi)
    vids = verts[qi]
    fvs = tris[ti]
    shared = (fvs == vids[:, None]).any(axis=1)
    vf = np.concatenate([vids[~shared, None], fvs[~shared]], axis=1)

    edge_lo, edge_hi = swept_boxes(
        x0[edges].min(axis=1), x0[edges].max(axis=1),
        x1[edges].min(axis=1), x1[edges].max(axis=1), 0.5 * pad,
    )
    if len(edges) * len(edges) <= _BRUTE_FORCE_PAIRS:
        ai, bi = _box_overlap_pairs(edge_lo, edge_hi, edge_lo, edge_hi)
    else:
        ai, bi = AABBTree(edge_lo, edge_hi).query(edge_lo, edge_hi)
    keep = ai < bi
    ai, bi = ai[keep], bi[keep]
    ea, eb = edges[ai], edges[bi]
    shared = (
        (ea[:, 0:1] == eb) | (ea[:, 1:2] == eb)
    ).any(axis=1)
    ee = np.concatenate([ea[~shared], eb[~shared]], axis=1)
    return vf, ee


@dataclasses.dataclass
class BlockingPairs:
    """Pairs whose TOI along the queried motion is below 1."""

    kinds: np.ndarray    # (n,) PairKind values
    indices: np.ndarray  # (n, 4) vertex ids
    tois: np.ndarray     # (n,)

    @staticmethod
    def empty() -> "BlockingPairs":
        return BlockingPairs(
            np.empty(0, dtype=np.int64),
            np.empty((0, 4), dtype=np.int64),
            np.empty(0),
        )

    def __len__(self):
        return len(self.tois)


def max_step_size(x, x_hat, tris, edges, verts, min_gap, cap: float = 1.0):
    """Largest safe fraction of the motion x -> x_hat plus its blocking pairs.

    cap carries per-element limits (element inversion) decided elsewhere.
    """
    vf, ee = candidate_pairs(x, x_hat, tris, edges, verts, min_gap)
    toi_vf = accd_batch(PairKind.VERTEX_FACE, x[vf], x_hat[vf], min_gap)
    toi_ee = accd_batch(PairKind.EDGE_EDGE, x[ee], x_hat[ee], min_gap)

    alpha = float(cap)
    if len(toi_vf):
        alpha = min(alpha, float(toi_vf.min()))
    if len(toi_ee):
        alpha = min(alpha, float(toi_ee.min()))

    mask_vf = toi_vf < 1.0
    mask_ee = toi_ee < 1.0
    kinds = np.concatenate([
        np.full(mask_vf.sum(), int(PairKind.VERTEX_FACE), dtype=np.int64),
        np.full(mask_ee.sum(), int(PairKind.EDGE_EDGE), dtype=np.int64),
    ])
    indices = np.concatenate([vf[mask_vf], ee[mask_ee]], axis=0) if len(kinds) else (
        np.empty((0, 4), dtype=np.int64)
    )
    tois = np.concatenate([toi_vf[mask_vf], toi_ee[mask_ee]])
    return alpha, BlockingPairs(kinds, indices, tois)
