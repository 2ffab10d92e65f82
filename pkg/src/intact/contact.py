"""Augmented-Lagrangian contact constraints on linearized distance functions.

Each constraint anchors a first-order expansion of an unsigned pair distance
at an intersection-free state x, giving the affine constraint value
c(x_hat) = anchor_d + anchor_grad . (x_hat - x) - offset. The multiplier,
slack, and decay-weight updates follow the subproblem tail rules exactly:
with s = max(0, c - lam/mu), the s = 0 branch takes lam <- lam - mu*c and
gamma <- decay*gamma, while the s > 0 branch resets lam <- 0, gamma <- 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ccd import BlockingPairs
from .distance import PairKind, ee_eval, vf_eval

GAMMA_PRUNE_THRESHOLD = 0.01


def constraint_key(kind, indices) -> tuple:
    return (int(kind), tuple(sorted(int(i) for i in indices)))


@dataclass
class Constraint:
    """One contact pair with its AL state and current linearization anchor.

    indices keeps evaluation order (VF: vertex then triangle; EE: edge A then
    edge B); the sorted form appears only in the dedup key. lam is stored at
    incremental-potential scale; force readers divide by h^2 themselves.
    """

    kind: PairKind
    indices: np.ndarray
    lam: float = 0.0
    gamma: float = 1.0
    s: float = 0.0
    anchor_d: float = 0.0
    anchor_grad: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))
    anchor_x: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))

    @property
    def key(self) -> tuple:
        return constraint_key(self.kind, self.indices)


def linearize(constraint: Constraint, x: np.ndarray) -> bool:
    """Re-anchor the constraint's distance expansion at x.

    Returns False on a degenerate gradient (parallel edges and the like), in
    which case the previous anchor is kept for this iteration.
    """
    pts = x[constraint.indices][None]
    eval_fn = vf_eval if constraint.kind == PairKind.VERTEX_FACE else ee_eval
    d, grad, _, degenerate = eval_fn(pts)
    if degenerate[0]:
        return False
    constraint.anchor_d = float(d[0])
    constraint.anchor_grad = grad[0].reshape(4, 3)
    constraint.anchor_x = x[constraint.indices].copy()
    return True


def slack_update(c, lam, mu):
    """s = max(0, c - lam/mu), elementwise."""
    return np.maximum(0.0, c - lam / mu)


def al_contribution(constraint: Constraint, x_hat: np.ndarray, mu: float, offset: float):
    """Energy, gradient (4,3), and Hessian grid (4,4,3,3) at x_hat.

    The slack is re-optimized for the given x_hat, so inactive constraints
    (s > 0) contribute zero gradient but still a nonzero penalty Hessian.
    """
    disp = x_hat[constraint.indices] - constraint.anchor_x
    c = constraint.anchor_d + float(np.sum(constraint.anchor_grad * disp)) - offset
    shifted = c - constraint.lam / mu  # rounded once so s > 0 zeroes the gradient exactly
    s = max(0.0, shifted)
    constraint.s = s
    g = constraint.anchor_grad
    diff = c - s
    energy = constraint.gamma * (0.5 * mu * diff * diff - constraint.lam * diff)
    grad = mu * constraint.gamma * (shifted - s) * g
    hess = mu * constraint.gamma * np.einsum("ia,jb->ijab", g, g)
    return energy, grad, hess


def dual_update(constraint: Constraint, c: float, mu: float, decay: float) -> None:
    """Multiplier/decay sweep applied once after each subproblem solve.

    Active constraints (zero slack) accumulate their multiplier and keep
    full weight; inactive ones drop the multiplier and decay toward the
    pruning threshold. A weight below 1 therefore always marks a
    constraint whose last sweep saw positive slack.
    """
    s = float(slack_update(c, constraint.lam, mu))
    constraint.s = s
    if s == 0.0:
        constraint.lam = constraint.lam - mu * c
        constraint.gamma = 1.0
    else:
        constraint.lam = 0.0
        constraint.gamma = decay * constraint.gamma


@dataclass
class ConstraintBatch:
    """Array view over an active set, frozen at anchor-refresh time."""

    kinds: np.ndarray  # (C,)
    indices: np.ndarray  # (C, 4)
    lam: np.ndarray  # (C,)
    gamma: np.ndarray  # (C,)
    anchor_d: np.ndarray  # (C,)
    anchor_grad: np.ndarray  # (C, 4, 3)
    anchor_x: np.ndarray  # (C, 4, 3)

    def __len__(self) -> int:
        return len(self.kinds)

    def values(self, x_hat: np.ndarray, offset: float) -> np.ndarray:
        disp = x_hat[self.indices] - self.anchor_x
        return self.anchor_d + np.einsum("cia,cia->c", self.anchor_grad, disp) - offset

    def energy(self, c: np.ndarray, mu: float) -> float:
        s = slack_update(c, self.lam, mu)
        diff = c - s
        return float(np.sum(self.gamma * (0.5 * mu * diff * diff - self.lam * diff)))

    def gradient_terms(self, c: np.ndarray, mu: float) -> np.ndarray:
        """Per-constraint gradients (C, 4, 3) to scatter onto vertices."""
        shifted = c - self.lam / mu
        coef = mu * self.gamma * (shifted - np.maximum(0.0, shifted))
        return coef[:, None, None] * self.anchor_grad

    def hessian_grids(self, mu: float) -> np.ndarray:
        """Penalty-rank-one blocks (C, 4, 4, 3, 3); independent of slacks."""
        return np.einsum("c,cia,cjb->cijab", mu * self.gamma, self.anchor_grad, self.anchor_grad)


def admission_filter(indices: np.ndarray, tois: np.ndarray) -> np.ndarray:
    """Keep a new pair iff it is the earliest-TOI pair of one of its vertices."""
    verts = indices.ravel()
    tois4 = np.repeat(tois, 4)
    uniq, inv = np.unique(verts, return_inverse=True)
    earliest = np.full(len(uniq), np.inf)
    np.minimum.at(earliest, inv, tois4)
    return (tois4 == earliest[inv]).reshape(-1, 4).any(axis=1)


class ActiveSet:
    """Insertion-ordered constraint collection keyed by (kind, sorted ids)."""

    def __init__(self, admit_all: bool = False):
        # admit_all bypasses the earliest-TOI admission filter; every deduped
        # blocking pair enters the set.  Kept for measuring what the filter buys.
        self._constraints: dict[tuple, Constraint] = {}
        self.admit_all = admit_all

    def __len__(self) -> int:
        return len(self._constraints)

    def __iter__(self):
        return iter(self._constraints.values())

    def __contains__(self, key: tuple) -> bool:
        return key in self._constraints

    def add(self, constraint: Constraint) -> bool:
        key = constraint.key
        if key in self._constraints:
            return False
        self._constraints[key] = constraint
        return True

    def update(self, blocking: BlockingPairs) -> tuple[int, int]:
        """Alg.-style set maintenance: dedup, earliest-TOI admission, prune.

        Returns (admitted count, pruned count).
        """
        new_mask = np.array(
            [constraint_key(k, idx) not in self._constraints
             for k, idx in zip(blocking.kinds, blocking.indices)],
            dtype=bool,
        ) if len(blocking) else np.zeros(0, dtype=bool)
        admitted = 0
        if new_mask.any():
            idx_new = blocking.indices[new_mask]
            toi_new = blocking.tois[new_mask]
            kind_new = blocking.kinds[new_mask]
            if self.admit_all:
                keep = np.ones(len(toi_new), dtype=bool)
            else:
                keep = admission_filter(idx_new, toi_new)
            for k, quad in zip(kind_new[keep], idx_new[keep]):
                self.add(Constraint(kind=PairKind(int(k)), indices=quad.copy()))
                admitted += 1
        stale = [key for key, con in self._constraints.items()
                 if con.gamma < GAMMA_PRUNE_THRESHOLD]
        for key in stale:
            del self._constraints[key]
        return admitted, len(stale)

    def refresh_anchors(self, x: np.ndarray) -> int:
        """Re-linearize every constraint at x; returns the degenerate count.

        A constraint whose refresh degenerates keeps its stale anchor for the
        iteration. A never-anchored constraint in that situation gets a null
        anchor (zero gradient at its own position) so it exerts no force.
        """
        degenerate = 0
        cons = list(self._constraints.values())
        # One batched distance evaluation per kind instead of one per pair.
        for kind, eval_fn in ((PairKind.VERTEX_FACE, vf_eval),
                              (PairKind.EDGE_EDGE, ee_eval)):
            group = [c for c in cons if c.kind == kind]
            if not group:
                continue
            pts = x[np.array([c.indices for c in group], dtype=int)]
            d, grad, _, degen = eval_fn(pts)
            for i, con in enumerate(group):
                if degen[i]:
                    degenerate += 1
                    if con.anchor_d <= 0.0:
                        con.anchor_x = pts[i].copy()
                        con.anchor_grad = np.zeros((4, 3))
                        con.anchor_d = np.inf
                    continue
                con.anchor_d = float(d[i])
                con.anchor_grad = grad[i].reshape(4, 3)
                con.anchor_x = pts[i].copy()
        return degenerate

    def batch(self) -> ConstraintBatch | None:
        if not self._constraints:
            return None
        cons = list(self._constraints.values())
        return ConstraintBatch(
            kinds=np.array([int(c.kind) for c in cons]),
            indices=np.array([c.indices for c in cons], dtype=int),
            lam=np.array([c.lam for c in cons]),
            gamma=np.array([c.gamma for c in cons]),
            anchor_d=np.array([c.anchor_d for c in cons]),
            anchor_grad=np.array([c.anchor_grad for c in cons]),
            anchor_x=np.array([c.anchor_x for c in cons]),
        )

    def dual_update_sweep(self, x_hat: np.ndarray, offset: float, mu: float, decay: float) -> float:
        """One multiplier sweep over all constraints; returns max |c| over the
        active (s = 0) branch, a convergence diagnostic."""
        worst = 0.0
        for con in self._constraints.values():
            disp = x_hat[con.indices] - con.anchor_x
            c = con.anchor_d + float(np.sum(con.anchor_grad * disp)) - offset
            dual_update(con, c, mu, decay)
            if con.s == 0.0:
                worst = max(worst, abs(c))
        return worst
