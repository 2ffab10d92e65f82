"""Symmetric block-sparse matrices (3x3 blocks) and a block-Jacobi PCG solver.

Storage keeps only the diagonal and strict-upper blocks; the lower triangle is
implied by symmetry. Assembly coalesces duplicate (row, col) contributions so
matvec touches each stored block once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PCG_RESTART_INTERVAL = 250


def clique_contributions(
    vertex_ids: np.ndarray, blocks: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flatten per-clique block grids into upper-triangle COO triplets.

    vertex_ids is (M, k) global indices and blocks is (M, k, k, 3, 3) with
    blocks[m, j, i] == blocks[m, i, j].T. Only entries whose global
    (row, col) satisfies row <= col are emitted, transposing blocks whose
    local orientation disagrees with the global ordering.
    """
    m, k = vertex_ids.shape
    li, lj = np.triu_indices(k)
    rows = vertex_ids[:, li].ravel()
    cols = vertex_ids[:, lj].ravel()
    vals = blocks[:, li, lj].reshape(-1, 3, 3)
    swap = rows > cols
    rows2 = np.where(swap, cols, rows)
    cols2 = np.where(swap, rows, cols)
    vals = np.where(swap[:, None, None], vals.transpose(0, 2, 1), vals)
    return rows2, cols2, vals


@dataclass
class PCGInfo:
    iterations: int
    converged: bool
    rel_residual: float


class BlockSparseMatrix:
    """Symmetric 3Nx3N matrix as coalesced 3x3 blocks, diagonal plus upper."""

    def __init__(self, n_vertices: int, rows: np.ndarray, cols: np.ndarray, blocks: np.ndarray):
        order = np.argsort(rows.astype(np.int64) * n_vertices + cols, kind="stable")
        rows = np.asarray(rows)[order]
        cols = np.asarray(cols)[order]
        blocks = np.asarray(blocks, dtype=float)[order]
        keys = rows.astype(np.int64) * n_vertices + cols
        starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]]) if len(keys) else (
            np.zeros(0, dtype=np.int64)
        )
        self.n_vertices = int(n_vertices)
        self.rows = rows[starts]
        self.cols = cols[starts]
        self.blocks = np.add.reduceat(blocks.reshape(-1, 9), starts, axis=0).reshape(-1, 3, 3)
        self._off = self.rows != self.cols

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Product with x of shape (n_vertices, 3), applying implied symmetry."""
        upper = np.einsum("nij,nj->ni", self.blocks, x[self.cols])
        idx = (self.rows[:, None] * 3 + np.arange(3)).ravel()
        y = np.bincount(idx, weights=upper.ravel(), minlength=self.n_vertices * 3)
        off = self._off
        lower = np.einsum("nji,nj->ni", self.blocks[off], x[self.rows[off]])
        idx = (self.cols[off][:, None] * 3 + np.arange(3)).ravel()
        y += np.bincount(idx, weights=lower.ravel(), minlength=self.n_vertices * 3)
        return y.reshape(-1, 3)

    def diagonal_blocks(self) -> np.ndarray:
        diag = np.zeros((self.n_vertices, 3, 3))
        on = ~self._off
        diag[self.rows[on]] = self.blocks[on]
        return diag

    def mask_dirichlet(self, vertex_mask: np.ndarray, diag_replacement: np.ndarray) -> None:
        """Zero rows/cols of masked vertices; their diagonal blocks become
        diag_replacement (per-vertex (3,3)), keeping the system nonsingular."""
        touched = vertex_mask[self.rows] | vertex_mask[self.cols]
        self.blocks[touched] = 0.0
        on_diag = touched & ~self._off
        self.blocks[on_diag] = diag_replacement[self.rows[on_diag]]

    def to_dense(self) -> np.ndarray:
        n = self.n_vertices * 3
        dense = np.zeros((n, n))
        for r, c, b in zip(self.rows, self.cols, self.blocks):
            dense[3 * r : 3 * r + 3, 3 * c : 3 * c + 3] += b
            if r != c:
                dense[3 * c : 3 * c + 3, 3 * r : 3 * r + 3] += b.T
        return dense


def pcg_solve(
    matrix: BlockSparseMatrix,
    rhs: np.ndarray,
    rel_tol: float,
    max_iters: int | None = None,
) -> tuple[np.ndarray, PCGInfo]:
    """Block-Jacobi preconditioned CG for matrix @ p = rhs (rhs shape (n, 3)).

    Stops when the residual norm drops below rel_tol times the rhs norm.
    On hitting the iteration cap the lowest-residual iterate seen is
    returned with converged=False.
    """
    n = matrix.n_vertices
    if max_iters is None:
        max_iters = 10 * n
    rhs_norm = float(np.linalg.norm(rhs))
    x = np.zeros_like(rhs)
    if rhs_norm == 0.0:
        return x, PCGInfo(0, True, 0.0)
    pre = np.linalg.inv(matrix.diagonal_blocks())
    r = rhs.copy()
    z = np.einsum("nij,nj->ni", pre, r)
    p = z.copy()
    rz = float(np.sum(r * z))
    best_x = x.copy()
    best_res = rhs_norm
    for it in range(1, max_iters + 1):
        hp = matrix.matvec(p)
        php = float(np.sum(p * hp))
        if php <= 0.0:
            # Numerically lost positive definiteness along p; keep best iterate.
            return best_x, PCGInfo(it - 1, False, best_res / rhs_norm)
        alpha = rz / php
        x += alpha * p
        r -= alpha * hp
        res = float(np.linalg.norm(r))
        if res < best_res:
            best_res = res
            best_x = x.copy()
        if res <= rel_tol * rhs_norm:
            return x, PCGInfo(it, True, res / rhs_norm)
        if it % PCG_RESTART_INTERVAL == 0:
            r = rhs - matrix.matvec(x)
            z = np.einsum("nij,nj->ni", pre, r)
            p = z.copy()
            rz = float(np.sum(r * z))
            continue
        z = np.einsum("nij,nj->ni", pre, r)
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    return best_x, PCGInfo(max_iters, False, best_res / rhs_norm)
