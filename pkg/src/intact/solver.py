"""Projected-Newton subproblem solver on the augmented-Lagrangian objective.

The objective per subproblem is the incremental potential
    L(x_hat) = 1/2 (x_hat - x_tilde)^T M (x_hat - x_tilde) + h^2 U(x_hat)
               + sum_i gamma_i (mu/2 (c_i - s_i)^2 - lam_i (c_i - s_i))
               + friction terms with frozen anchors,
with slacks eliminated at their optimum. Each Newton iteration assembles the
block-sparse Hessian (mass + PSD-projected elasticity + penalty rank-ones),
solves with block-Jacobi PCG, and backtracks on strict energy decrease. The
loop exits on a full step; a single dual sweep then updates the multipliers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contact import ActiveSet, ConstraintBatch
from .elasticity import (
    Material,
    MaterialModel,
    deformation_gradients,
    element_gradients,
    energy,
    inversion_safe_step,
    psd_block_hessians,
)
from .sparse import BlockSparseMatrix, PCGInfo, clique_contributions, pcg_solve

NEWTON_CAP = 64
LINE_SEARCH_MAX_HALVINGS = 30


class NonFiniteEnergyError(RuntimeError):
    """Raised when assembly sees a non-finite elastic energy (inverted log
    material); cannot occur if line searches respect the inversion cap."""


@dataclass(frozen=True)
class ElasticRegion:
    """A material-homogeneous group of tets addressing global vertex ids."""

    material: Material
    tets: np.ndarray  # (m, 4)
    shape_rows: np.ndarray  # (m, 4, 3)
    volumes: np.ndarray  # (m,)


def region_hessian_blocks(reg: ElasticRegion, F: np.ndarray) -> np.ndarray:
    """PSD-projected element Hessian blocks for one region.

    Linear elasticity has a configuration-independent Hessian, so its blocks
    are computed once and memoized on the region.
    """
    if reg.material.model is MaterialModel.LIN:
        blocks = getattr(reg, "_lin_blocks", None)
        if blocks is None:
            blocks = psd_block_hessians(reg.material, F, reg.shape_rows, reg.volumes)
            object.__setattr__(reg, "_lin_blocks", blocks)
        return blocks
    return psd_block_hessians(reg.material, F, reg.shape_rows, reg.volumes)


@dataclass
class SubproblemResult:
    x_hat: np.ndarray
    newton_iters: int
    cg_iters: int
    stalled: bool
    worst_violation: float  # max |c| over the active branch at the dual sweep


def scatter_terms(out: np.ndarray, indices: np.ndarray, terms: np.ndarray) -> None:
    """Accumulate (k, 4, 3) per-clique terms onto (n, 3) vertex rows."""
    flat = (indices[:, :, None] * 3 + np.arange(3)).ravel()
    out += np.bincount(flat, weights=terms.ravel(), minlength=out.size).reshape(out.shape)


def elastic_energy(regions: list[ElasticRegion], x: np.ndarray, h2: float) -> float:
    total = 0.0
    for reg in regions:
        F = deformation_gradients(x, reg.tets, reg.shape_rows)
        total += energy(reg.material, F, reg.volumes)
    return h2 * total


def incremental_energy(
    x_hat: np.ndarray,
    x_tilde: np.ndarray,
    masses: np.ndarray,
    regions: list[ElasticRegion],
    batch: ConstraintBatch | None,
    mu: float,
    offset: float,
    h: float,
    friction=None,
) -> float:
    diff = x_hat - x_tilde
    total = 0.5 * float(np.sum(masses * np.sum(diff * diff, axis=1)))
    total += elastic_energy(regions, x_hat, h * h)
    if batch is not None and len(batch):
        total += batch.energy(batch.values(x_hat, offset), mu)
    if friction is not None:
        total += friction.energy(x_hat)
    return total


def assemble(
    x_hat: np.ndarray,
    x_tilde: np.ndarray,
    masses: np.ndarray,
    regions: list[ElasticRegion],
    batch: ConstraintBatch | None,
    mu: float,
    offset: float,
    h: float,
    dbc_mask: np.ndarray | None = None,
    friction=None,
) -> tuple[np.ndarray, BlockSparseMatrix]:
    """Gradient and SPD system matrix of the AL objective at x_hat."""
    n = len(x_hat)
    h2 = h * h
    grad = masses[:, None] * (x_hat - x_tilde)
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    blocks = [masses[:, None, None] * np.eye(3)]
    for reg in regions:
        F = deformation_gradients(x_hat, reg.tets, reg.shape_rows)
        if not np.isfinite(energy(reg.material, F, reg.volumes)):
            raise NonFiniteEnergyError("elastic energy is not finite at the evaluation point")
        scatter_terms(grad, reg.tets, h2 * element_gradients(reg.material, F, reg.shape_rows, reg.volumes))
        r, c, b = clique_contributions(
            reg.tets, h2 * region_hessian_blocks(reg, F)
        )
        rows.append(r)
        cols.append(c)
        blocks.append(b)
    if batch is not None and len(batch):
        cvals = batch.values(x_hat, offset)
        scatter_terms(grad, batch.indices, batch.gradient_terms(cvals, mu))
        r, c, b = clique_contributions(batch.indices, batch.hessian_grids(mu))
        rows.append(r)
        cols.append(c)
        blocks.append(b)
    if friction is not None and len(friction):
        scatter_terms(grad, friction.indices, friction.gradient_terms(x_hat))
        r, c, b = clique_contributions(friction.indices, friction.hessian_grids(x_hat))
        rows.append(r)
        cols.append(c)
        blocks.append(b)
    H = BlockSparseMatrix(n, np.concatenate(rows), np.concatenate(cols), np.concatenate(blocks))
    if dbc_mask is not None and dbc_mask.any():
        H.mask_dirichlet(dbc_mask, masses[:, None, None] * np.eye(3))
        grad[dbc_mask] = 0.0
    return grad, H


def line_search(x_hat, p, energy_fn, safe_cap: float = 1.0) -> tuple[float, bool]:
    """Largest step in {cap, cap/2, ...} that strictly decreases energy_fn.

    Returns (r, stalled). After 30 halvings without decrease the lowest-energy
    sample is returned with stalled=True.
    """
    base = energy_fn(x_hat)
    r = min(1.0, safe_cap)
    best_r, best_e = r, np.inf
    for _ in range(LINE_SEARCH_MAX_HALVINGS + 1):
        e = energy_fn(x_hat + r * p)
        if e < base:
            return r, False
        if e < best_e:
            best_r, best_e = r, e
        r *= 0.5
    return best_r, True


def solve_subproblem(
    x_tilde: np.ndarray,
    x: np.ndarray,
    x_hat0: np.ndarray,
    masses: np.ndarray,
    regions: list[ElasticRegion],
    active_set: ActiveSet,
    mu: float,
    offset: float,
    h: float,
    cg_tol: float = 1e-4,
    decay: float = 0.9,
    dbc_mask: np.ndarray | None = None,
    friction=None,
) -> SubproblemResult:
    """Newton loop (exit on full step, cap 64) plus one dual sweep.

    Anchors are linearized once at the intersection-free x and reused for
    every inner iteration; x_hat0 is the warm start.
    """
    active_set.refresh_anchors(x)
    batch = active_set.batch()

    def objective(y):
        return incremental_energy(y, x_tilde, masses, regions, batch, mu, offset, h, friction)

    x_hat = x_hat0.copy()
    newton_iters = 0
    cg_total = 0
    stalled = False
    for _ in range(NEWTON_CAP):
        grad, H = assemble(
            x_hat, x_tilde, masses, regions, batch, mu, offset, h, dbc_mask, friction
        )
        if not np.any(grad):
            break
        p, info = pcg_solve(H, -grad, cg_tol)
        cg_total += info.iterations
        if float(np.sum(grad * p)) >= 0.0:
            # Aggressive clamping can turn the CG output uphill; fall back to
            # preconditioned steepest descent for this iteration.
            pre = np.linalg.inv(H.diagonal_blocks())
            p = -np.einsum("nij,nj->ni", pre, grad)
        safe = 1.0
        for reg in regions:
            safe = min(safe, inversion_safe_step(reg.material, x_hat, p, reg.tets, reg.shape_rows))
        r, stall = line_search(x_hat, p, objective, safe)
        x_hat = x_hat + r * p
        newton_iters += 1
        stalled = stalled or stall
        if r == 1.0:
            break
    else:
        stalled = True
    worst = active_set.dual_update_sweep(x_hat, offset, mu, decay)
    return SubproblemResult(x_hat, newton_iters, cg_total, stalled, worst)
