"""Block-sparse matrix and PCG tests against dense-algebra oracles."""

import numpy as np
import pytest

from intact.sparse import BlockSparseMatrix, clique_contributions, pcg_solve


def random_clique_system(rng, n_vertices, n_cliques):
    """Random SPD system from 4-vertex cliques plus a strictly positive
    diagonal, returned both as a BlockSparseMatrix and as a dense matrix
    accumulated by explicit loops (the oracle route)."""
    dense = np.zeros((3 * n_vertices, 3 * n_vertices))
    cliques = np.array([rng.choice(n_vertices, size=4, replace=False) for _ in range(n_cliques)])
    grids = np.empty((n_cliques, 4, 4, 3, 3))
    for m in range(n_cliques):
        a = rng.standard_normal((12, 12))
        k = a @ a.T
        grids[m] = k.reshape(4, 3, 4, 3).transpose(0, 2, 1, 3)
        for i in range(4):
            for j in range(4):
                gi, gj = cliques[m, i], cliques[m, j]
                dense[3 * gi : 3 * gi + 3, 3 * gj : 3 * gj + 3] += k[3 * i : 3 * i + 3, 3 * j : 3 * j + 3]
    diag_w = rng.uniform(1.0, 2.0, n_vertices)
    rows_c, cols_c, vals_c = clique_contributions(cliques, grids)
    rows_d = np.arange(n_vertices)
    vals_d = diag_w[:, None, None] * np.eye(3)
    for v in range(n_vertices):
        dense[3 * v : 3 * v + 3, 3 * v : 3 * v + 3] += vals_d[v]
    matrix = BlockSparseMatrix(
        n_vertices,
        np.concatenate([rows_c, rows_d]),
        np.concatenate([cols_c, cols_d := rows_d]),
        np.concatenate([vals_c, vals_d]),
    )
    return matrix, dense


def test_dense_reconstruction_matches_loop_oracle(rng):
    matrix, dense = random_clique_system(rng, 12, 8)
    assert np.allclose(matrix.to_dense(), dense, atol=1e-12)


def test_dense_is_symmetric(rng):
    matrix, _ = random_clique_system(rng, 10, 6)
    d = matrix.to_dense()
    assert np.allclose(d, d.T, atol=0)


def test_matvec_matches_dense(rng):
    matrix, dense = random_clique_system(rng, 15, 10)
    for _ in range(5):
        x = rng.standard_normal((15, 3))
        assert np.allclose(matrix.matvec(x).ravel(), dense @ x.ravel(), rtol=1e-12, atol=1e-12)


def test_duplicate_contributions_coalesce():
    rows = np.array([0, 0, 0, 1])
    cols = np.array([1, 1, 0, 1])
    blocks = np.stack([np.eye(3), 2 * np.eye(3), np.eye(3), np.eye(3)])
    matrix = BlockSparseMatrix(2, rows, cols, blocks)
    assert len(matrix.blocks) == 3
    dense = matrix.to_dense()
    assert np.allclose(dense[0:3, 3:6], 3 * np.eye(3))


def test_identity_converges_in_one_iteration(rng):
    n = 8
    rows = cols = np.arange(n)
    blocks = np.tile(np.eye(3), (n, 1, 1))
    matrix = BlockSparseMatrix(n, rows, cols, blocks)
    rhs = rng.standard_normal((n, 3))
    p, info = pcg_solve(matrix, rhs, rel_tol=1e-10)
    assert info.iterations == 1 and info.converged
    assert np.allclose(p, rhs, atol=1e-14)


def test_block_diagonal_converges_in_one_iteration(rng):
    n = 6
    blocks = np.empty((n, 3, 3))
    for v in range(n):
        a = rng.standard_normal((3, 3))
        blocks[v] = a @ a.T + 3 * np.eye(3)
    matrix = BlockSparseMatrix(n, np.arange(n), np.arange(n), blocks)
    rhs = rng.standard_normal((n, 3))
    p, info = pcg_solve(matrix, rhs, rel_tol=1e-10)
    assert info.iterations == 1 and info.converged
    oracle = np.stack([np.linalg.solve(blocks[v], rhs[v]) for v in range(n)])
    assert np.allclose(p, oracle, rtol=1e-12, atol=1e-12)


def test_pcg_matches_dense_factorization(rng):
    matrix, dense = random_clique_system(rng, 20, 14)
    rhs = rng.standard_normal((20, 3))
    p, info = pcg_solve(matrix, rhs, rel_tol=1e-10)
    assert info.converged
    oracle = np.linalg.solve(dense, rhs.ravel())
    assert np.linalg.norm(p.ravel() - oracle) <= 1e-8 * np.linalg.norm(oracle)


def test_pcg_residual_contract(rng):
    matrix, _ = random_clique_system(rng, 20, 14)
    rhs = rng.standard_normal((20, 3))
    tol = 1e-4
    p, info = pcg_solve(matrix, rhs, rel_tol=tol)
    res = np.linalg.norm(matrix.matvec(p) - rhs)
    assert res <= tol * np.linalg.norm(rhs)
    assert info.rel_residual <= tol


def test_pcg_cap_returns_best_iterate(rng):
    matrix, dense = random_clique_system(rng, 20, 14)
    rhs = rng.standard_normal((20, 3))
    p, info = pcg_solve(matrix, rhs, rel_tol=1e-14, max_iters=2)
    assert not info.converged and info.iterations == 2
    # The returned iterate must never be worse than the zero start.
    assert np.linalg.norm(matrix.matvec(p) - rhs) <= np.linalg.norm(rhs)


def test_pcg_zero_rhs():
    matrix = BlockSparseMatrix(2, np.arange(2), np.arange(2), np.tile(np.eye(3), (2, 1, 1)))
    p, info = pcg_solve(matrix, np.zeros((2, 3)), rel_tol=1e-8)
    assert info.iterations == 0 and info.converged
    assert np.all(p == 0.0)


def test_dirichlet_mask_zeroes_rows_and_solution(rng):
    n = 12
    matrix, dense = random_clique_system(rng, n, 8)
    mask = np.zeros(n, dtype=bool)
    mask[[2, 7]] = True
    repl = np.tile(4.0 * np.eye(3), (n, 1, 1))
    matrix.mask_dirichlet(mask, repl)
    d = matrix.to_dense()
    for v in [2, 7]:
        sl = slice(3 * v, 3 * v + 3)
        off = d[sl].copy()
        off[:, sl] = 0.0
        assert np.all(off == 0.0) and np.all(d[:, sl][np.arange(3 * n) // 3 != v] == 0.0)
        assert np.allclose(d[sl, sl], 4.0 * np.eye(3))
    rhs = rng.standard_normal((n, 3))
    rhs[mask] = 0.0
    p, info = pcg_solve(matrix, rhs, rel_tol=1e-10)
    assert info.converged
    assert np.all(p[mask] == 0.0)


def test_pcg_restart_long_chain(rng):
    # 1D spring chain is ill-conditioned enough to exercise many iterations.
    n = 260
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.tile(2.0 * np.eye(3), (n, 1, 1))]
    rows.append(np.arange(n - 1))
    cols.append(np.arange(1, n))
    vals.append(np.tile(-1.0 * np.eye(3), (n - 1, 1, 1)))
    matrix = BlockSparseMatrix(
        n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    )
    rhs = rng.standard_normal((n, 3))
    p, info = pcg_solve(matrix, rhs, rel_tol=1e-8)
    assert info.converged
    assert np.linalg.norm(matrix.matvec(p) - rhs) <= 1e-8 * np.linalg.norm(rhs) * 1.01
