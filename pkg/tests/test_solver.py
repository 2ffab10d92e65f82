"""Subproblem solver tests: assembly oracles, line search, Newton behavior."""

import numpy as np
import pytest

from intact.contact import ActiveSet, Constraint, linearize
from intact.distance import PairKind
from intact.elasticity import (
    Material,
    MaterialModel,
    deformation_gradients,
    eigen_system,
    mode_matrices,
)
from intact.mesh import build_tet_mesh, compute_rest_data
from intact.primitives import sphere_mesh
from intact.solver import (
    ElasticRegion,
    assemble,
    incremental_energy,
    line_search,
    solve_subproblem,
)
from intact.sparse import pcg_solve

UNIT_TET = np.array(
    [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
)


def single_tet_region(material, positions=UNIT_TET, density=1000.0):
    mesh = build_tet_mesh(positions, np.array([[0, 1, 2, 3]]))
    rest = compute_rest_data(mesh, density)
    region = ElasticRegion(material, mesh.tets, rest.shape_rows, rest.volumes)
    return region, rest.masses


def plane_constraint_set(x):
    """One vertex-face constraint: vertex 4 against triangle (5, 6, 7)."""
    active = ActiveSet()
    con = Constraint(kind=PairKind.VERTEX_FACE, indices=np.array([4, 5, 6, 7]))
    assert linearize(con, x)
    active.add(con)
    return active


def test_rest_pose_zero_gradient():
    for model in MaterialModel:
        material = Material(model=model, young=1e5, poisson=0.3)
        region, masses = single_tet_region(material)
        grad, H = assemble(
            UNIT_TET, UNIT_TET, masses, [region], None, mu=1.0, offset=0.0, h=0.01
        )
        assert np.all(grad == 0.0)


def test_free_fall_reaches_inertia_target_in_one_iteration():
    masses = np.array([2.0])
    x0 = np.zeros((1, 3))
    x_tilde = np.array([[0.3, -0.1, 0.7]])
    res = solve_subproblem(
        x_tilde, x0, x0, masses, [], ActiveSet(), mu=1.0, offset=0.0, h=0.01
    )
    assert res.newton_iters == 1
    assert np.array_equal(res.x_hat, x_tilde)


def test_zero_gradient_entry_returns_start_unchanged():
    masses = np.array([1.5])
    x = np.array([[0.2, 0.4, 0.6]])
    res = solve_subproblem(x, x, x, masses, [], ActiveSet(), mu=1.0, offset=0.0, h=0.01)
    assert res.newton_iters == 0
    assert np.array_equal(res.x_hat, x)


def test_linear_elasticity_single_newton_iteration(rng):
    material = Material(model=MaterialModel.LIN, young=2e4, poisson=0.3)
    region, masses = single_tet_region(material)
    h = 0.02
    x_tilde = UNIT_TET + rng.standard_normal((4, 3)) * 0.05
    res = solve_subproblem(
        x_tilde, UNIT_TET, UNIT_TET, masses, [region], ActiveSet(),
        mu=1.0, offset=0.0, h=h, cg_tol=1e-12,
    )
    assert res.newton_iters == 1
    # Quadratic objective: the minimizer satisfies H (x - x0) = -G(x0).
    grad, H = assemble(UNIT_TET, x_tilde, masses, [region], None, 1.0, 0.0, h)
    dense = H.to_dense()
    oracle = UNIT_TET.ravel() + np.linalg.solve(dense, -grad.ravel())
    assert np.linalg.norm(res.x_hat.ravel() - oracle) <= 1e-8 * np.linalg.norm(oracle)


def test_hessian_columns_match_fd_of_gradient(rng):
    # Gentle stretch keeps every elastic eigenvalue positive (no clamping) and
    # the contact active (s = 0), so H is the true Jacobian of G.
    material = Material(model=MaterialModel.SNH, young=1e4, poisson=0.3)
    base = np.vstack([UNIT_TET * 1.03, [[0.3, 0.3, 0.55], [0.0, 0.0, 0.5],
                                        [2.0, 0.0, 0.5], [0.0, 2.0, 0.5]]])
    region, _ = single_tet_region(material, positions=UNIT_TET)
    masses = np.full(8, 0.7)
    F = deformation_gradients(base, region.tets, region.shape_rows)
    es = eigen_system(material, F)
    assert (es.lam > 0.0).all()
    active = plane_constraint_set(base)
    batch_src = list(active)[0]
    batch_src.lam = 2.0  # c = 0.05 - offset < lam/mu keeps the constraint active
    active.refresh_anchors(base)
    batch = active.batch()
    h = 0.1
    mu, offset = 5.0, 0.2
    x_tilde = base + rng.standard_normal((8, 3)) * 0.01

    def grad_of(y):
        g, _ = assemble(y, x_tilde, masses, [region], batch, mu, offset, h)
        return g.ravel()

    _, H = assemble(base, x_tilde, masses, [region], batch, mu, offset, h)
    dense = H.to_dense()
    eps = 1e-6
    for j in range(24):
        e = np.zeros(24)
        e[j] = eps
        fd = (grad_of(base + e.reshape(8, 3)) - grad_of(base - e.reshape(8, 3))) / (2 * eps)
        scale = max(np.linalg.norm(fd), 1.0)
        assert np.linalg.norm(dense[:, j] - fd) <= 1e-5 * scale


def test_assembled_hessian_spd_probe(rng):
    material = Material(model=MaterialModel.SNH, young=1e5, poisson=0.4)
    region, _ = single_tet_region(material, positions=UNIT_TET)
    masses = np.full(8, 0.5)
    x = np.vstack([UNIT_TET + rng.standard_normal((4, 3)) * 0.2,
                   [[0.3, 0.3, 0.4], [0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0]]])
    active = plane_constraint_set(x)
    active.refresh_anchors(x)
    _, H = assemble(x, x, masses, [region], active.batch(), mu=20.0, offset=0.1, h=0.05)
    for _ in range(20):
        v = rng.standard_normal((8, 3))
        assert float(np.sum(v * H.matvec(v))) > 0.0


def test_line_search_full_step_on_quadratic():
    target = np.array([[1.0, 2.0, 3.0]])
    energy = lambda y: 0.5 * float(np.sum((y - target) ** 2))
    x = np.zeros((1, 3))
    r, stalled = line_search(x, target - x, energy)
    assert r == 1.0 and not stalled


def test_line_search_backtracks_on_overshoot():
    target = np.array([[1.0, 0.0, 0.0]])
    energy = lambda y: 0.5 * float(np.sum((y - target) ** 2))
    x = np.zeros((1, 3))
    r, stalled = line_search(x, 100.0 * (target - x), energy)
    assert r < 1.0 and not stalled
    assert energy(x + r * 100.0 * (target - x)) < energy(x)


def test_line_search_stall_on_ascent():
    energy = lambda y: float(np.sum(y**2))
    x = np.ones((1, 3))
    r, stalled = line_search(x, x.copy(), energy)  # uphill direction
    assert stalled
    assert r == pytest.approx(0.5**30)


def test_line_search_respects_safety_cap():
    target = np.array([[1.0, 0.0, 0.0]])
    energy = lambda y: 0.5 * float(np.sum((y - target) ** 2))
    x = np.zeros((1, 3))
    r, stalled = line_search(x, target - x, energy, safe_cap=0.25)
    assert r <= 0.25 and not stalled


def test_inversion_cap_keeps_det_positive():
    from intact.elasticity import inversion_safe_step

    material = Material(model=MaterialModel.NH, young=1e4, poisson=0.3)
    region, masses = single_tet_region(material)
    # Push the apex through the opposite face: inverts at r ~ 0.75.
    p = np.zeros((4, 3))
    p[3] = [0.0, 0.0, -1.5]
    safe = inversion_safe_step(material, UNIT_TET, p, region.tets, region.shape_rows)
    assert 0.0 < safe < 0.75
    x_tilde = UNIT_TET + p  # inertia pulls straight into the inversion

    def energy(y):
        return incremental_energy(y, x_tilde, masses, [region], None, 1.0, 0.0, 0.05)

    r, stalled = line_search(UNIT_TET, p, energy, safe_cap=safe)
    assert r <= safe and not stalled
    F = deformation_gradients(UNIT_TET + r * p, region.tets, region.shape_rows)
    assert np.linalg.det(F[0]) > 0.0


def test_plane_settle_matches_kkt_and_geometric_decay():
    # Single unit mass pushed into a plane constraint: the converged state
    # sits one offset above the plane, and |c| contracts by m/(m+mu) per
    # outer iteration (1/11 here), comfortably under the 0.9 requirement.
    # The constraint stays pressing throughout, so its weight holds at 1
    # and the sweep's decay parameter never engages.
    x0 = np.array([[0.4, 0.4, 0.05], [0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    masses = np.ones(4)
    dbc = np.array([False, True, True, True])
    x_tilde = x0.copy()
    x_tilde[0, 2] = -0.2
    active = ActiveSet()
    con = Constraint(kind=PairKind.VERTEX_FACE, indices=np.array([0, 1, 2, 3]))
    active.add(con)
    mu, offset = 10.0, 0.1
    x_hat = x0.copy()
    violations = []
    for _ in range(12):
        res = solve_subproblem(
            x_tilde, x0, x_hat, masses, [], active, mu=mu, offset=offset,
            h=0.01, cg_tol=1e-12, decay=0.9, dbc_mask=dbc,
        )
        x_hat = res.x_hat
        violations.append(res.worst_violation)
        assert np.array_equal(x_hat[1:], x0[1:])  # DBC rows pinned bit-exactly
    v = np.array(violations)
    live = v > 1e-9
    ratios = v[1:][live[:-1]] / v[:-1][live[:-1]]
    assert (ratios < 0.9).all()
    assert v.min() < 1e-8
    assert x_hat[0, 2] == pytest.approx(offset, abs=1e-6)
    assert con.lam == pytest.approx(0.3, rel=1e-5)  # balances m * (z - z_tilde)


def test_subproblem_strictly_decreases_objective(rng):
    material = Material(model=MaterialModel.SNH, young=5e4, poisson=0.35)
    region, _ = single_tet_region(material)
    masses = np.full(8, 1.0)
    x = np.vstack([UNIT_TET, [[0.3, 0.3, 0.3], [0.0, 0.0, -0.2], [2.0, 0.0, -0.2], [0.0, 2.0, -0.2]]])
    active = plane_constraint_set(x)
    x_tilde = x + rng.standard_normal((8, 3)) * 0.03
    mu, offset, h = 15.0, 0.1, 0.02
    res = solve_subproblem(x_tilde, x, x, masses, [region], active, mu, offset, h)
    batch = active.batch()
    e0 = incremental_energy(x, x_tilde, masses, [region], batch, mu, offset, h)
    e1 = incremental_energy(res.x_hat, x_tilde, masses, [region], batch, mu, offset, h)
    assert e1 < e0
    assert not res.stalled


def test_pcg_sphere_compression_iteration_bound():
    mesh = sphere_mesh(n=6, radius=0.5)
    rest = compute_rest_data(mesh, 1000.0)
    material = Material(model=MaterialModel.SNH, young=1e5, poisson=0.4)
    region = ElasticRegion(material, mesh.tets, rest.shape_rows, rest.volumes)
    x = mesh.rest_positions * np.array([1.0, 1.0, 0.72])  # flattened sphere
    grad, H = assemble(x, x, rest.masses, [region], None, mu=1.0, offset=0.0, h=0.01)
    p, info = pcg_solve(H, -grad, rel_tol=1e-4)
    assert info.converged
    assert info.iterations <= 250
