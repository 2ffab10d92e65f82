"""Procedural tetrahedral meshes for scenes and tests."""

from __future__ import annotations

import numpy as np

from .mesh import TetMesh, build_tet_mesh

# Kuhn subdivision of the unit cube: six tets around the main diagonal, all
# positively oriented and conforming across grid cells.
_CUBE_TETS = np.array(
    [
        [0, 1, 3, 7],
        [0, 3, 2, 7],
        [0, 2, 6, 7],
        [0, 6, 4, 7],
        [0, 4, 5, 7],
        [0, 5, 1, 7],
    ],
    dtype=np.int64,
)


def grid_points(nx: int, ny: int, nz: int, size) -> np.ndarray:
    """Vertices of an (nx, ny, nz)-cell lattice spanning [0, size] per axis."""
    sx, sy, sz = (float(s) for s in np.broadcast_to(size, 3))
    xs = np.linspace(0.0, sx, nx + 1)
    ys = np.linspace(0.0, sy, ny + 1)
    zs = np.linspace(0.0, sz, nz + 1)
    grid = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1)
    return grid.reshape(-1, 3)


def _cell_tets(nx: int, ny: int, nz: int) -> np.ndarray:
    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                corner = np.array(
                    [
                        vid(i, j, k),
                        vid(i, j, k + 1),
                        vid(i, j + 1, k),
                        vid(i, j + 1, k + 1),
                        vid(i + 1, j, k),
                        vid(i + 1, j, k + 1),
                        vid(i + 1, j + 1, k),
                        vid(i + 1, j + 1, k + 1),
                    ]
                )
                tets.append(corner[_CUBE_TETS])
    return np.concatenate(tets, axis=0) if tets else np.zeros((0, 4), dtype=np.int64)


def box_mesh(nx: int, ny: int, nz: int, size=1.0, origin=(0.0, 0.0, 0.0)) -> TetMesh:
    """Axis-aligned box of nx*ny*nz cells, six tets per cell."""
    verts = grid_points(nx, ny, nz, size) + np.asarray(origin, dtype=np.float64)
    return build_tet_mesh(verts, _cell_tets(nx, ny, nz))


def five_tet_cube(size: float = 1.0, origin=(0.0, 0.0, 0.0)) -> TetMesh:
    """Single cube split into 4 corner tets plus 1 central tet."""
    s = float(size)
    o = np.asarray(origin, dtype=np.float64)
    corners = o + s * np.array(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0],
         [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]],
        dtype=np.float64,
    )
    tets = np.array(
        [[0, 1, 2, 4], [1, 3, 2, 7], [1, 7, 4, 5], [2, 7, 6, 4], [1, 2, 4, 7]],
        dtype=np.int64,
    )
    return build_tet_mesh(corners, tets)


def sphere_mesh(n: int = 4, radius: float = 0.5, center=(0.0, 0.0, 0.0)) -> TetMesh:
    """Sphere from a cube grid mapped radially (cube-to-sphere projection)."""
    verts = grid_points(n, n, n, 2.0) - 1.0
    sup = np.abs(verts).max(axis=1)
    nrm = np.linalg.norm(verts, axis=1)
    scale = np.where(nrm > 0.0, sup / np.maximum(nrm, 1e-300), 0.0)
    verts = verts * scale[:, None] * radius + np.asarray(center, dtype=np.float64)
    return build_tet_mesh(verts, _cell_tets(n, n, n))


def transformed(mesh: TetMesh, translate=(0.0, 0.0, 0.0), rotate: np.ndarray | None = None) -> TetMesh:
    """Rigidly transformed copy (rotation applied about the origin first)."""
    verts = mesh.rest_positions
    if rotate is not None:
        verts = verts @ np.asarray(rotate, dtype=np.float64).T
    verts = verts + np.asarray(translate, dtype=np.float64)
    return TetMesh(verts, mesh.tets.copy(), mesh.surface_tris.copy(),
                   mesh.surface_edges.copy(), mesh.surface_verts.copy())


def arch_block_mesh(theta0: float, theta1: float, r_inner: float, r_outer: float,
                    depth: float, cells=(2, 2, 1)) -> TetMesh:
    """One voussoir: a box grid mapped onto an annular sector in the x-z plane.

    The sector spans [theta0, theta1] measured from the +x axis, with y as the
    extrusion (depth) axis. theta increases toward +z, so a half arch spans
    [0, pi].
    """
    nu, nv, nw = cells
    verts = grid_points(nu, nv, nw, 1.0)
    r = r_inner + verts[:, 0] * (r_outer - r_inner)
    th = theta0 + verts[:, 1] * (theta1 - theta0)
    mapped = np.stack([r * np.cos(th), verts[:, 2] * depth, r * np.sin(th)], axis=1)
    return build_tet_mesh(mapped, _cell_tets(nu, nv, nw))


def rotation_matrix(axis, angle: float) -> np.ndarray:
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    c, s = np.cos(angle), np.sin(angle)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return c * np.eye(3) + s * k + (1 - c) * np.outer(a, a)
