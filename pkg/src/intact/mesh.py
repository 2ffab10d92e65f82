"""Tetrahedral mesh loading, rest-state precomputation, and surface extraction."""

from __future__ import annotations

import dataclasses
import logging

import numpy as np

log = logging.getLogger(__name__)

# Faces opposite vertices 0..3 of a positively oriented tet, wound outward.
_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]], dtype=np.int64)

# Elements thinner than this fraction of the mean element volume are rejected.
DEGENERATE_VOLUME_FRACTION = 1e-12


class MeshError(ValueError):
    """Raised for malformed meshes or mesh files."""


@dataclasses.dataclass
class TetMesh:
    """Vertices, positively oriented tets, and the extracted boundary surface."""

    rest_positions: np.ndarray  # (n_verts, 3) float64
    tets: np.ndarray            # (n_tets, 4) int64, det([x1-x0, x2-x0, x3-x0]) > 0
    surface_tris: np.ndarray    # (n_tris, 3) int64, outward wound
    surface_edges: np.ndarray   # (n_edges, 2) int64, unique, sorted pairs
    surface_verts: np.ndarray   # (n_surf_verts,) int64, unique, sorted

    @property
    def n_verts(self) -> int:
        return self.rest_positions.shape[0]

    @property
    def n_tets(self) -> int:
        return self.tets.shape[0]


@dataclasses.dataclass
class RestData:
    """Per-element rest quantities and the lumped vertex masses."""

    inv_rest_shape: np.ndarray  # (n_tets, 3, 3) inverse of [x1-x0 | x2-x0 | x3-x0]
    volumes: np.ndarray         # (n_tets,) positive rest volumes
    shape_rows: np.ndarray      # (n_tets, 4, 3) rows A_i with dF = dx_i A_i
    masses: np.ndarray          # (n_verts,) lumped masses, strictly positive


@dataclasses.dataclass
class SimState:
    """Positions and velocities of every vertex."""

    x: np.ndarray  # (n_verts, 3)
    v: np.ndarray  # (n_verts, 3)

    def copy(self) -> "SimState":
        return SimState(self.x.copy(), self.v.copy())


def tet_volumes(positions: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volumes det([x1-x0, x2-x0, x3-x0]) / 6 for each tet."""
    p = positions[tets]
    d = p[:, 1:] - p[:, :1]
    return np.linalg.det(d.transpose(0, 2, 1)) / 6.0


def build_tet_mesh(positions: np.ndarray, tets: np.ndarray) -> TetMesh:
    """Validates connectivity, fixes inverted elements, and extracts the surface.

    Args:
        positions: (n_verts, 3) vertex coordinates.
        tets: (n_tets, 4) vertex indices; negatively oriented tets are repaired
            by swapping two vertices.

    Raises:
        MeshError: on out-of-range indices or degenerate elements.
    """
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    tets = np.ascontiguousarray(tets, dtype=np.int64)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise MeshError(f"positions must be (n, 3), got {positions.shape}")
    if tets.ndim != 2 or tets.shape[1] != 4:
        raise MeshError(f"tets must be (m, 4), got {tets.shape}")
    if tets.size and (tets.min() < 0 or tets.max() >= len(positions)):
        raise MeshError("tet index out of range")

    vols = tet_volumes(positions, tets)
    flipped = vols < 0.0
    if flipped.any():
        tets = tets.copy()
        tets[flipped, 1], tets[flipped, 2] = tets[flipped, 2], tets[flipped, 1].copy()
        vols = np.abs(vols)
    if tets.size:
        floor = DEGENERATE_VOLUME_FRACTION * float(vols.mean())
        bad = np.nonzero(vols <= floor)[0]
        if bad.size:
            raise MeshError(f"degenerate tet(s) {bad.tolist()[:8]}: volume <= {floor:.3e}")

    tris, edges, verts = extract_surface_arrays(tets)
    return TetMesh(positions, tets, tris, edges, verts)


def extract_surface_arrays(tets: np.ndarray):
    """Boundary faces (appearing once across all tets), their edges and vertices."""
    if len(tets) == 0:
        empty = np.zeros((0, 3), dtype=np.int64)
        return empty, np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    faces = tets[:, _TET_FACES].reshape(-1, 3)
    key = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    boundary = faces[counts[inverse] == 1]

    edges = np.sort(boundary[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1)
    uniq_edges, edge_counts = np.unique(edges, axis=0, return_counts=True)
    if (edge_counts > 2).any():
        n_bad = int((edge_counts > 2).sum())
        log.warning("non-manifold surface: %d edge(s) shared by >2 boundary faces", n_bad)
    verts = np.unique(boundary)
    return boundary, uniq_edges, verts


def extract_surface(mesh: TetMesh):
    """(surface_tris, surface_edges, surface_verts) recomputed from connectivity."""
    return extract_surface_arrays(mesh.tets)


def compute_rest_data(mesh: TetMesh, density: float) -> RestData:
    """Inverse rest shapes, volumes, force-map rows, and lumped masses.

    Each vertex receives 1/4 of the mass of every incident element. The rows
    A_i of the returned shape_rows satisfy dF = sum_i outer(dx_i, A_i).
    """
    if density <= 0.0:
        raise MeshError(f"density must be positive, got {density}")
    p = mesh.rest_positions[mesh.tets]
    dm = (p[:, 1:] - p[:, :1]).transpose(0, 2, 1)  # columns are edge vectors
    volumes = np.linalg.det(dm) / 6.0
    inv = np.linalg.inv(dm)
    # F = Ds @ Dm^-1, so A_k is row k-1 of Dm^-1 for k in 1..3 and A_0 = -sum.
    rows = np.empty((mesh.n_tets, 4, 3))
    rows[:, 1:] = inv
    rows[:, 0] = -inv.sum(axis=1)

    masses = np.zeros(mesh.n_verts)
    share = np.repeat(density * volumes / 4.0, 4)
    np.add.at(masses, mesh.tets.ravel(), share)
    if mesh.n_tets and not (masses[np.unique(mesh.tets)] > 0.0).all():
        raise MeshError("non-positive lumped mass")
    return RestData(inv, volumes, rows, masses)


# ---------------------------------------------------------------------------
# File formats: native ASCII tet meshes plus Gmsh MSH v2 ingestion.

def save_mesh(path: str, positions: np.ndarray, tets: np.ndarray) -> None:
    """Writes the native format: header line, vertex lines, 0-based tet lines."""
    with open(path, "w") as f:
        f.write(f"tetmesh {len(positions)} {len(tets)}\n")
        for p in np.asarray(positions, dtype=np.float64):
            f.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for t in np.asarray(tets, dtype=np.int64):
            f.write(f"{t[0]} {t[1]} {t[2]} {t[3]}\n")


def parse_tetmesh(text: str):
    lines = [ln for ln in (s.strip() for s in text.splitlines()) if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith("tetmesh"):
        raise MeshError("missing 'tetmesh <nverts> <ntets>' header")
    head = lines[0].split()
    if len(head) != 3:
        raise MeshError(f"malformed header: {lines[0]!r}")
    nv, nt = int(head[1]), int(head[2])
    if len(lines) != 1 + nv + nt:
        raise MeshError(f"expected {1 + nv + nt} lines, found {len(lines)}")
    try:
        verts = np.array([[float(v) for v in ln.split()] for ln in lines[1:1 + nv]])
        tets = np.array([[int(v) for v in ln.split()] for ln in lines[1 + nv:]], dtype=np.int64)
    except ValueError as exc:
        raise MeshError(f"unparseable mesh data: {exc}") from exc
    if nv and verts.shape != (nv, 3):
        raise MeshError("vertex lines must hold 3 coordinates")
    if nt and tets.shape != (nt, 4):
        raise MeshError("tet lines must hold 4 indices")
    return verts.reshape(nv, 3), tets.reshape(nt, 4)


def parse_msh_v2(text: str):
    """Extracts nodes and 4-node tets (element type 4) from Gmsh MSH v2 ASCII."""
    lines = text.splitlines()
    ids, coords, tets = [], [], []
    i = 0
    while i < len(lines):
        tag = lines[i].strip()
        if tag == "$MeshFormat":
            version = lines[i + 1].split()[0]
            if not version.startswith("2"):
                raise MeshError(f"unsupported MSH version {version}")
            i += 3
        elif tag == "$Nodes":
            count = int(lines[i + 1])
            for ln in lines[i + 2:i + 2 + count]:
                parts = ln.split()
                ids.append(int(parts[0]))
                coords.append([float(v) for v in parts[1:4]])
            i += count + 3
        elif tag == "$Elements":
            count = int(lines[i + 1])
            for ln in lines[i + 2:i + 2 + count]:
                parts = [int(v) for v in ln.split()]
                etype, ntags = parts[1], parts[2]
                if etype == 4:
                    tets.append(parts[3 + ntags:7 + ntags])
            i += count + 3
        else:
            i += 1
    if not ids:
        raise MeshError("no $Nodes section found")
    if not tets:
        raise MeshError("no 4-node tetrahedra in $Elements")
    remap = {node_id: k for k, node_id in enumerate(ids)}
    tets_arr = np.array([[remap[v] for v in t] for t in tets], dtype=np.int64)
    return np.array(coords), tets_arr


def load_mesh(path: str, density: float):
    """Loads a tet mesh (native or Gmsh MSH v2, sniffed from content).

    Returns:
        (TetMesh, RestData) with the surface extracted and masses lumped.
    """
    with open(path) as f:
        text = f.read()
    stripped = text.lstrip()
    if stripped.startswith("$MeshFormat"):
        verts, tets = parse_msh_v2(text)
    elif stripped.startswith("tetmesh"):
        verts, tets = parse_tetmesh(text)
    else:
        raise MeshError(f"{path}: unrecognized mesh format")
    mesh = build_tet_mesh(verts, tets)
    return mesh, compute_rest_data(mesh, density)
