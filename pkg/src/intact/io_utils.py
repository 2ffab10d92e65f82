"""Frame and diagnostics export.

Frames are OBJ surface meshes: only vertices referenced by surface triangles
are written, with faces remapped to the compact numbering.  Coordinates use
shortest round-trip decimal repr, so re-ingesting a frame reproduces the
positions bit-exactly.  Diagnostics and per-frame state tables are plain CSV
(comma separated, dot decimal, LF line endings).
"""

from __future__ import annotations

import csv

import numpy as np

DIAGNOSTICS_HEADER = ("step", "iter", "alpha", "beta", "n_constraints",
                      "newton_iters", "cg_iters", "wall_ms")
STATE_HEADER = ("frame", "time", "px", "py", "pz", "kinetic", "n_constraints")


def surface_subset(positions: np.ndarray, triangles: np.ndarray):
    """Compacts to the vertices the triangles reference.

    Returns (vertex ids into `positions`, faces renumbered against them).
    """
    used = np.unique(triangles)
    remap = np.zeros(int(used.max()) + 1 if len(used) else 0, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return used, remap[triangles]


def export_frame(positions: np.ndarray, triangles: np.ndarray, path: str) -> None:
    """Writes the surface at the given positions as an OBJ mesh."""
    used, faces = surface_subset(positions, np.asarray(triangles, dtype=np.int64))
    verts = positions[used]
    lines = [f"v {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}" for p in verts]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines))
        if lines:
            f.write("\n")


def load_obj(path: str):
    """Reads vertex positions and triangle faces back from an OBJ file.

    Polygon faces must be triangles; `v/vt/vn` index syntax is tolerated and
    only the vertex index is kept.  Returns (positions (n,3), faces (m,3))
    with 0-based indices.
    """
    positions = []
    faces = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: vertex needs 3 coordinates")
                positions.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: only triangle faces supported")
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return (np.asarray(positions, dtype=np.float64).reshape(-1, 3),
            np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def _cell(value):
    # repr keeps full float precision; ints stay ints.
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(header, rows, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def export_diagnostics(rows, path: str) -> None:
    """One row per outer iteration: step, iter, alpha, beta, n_constraints,
    newton_iters, cg_iters, wall_ms."""
    write_csv(DIAGNOSTICS_HEADER, rows, path)


def diagnostics_rows(step_index: int, diagnostics) -> list[tuple]:
    """Flattens one step's iteration records into diagnostics CSV rows."""
    return [
        (step_index, k, rec.alpha, rec.beta, rec.n_constraints,
         rec.newton_iters, rec.cg_iters, rec.wall_ms)
        for k, rec in enumerate(diagnostics.iterations)
    ]


def export_state_summary(rows, path: str) -> None:
    """Per-frame totals; the momentum columns are the conservation oracle."""
    write_csv(STATE_HEADER, rows, path)


def state_row(frame: int, time: float, masses: np.ndarray, state,
              n_constraints: int) -> tuple:
    momentum = masses @ state.v if len(masses) else np.zeros(3)
    kinetic = 0.5 * float(masses @ np.einsum("ij,ij->i", state.v, state.v)) \
        if len(masses) else 0.0
    return (frame, time, float(momentum[0]), float(momentum[1]),
            float(momentum[2]), kinetic, n_constraints)
