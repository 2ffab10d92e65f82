"""Scene descriptions: JSON ingestion, validation, and system assembly.

A scene is a list of bodies (each a tetrahedral mesh with a material, a
density, and a rigid placement), a list of boundary conditions, stepping
parameters, a frame count, and an output directory.  Units are SI throughout:
metres, seconds, kilograms, pascals.

Bodies come either from a mesh file or from a built-in primitive generator, so
fixtures stay diffable without binary assets.  Scripted boundaries move at a
constant velocity from their placed rest positions; that is the only
trajectory the format encodes.
"""

from __future__ import annotations

import dataclasses
import json
import os
from typing import Optional

import numpy as np

from .elasticity import Material, MaterialModel
from .mesh import MeshError, SimState, TetMesh, compute_rest_data, load_mesh
from .primitives import (
    arch_block_mesh,
    box_mesh,
    five_tet_cube,
    rotation_matrix,
    sphere_mesh,
    transformed,
)
from .solver import ElasticRegion
from .stepper import BoundaryCondition, StepParams, System


class SceneError(ValueError):
    """Configuration rejected; `field` names the offending entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


# ---------------------------------------------------------------------------
# Typed accessors.  Every reader carries the dotted field path so a bad entry
# is reported where it sits, not where it blows up.


def _mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise SceneError(path, f"expected an object, got {type(value).__name__}")
    return value


def _sequence(value, path: str) -> list:
    if not isinstance(value, list):
        raise SceneError(path, f"expected an array, got {type(value).__name__}")
    return value


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SceneError(path, f"expected a number, got {type(value).__name__}")
    return float(value)


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SceneError(path, f"expected an integer, got {type(value).__name__}")
    return value


def _string(value, path: str) -> str:
    if not isinstance(value, str):
        raise SceneError(path, f"expected a string, got {type(value).__name__}")
    return value


def _vec3(value, path: str) -> tuple[float, float, float]:
    seq = _sequence(value, path)
    if len(seq) != 3:
        raise SceneError(path, f"expected 3 components, got {len(seq)}")
    return tuple(_number(v, f"{path}[{i}]") for i, v in enumerate(seq))


def _check_keys(mapping: dict, allowed: set[str], path: str) -> None:
    extra = set(mapping) - allowed
    if extra:
        raise SceneError(path, f"unknown field(s): {', '.join(sorted(extra))}")


# ---------------------------------------------------------------------------
# Body and boundary specifications.


_PRIMITIVE_FIELDS = {
    "box": {"nx": 1, "ny": 1, "nz": 1, "size": 1.0},
    "cube": {"size": 1.0},
    "sphere": {"n": 4, "radius": 0.5},
    "arch-block": {"theta0": None, "theta1": None, "r_inner": None,
                   "r_outer": None, "depth": None},
}


@dataclasses.dataclass
class BodySpec:
    """One body: geometry source, material, and rigid placement."""

    material: Material
    density: float
    mesh: Optional[str] = None
    primitive: Optional[dict] = None
    translate: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotate: Optional[dict] = None  # {"axis": vec3, "angle": radians}
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        out: dict = {}
        if self.mesh is not None:
            out["mesh"] = self.mesh
        else:
            out["primitive"] = dict(self.primitive)
        out["material"] = {
            "model": self.material.model.value,
            "young": self.material.young,
            "poisson": self.material.poisson,
        }
        out["density"] = self.density
        if any(self.translate):
            out["translate"] = list(self.translate)
        if self.rotate is not None:
            out["rotate"] = {"axis": list(self.rotate["axis"]),
                             "angle": self.rotate["angle"]}
        if any(self.velocity):
            out["velocity"] = list(self.velocity)
        return out


@dataclasses.dataclass
class BoundarySpec:
    """Dirichlet selection on one body: explicit vertices or an AABB filter."""

    body: int
    kind: str = "fixed"
    vertices: Optional[list[int]] = None
    box: Optional[tuple] = None  # (lo vec3, hi vec3) on placed rest positions
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        out: dict = {"body": self.body, "kind": self.kind}
        if self.vertices is not None:
            out["vertices"] = list(self.vertices)
        else:
            out["box"] = [list(self.box[0]), list(self.box[1])]
        if self.kind == "scripted":
            out["velocity"] = list(self.velocity)
        return out


@dataclasses.dataclass
class SceneConfig:
    bodies: list[BodySpec]
    params: StepParams
    boundary: list[BoundarySpec] = dataclasses.field(default_factory=list)
    frames: int = 1
    output_dir: str = "out"

    def to_dict(self) -> dict:
        params = dataclasses.asdict(self.params)
        params["gravity"] = list(self.params.gravity)
        return {
            "frames": self.frames,
            "output_dir": self.output_dir,
            "params": params,
            "bodies": [b.to_dict() for b in self.bodies],
            "boundary": [b.to_dict() for b in self.boundary],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


_SCENE_KEYS = {"frames", "output_dir", "params", "bodies", "boundary"}
_BODY_KEYS = {"mesh", "primitive", "material", "density", "translate",
              "rotate", "velocity"}
_BOUNDARY_KEYS = {"body", "kind", "vertices", "box", "velocity"}
_PARAM_KEYS = {f.name for f in dataclasses.fields(StepParams)}


def _parse_material(raw, path: str) -> Material:
    m = _mapping(raw, path)
    _check_keys(m, {"model", "young", "poisson"}, path)
    if "model" not in m:
        raise SceneError(f"{path}.model", "missing required field")
    name = _string(m["model"], f"{path}.model")
    try:
        model = MaterialModel(name)
    except ValueError:
        options = ", ".join(mm.value for mm in MaterialModel)
        raise SceneError(f"{path}.model", f"unknown model {name!r} (one of: {options})")
    if "young" not in m:
        raise SceneError(f"{path}.young", "missing required field")
    if "poisson" not in m:
        raise SceneError(f"{path}.poisson", "missing required field")
    young = _number(m["young"], f"{path}.young")
    poisson = _number(m["poisson"], f"{path}.poisson")
    try:
        return Material(model, young, poisson)
    except ValueError as e:
        raise SceneError(path, str(e))


def _parse_primitive(raw, path: str) -> dict:
    p = _mapping(raw, path)
    if "kind" not in p:
        raise SceneError(f"{path}.kind", "missing required field")
    kind = _string(p["kind"], f"{path}.kind")
    if kind not in _PRIMITIVE_FIELDS:
        options = ", ".join(sorted(_PRIMITIVE_FIELDS))
        raise SceneError(f"{path}.kind", f"unknown primitive {kind!r} (one of: {options})")
    fields = _PRIMITIVE_FIELDS[kind]
    _check_keys(p, set(fields) | {"kind"}, path)
    spec = {"kind": kind}
    for name, default in fields.items():
        if name in p:
            if kind == "box" and name == "size" and isinstance(p[name], list):
                spec[name] = list(_vec3(p[name], f"{path}.{name}"))
            elif isinstance(default, int) and not isinstance(default, bool):
                spec[name] = _integer(p[name], f"{path}.{name}")
            else:
                spec[name] = _number(p[name], f"{path}.{name}")
        elif default is None:
            raise SceneError(f"{path}.{name}", "missing required field")
        else:
            spec[name] = default
    for name in ("nx", "ny", "nz", "n"):
        if name in spec and spec[name] < 1:
            raise SceneError(f"{path}.{name}", "must be at least 1")
    for name in ("size", "radius", "depth"):
        if name in spec and np.min(spec[name]) <= 0:
            raise SceneError(f"{path}.{name}", "must be positive")
    return spec


def _parse_body(raw, path: str) -> BodySpec:
    b = _mapping(raw, path)
    _check_keys(b, _BODY_KEYS, path)
    has_mesh = "mesh" in b
    has_prim = "primitive" in b
    if has_mesh == has_prim:
        raise SceneError(path, "exactly one of 'mesh' or 'primitive' is required")
    mesh = _string(b["mesh"], f"{path}.mesh") if has_mesh else None
    primitive = _parse_primitive(b["primitive"], f"{path}.primitive") if has_prim else None
    if "material" not in b:
        raise SceneError(f"{path}.material", "missing required field")
    material = _parse_material(b["material"], f"{path}.material")
    if "density" not in b:
        raise SceneError(f"{path}.density", "missing required field")
    density = _number(b["density"], f"{path}.density")
    if density <= 0:
        raise SceneError(f"{path}.density", "must be positive")
    translate = _vec3(b["translate"], f"{path}.translate") if "translate" in b else (0.0, 0.0, 0.0)
    rotate = None
    if "rotate" in b:
        r = _mapping(b["rotate"], f"{path}.rotate")
        _check_keys(r, {"axis", "angle"}, f"{path}.rotate")
        if "axis" not in r or "angle" not in r:
            raise SceneError(f"{path}.rotate", "requires 'axis' and 'angle'")
        axis = _vec3(r["axis"], f"{path}.rotate.axis")
        if not any(axis):
            raise SceneError(f"{path}.rotate.axis", "must be nonzero")
        rotate = {"axis": axis, "angle": _number(r["angle"], f"{path}.rotate.angle")}
    velocity = _vec3(b["velocity"], f"{path}.velocity") if "velocity" in b else (0.0, 0.0, 0.0)
    return BodySpec(material=material, density=density, mesh=mesh,
                    primitive=primitive, translate=translate, rotate=rotate,
                    velocity=velocity)


def _parse_boundary(raw, path: str, n_bodies: int) -> BoundarySpec:
    b = _mapping(raw, path)
    _check_keys(b, _BOUNDARY_KEYS, path)
    if "body" not in b:
        raise SceneError(f"{path}.body", "missing required field")
    body = _integer(b["body"], f"{path}.body")
    if not 0 <= body < n_bodies:
        raise SceneError(f"{path}.body", f"index {body} out of range for {n_bodies} bodies")
    kind = _string(b.get("kind", "fixed"), f"{path}.kind")
    if kind not in ("fixed", "scripted"):
        raise SceneError(f"{path}.kind", f"must be 'fixed' or 'scripted', got {kind!r}")
    has_verts = "vertices" in b
    has_box = "box" in b
    if has_verts == has_box:
        raise SceneError(path, "exactly one of 'vertices' or 'box' is required")
    vertices = None
    box = None
    if has_verts:
        seq = _sequence(b["vertices"], f"{path}.vertices")
        vertices = [_integer(v, f"{path}.vertices[{i}]") for i, v in enumerate(seq)]
        if not vertices:
            raise SceneError(f"{path}.vertices", "selection is empty")
        if any(v < 0 for v in vertices):
            raise SceneError(f"{path}.vertices", "indices must be non-negative")
    else:
        pair = _sequence(b["box"], f"{path}.box")
        if len(pair) != 2:
            raise SceneError(f"{path}.box", "expected [lo, hi] corner pair")
        lo = _vec3(pair[0], f"{path}.box[0]")
        hi = _vec3(pair[1], f"{path}.box[1]")
        if any(l > h for l, h in zip(lo, hi)):
            raise SceneError(f"{path}.box", "lo corner exceeds hi corner")
        box = (lo, hi)
    velocity = (0.0, 0.0, 0.0)
    if kind == "scripted":
        if "velocity" not in b:
            raise SceneError(f"{path}.velocity", "scripted boundary requires a velocity")
        velocity = _vec3(b["velocity"], f"{path}.velocity")
    elif "velocity" in b:
        raise SceneError(f"{path}.velocity", "fixed boundary takes no velocity")
    return BoundarySpec(body=body, kind=kind, vertices=vertices, box=box,
                        velocity=velocity)


def _parse_params(raw, path: str) -> StepParams:
    p = _mapping(raw, path)
    _check_keys(p, _PARAM_KEYS, path)
    if "h" not in p:
        raise SceneError(f"{path}.h", "missing required field")
    kwargs: dict = {"offset": 1e-3}
    for name, value in p.items():
        field_path = f"{path}.{name}"
        if name == "gravity":
            kwargs[name] = _vec3(value, field_path)
        elif name == "min_iterations":
            kwargs[name] = _integer(value, field_path)
        else:
            kwargs[name] = _number(value, field_path)
    try:
        return StepParams(**kwargs)
    except ValueError as e:
        raise SceneError(path, str(e))


def scene_from_dict(raw) -> SceneConfig:
    d = _mapping(raw, "scene")
    _check_keys(d, _SCENE_KEYS, "scene")
    frames = _integer(d["frames"], "scene.frames") if "frames" in d else 1
    if frames < 0:
        raise SceneError("scene.frames", "must be non-negative")
    output_dir = _string(d.get("output_dir", "out"), "scene.output_dir")
    if "params" not in d:
        raise SceneError("scene.params", "missing required field (needs at least h)")
    params = _parse_params(d["params"], "scene.params")
    if "bodies" not in d:
        raise SceneError("scene.bodies", "missing required field")
    bodies = [
        _parse_body(raw_body, f"scene.bodies[{i}]")
        for i, raw_body in enumerate(_sequence(d["bodies"], "scene.bodies"))
    ]
    boundary = [
        _parse_boundary(raw_bc, f"scene.boundary[{i}]", len(bodies))
        for i, raw_bc in enumerate(_sequence(d.get("boundary", []), "scene.boundary"))
    ]
    return SceneConfig(bodies=bodies, boundary=boundary, params=params,
                       frames=frames, output_dir=output_dir)


def scene_loads(text: str) -> SceneConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneError("json", f"line {e.lineno}, column {e.colno}: {e.msg}")
    return scene_from_dict(raw)


def load_scene(path: str) -> SceneConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise SceneError("scene", f"cannot read {path}: {e.strerror}")
    return scene_loads(text)


def save_scene(config: SceneConfig, path: str) -> None:
    with open(path, "w") as f:
        f.write(config.dumps())


# ---------------------------------------------------------------------------
# Assembly: specs -> placed meshes -> one stacked System.


def _generate_primitive(spec: dict) -> TetMesh:
    kind = spec["kind"]
    if kind == "box":
        return box_mesh(spec["nx"], spec["ny"], spec["nz"], size=spec["size"])
    if kind == "cube":
        return five_tet_cube(size=spec["size"])
    if kind == "sphere":
        return sphere_mesh(n=spec["n"], radius=spec["radius"])
    return arch_block_mesh(spec["theta0"], spec["theta1"], spec["r_inner"],
                           spec["r_outer"], spec["depth"])


def build_body(spec: BodySpec, base_dir: str, path: str):
    """Returns the placed mesh and its rest data (masses, volumes, shape rows)."""
    if spec.mesh is not None:
        mesh_path = spec.mesh
        if not os.path.isabs(mesh_path):
            mesh_path = os.path.join(base_dir, mesh_path)
        if not os.path.exists(mesh_path):
            raise SceneError(f"{path}.mesh", f"file not found: {mesh_path}")
        try:
            mesh, _ = load_mesh(mesh_path, spec.density)
        except MeshError as e:
            raise SceneError(f"{path}.mesh", str(e))
    else:
        mesh = _generate_primitive(spec.primitive)
    rotate = None
    if spec.rotate is not None:
        rotate = rotation_matrix(spec.rotate["axis"], spec.rotate["angle"])
    placed = transformed(mesh, translate=spec.translate, rotate=rotate)
    # Rest data comes from the placed configuration: the body is stress-free
    # where the scene puts it.
    return placed, compute_rest_data(placed, spec.density)


@dataclasses.dataclass
class CompiledScene:
    """A SceneConfig lowered to simulation inputs, with body bookkeeping."""

    system: System
    state: SimState
    meshes: list[TetMesh]   # placed per-body meshes, global ids = local + offset
    offsets: np.ndarray     # (n_bodies + 1,) vertex offsets into the stacked arrays

    def body_slice(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))


def _resolve_selection(bc: BoundarySpec, mesh: TetMesh, offset: int, path: str) -> np.ndarray:
    if bc.vertices is not None:
        local = np.asarray(bc.vertices, dtype=np.int64)
        if local.max() >= mesh.n_verts:
            raise SceneError(f"{path}.vertices",
                             f"index {int(local.max())} out of range for body with "
                             f"{mesh.n_verts} vertices")
    else:
        lo = np.asarray(bc.box[0])
        hi = np.asarray(bc.box[1])
        inside = np.all((mesh.rest_positions >= lo) & (mesh.rest_positions <= hi), axis=1)
        local = np.flatnonzero(inside).astype(np.int64)
        if len(local) == 0:
            raise SceneError(f"{path}.box", "selects no vertices")
    return local + offset


def _scripted_trajectory(start: np.ndarray, velocity, h: float):
    v = np.asarray(velocity, dtype=np.float64)

    def trajectory(step_index: int) -> np.ndarray:
        # Target at the end of the given step.
        return start + (step_index + 1) * h * v

    return trajectory


def build_scene(config: SceneConfig, base_dir: str = ".") -> CompiledScene:
    """Places every body, stacks the arrays, and resolves boundaries."""
    meshes: list[TetMesh] = []
    masses_parts = []
    regions = []
    tris_parts, edges_parts, verts_parts = [], [], []
    x_parts, v_parts = [], []
    offsets = [0]
    for i, spec in enumerate(config.bodies):
        placed, rest = build_body(spec, base_dir, f"scene.bodies[{i}]")
        off = offsets[-1]
        meshes.append(placed)
        masses_parts.append(rest.masses)
        regions.append(ElasticRegion(
            material=spec.material,
            tets=placed.tets + off,
            shape_rows=rest.shape_rows,
            volumes=rest.volumes,
        ))
        tris_parts.append(placed.surface_tris + off)
        edges_parts.append(placed.surface_edges + off)
        verts_parts.append(placed.surface_verts + off)
        x_parts.append(placed.rest_positions)
        v_parts.append(np.tile(np.asarray(spec.velocity, dtype=np.float64),
                               (placed.n_verts, 1)))
        offsets.append(off + placed.n_verts)

    boundary = []
    for i, bc in enumerate(config.boundary):
        mesh = meshes[bc.body]
        offset = offsets[bc.body]
        path = f"scene.boundary[{i}]"
        ids = _resolve_selection(bc, mesh, offset, path)
        if bc.kind == "fixed":
            boundary.append(BoundaryCondition(ids, kind="fixed"))
        else:
            start = mesh.rest_positions[ids - offset].copy()
            boundary.append(BoundaryCondition(
                ids, kind="scripted",
                trajectory=_scripted_trajectory(start, bc.velocity, config.params.h),
            ))

    if masses_parts:
        masses = np.concatenate(masses_parts)
        x = np.vstack(x_parts)
        v = np.vstack(v_parts)
        tris = np.vstack(tris_parts)
        edges = np.vstack(edges_parts)
        verts = np.concatenate(verts_parts)
    else:
        masses = np.zeros(0)
        x = np.zeros((0, 3))
        v = np.zeros((0, 3))
        tris = np.zeros((0, 3), dtype=np.int64)
        edges = np.zeros((0, 2), dtype=np.int64)
        verts = np.zeros(0, dtype=np.int64)

    try:
        system = System(
            masses=masses,
            regions=regions,
            surface_triangles=tris,
            surface_edges=edges,
            surface_vertices=verts,
            boundary=boundary,
        )
    except ValueError as e:
        raise SceneError("scene.boundary", str(e))
    return CompiledScene(system=system, state=SimState(x, v),
                         meshes=meshes, offsets=np.asarray(offsets, dtype=np.int64))
