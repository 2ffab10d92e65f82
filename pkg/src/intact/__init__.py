"""Penetration-free tetrahedral FEM elastodynamics with augmented-Lagrangian
contact, smoothed friction, and a conservative-advancement line search.

Attributes resolve lazily so that importing the package (or its CLI) does not
pull in numpy before thread-count environment variables are set.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    # mesh
    "TetMesh": ".mesh", "RestData": ".mesh", "SimState": ".mesh",
    "MeshError": ".mesh", "load_mesh": ".mesh", "save_mesh": ".mesh",
    "compute_rest_data": ".mesh", "build_tet_mesh": ".mesh",
    # primitives
    "box_mesh": ".primitives", "five_tet_cube": ".primitives",
    "sphere_mesh": ".primitives", "arch_block_mesh": ".primitives",
    "rotation_matrix": ".primitives", "transformed": ".primitives",
    # elasticity
    "Material": ".elasticity", "MaterialModel": ".elasticity",
    # geometry
    "max_step_size": ".ccd", "static_intersection_test": ".intersect",
    # contact
    "ActiveSet": ".contact", "Constraint": ".contact", "PairKind": ".contact",
    # solver
    "ElasticRegion": ".solver", "solve_subproblem": ".solver",
    # stepper
    "StepParams": ".stepper", "BoundaryCondition": ".stepper",
    "System": ".stepper", "Simulation": ".stepper", "step": ".stepper",
    "StepDiagnostics": ".stepper", "StepAbortError": ".stepper",
    # scene / io
    "SceneConfig": ".scene", "SceneError": ".scene", "BodySpec": ".scene",
    "BoundarySpec": ".scene", "load_scene": ".scene", "save_scene": ".scene",
    "build_scene": ".scene", "CompiledScene": ".scene",
    "export_frame": ".io_utils", "load_obj": ".io_utils",
    "export_diagnostics": ".io_utils",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    try:
        module = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    value = getattr(importlib.import_module(module, __name__), name)
    globals()[name] = value
    return value


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
