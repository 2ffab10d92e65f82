"""Named validation suites with pinned thresholds.

Each suite builds a desk-scale fixture through the scene layer, simulates it,
checks its thresholds, and writes a plot-ready CSV.  The suites double as the
system-level evidence base: every accepted state is intersection-tested as it
is produced, and per-run solver statistics (termination, stagnation escapes,
constraint counts) are kept so aggregate guarantees can be asserted over the
whole collection afterwards.
"""

from __future__ import annotations

import dataclasses
import math
import os

import numpy as np

from .contact import ActiveSet
from .elasticity import Material, MaterialModel
from .intersect import static_intersection_test
from .io_utils import write_csv
from .primitives import rotation_matrix
from .scene import BodySpec, BoundarySpec, CompiledScene, SceneConfig, build_scene
from .stepper import Simulation, StepAbortError, StepParams

FIX_ALL = ((-1e9, -1e9, -1e9), (1e9, 1e9, 1e9))


# ---------------------------------------------------------------------------
# Shared driver: one simulated fixture with bookkeeping for the aggregate
# guarantees (no accepted state intersects, every step terminates cleanly).


@dataclasses.dataclass
class RunRecord:
    name: str
    params: StepParams
    diagnostics: list = dataclasses.field(default_factory=list)
    states: list = dataclasses.field(default_factory=list)
    intersection_hits: int = 0
    aborted: bool = False
    final: object = None

    @property
    def total_outer(self) -> int:
        return sum(len(d.iterations) for d in self.diagnostics)

    @property
    def total_newton(self) -> int:
        return sum(r.newton_iters for d in self.diagnostics for r in d.iterations)

    @property
    def peak_constraints(self) -> int:
        counts = [r.n_constraints for d in self.diagnostics for r in d.iterations]
        return max(counts) if counts else 0

    @property
    def adaptive_triggers(self) -> int:
        return sum(d.adaptive_triggers for d in self.diagnostics)

    @property
    def terminated(self) -> bool:
        if self.aborted:
            return False
        return all(d.iterations[-1].beta <= self.params.epsilon
                   for d in self.diagnostics)


def simulate(compiled: CompiledScene, params: StepParams, n_steps: int,
             name: str = "run", store_stride: int = 0, collect=None,
             check_intersections: bool = True,
             active_set: ActiveSet | None = None) -> RunRecord:
    """Steps the fixture, vetting every accepted state as it appears."""
    sim = Simulation(compiled.system, params, compiled.state.copy(),
                     active_set=active_set if active_set is not None else ActiveSet())
    rec = RunRecord(name=name, params=params)
    tris = compiled.system.surface_triangles
    for k in range(n_steps):
        try:
            diag = sim.advance()
        except StepAbortError as e:
            rec.diagnostics.append(e.diagnostics)
            rec.aborted = True
            break
        rec.diagnostics.append(diag)
        if check_intersections:
            rec.intersection_hits += len(static_intersection_test(sim.state.x, tris))
        if store_stride and (k + 1) % store_stride == 0:
            rec.states.append(sim.state.copy())
        if collect is not None:
            collect(k, sim, diag)
    rec.final = sim.state
    return rec


@dataclasses.dataclass
class SuiteReport:
    name: str
    passed: bool
    lines: list
    metrics: dict
    records: list


def _check(lines: list, ok: bool, text: str) -> bool:
    lines.append(f"  [{'ok' if ok else 'FAIL'}] {text}")
    return ok


# ---------------------------------------------------------------------------
# Fixture builders.  All bodies are primitives so the suites carry no assets.


def _mat(model: str, young: float, poisson: float) -> Material:
    return Material(MaterialModel(model), young, poisson)


def slab_body(size, t0, young: float = 1e7, rotate: dict | None = None,
              density: float = 1000.0, cells=(2, 2, 1)) -> BodySpec:
    """A box used as ground/wall: placed by its unrotated corner offset t0."""
    translate = t0
    if rotate is not None:
        R = rotation_matrix(rotate["axis"], rotate["angle"])
        translate = tuple(R @ np.asarray(t0, dtype=np.float64))
    return BodySpec(
        material=_mat("lin", young, 0.3), density=density,
        primitive={"kind": "box", "nx": cells[0], "ny": cells[1],
                   "nz": cells[2], "size": list(size)},
        translate=translate, rotate=rotate,
    )


def fixed_all(body: int) -> BoundarySpec:
    return BoundarySpec(body=body, kind="fixed", box=FIX_ALL)


# --- bar convergence -------------------------------------------------------

BAR_TOTAL_TIME = 0.25
BAR_DIVISIONS = (50, 100, 200, 400)
BAR_REF_FACTOR = 64
BAR_SAMPLES = 50


def bar_config(h: float) -> SceneConfig:
    """Thin linear-elastic column shot axially at a fixed slab, no gravity.

    The classic one-dimensional impact problem: the bar compresses, the
    wave makes one round trip, and the bar rebounds stress-free. Zero
    gravity matters twice over: a standing column under gravity topples
    from tessellation asymmetry instead of converging, and the analytic
    rebound requires the base to unload completely. Zero Poisson ratio
    keeps cross-sections from bulging, so the motion is genuinely axial.
    """
    bar = BodySpec(
        material=_mat("lin", 1e5, 0.0), density=1000.0,
        primitive={"kind": "box", "nx": 1, "ny": 1, "nz": 4,
                   "size": [0.1, 0.1, 0.4]},
        translate=(-0.05, -0.05, 0.002),
        velocity=(0.0, 0.0, -0.5),
    )
    floor = slab_body((0.3, 0.3, 0.05), (-0.15, -0.15, -0.05), cells=(1, 1, 1))
    params = StepParams(h=h, offset=1e-3, gravity=(0.0, 0.0, 0.0))
    return SceneConfig(bodies=[floor, bar], boundary=[fixed_all(0)],
                       params=params, frames=round(BAR_TOTAL_TIME / h))


def _log_slope(hs, errors) -> float:
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def suite_bar_convergence(output_dir: str, seed=None) -> SuiteReport:
    hs = [BAR_TOTAL_TIME / n for n in BAR_DIVISIONS]
    h_ref = hs[-1] / BAR_REF_FACTOR
    records = []
    sampled = {}
    for h in hs + [h_ref]:
        config = bar_config(h)
        compiled = build_scene(config)
        stride = config.frames // BAR_SAMPLES
        rec = simulate(compiled, config.params, config.frames,
                       name=f"bar-convergence h={h:.6g}", store_stride=stride)
        records.append(rec)
        sampled[h] = rec.states
    ref = sampled[h_ref]
    pos_err, vel_err = [], []
    for h in hs:
        ep = sum(float(np.linalg.norm(s.x - r.x)) for s, r in zip(sampled[h], ref))
        ev = sum(float(np.linalg.norm(s.v - r.v)) for s, r in zip(sampled[h], ref))
        pos_err.append(ep)
        vel_err.append(ev)
    slope_p = _log_slope(hs, pos_err)
    slope_v = _log_slope(hs, vel_err)
    lines = [f"bar-convergence: T={BAR_TOTAL_TIME}s, h=T/{{{','.join(map(str, BAR_DIVISIONS))}}}, "
             f"reference at h/{BAR_REF_FACTOR}"]
    ok = _check(lines, abs(slope_p - 1.0) <= 0.2,
                f"position error slope {slope_p:.3f} (target 1.0 +/- 0.2)")
    ok &= _check(lines, abs(slope_v - 1.0) <= 0.2,
                 f"velocity error slope {slope_v:.3f} (target 1.0 +/- 0.2)")
    os.makedirs(output_dir, exist_ok=True)
    write_csv(("h", "position_error", "velocity_error"),
              list(zip(hs, pos_err, vel_err)),
              os.path.join(output_dir, "bar_convergence.csv"))
    metrics = {"slope_position": slope_p, "slope_velocity": slope_v,
               "h": hs, "position_error": pos_err, "velocity_error": vel_err}
    return SuiteReport("bar-convergence", bool(ok), lines, metrics, records)


# --- momentum --------------------------------------------------------------


def momentum_config() -> SceneConfig:
    """Two unsupported cubes, one fired at the other; friction on, no gravity.

    Stiff enough that the penalty scale (tied to the Hessian diagonal)
    dominates the vertex masses; the multiplier climb through the impact then
    fits well inside the stagnation window.
    """
    mover = BodySpec(
        material=_mat("snh", 1e6, 0.3), density=1000.0,
        primitive={"kind": "cube", "size": 0.2},
        translate=(-0.26, -0.13, -0.1), velocity=(2.0, 0.0, 0.0),
    )
    target = BodySpec(
        material=_mat("snh", 1e6, 0.3), density=1000.0,
        primitive={"kind": "cube", "size": 0.2},
        translate=(0.02, -0.07, -0.1),
    )
    params = StepParams(h=5e-3, offset=1e-3, gravity=(0.0, 0.0, 0.0),
                        friction_coefficient=0.3)
    return SceneConfig(bodies=[mover, target], boundary=[], params=params,
                       frames=100)


def suite_momentum(output_dir: str, seed=None) -> SuiteReport:
    config = momentum_config()
    compiled = build_scene(config)
    masses = compiled.system.masses
    p0 = masses @ compiled.state.v
    rows = []
    drifts = []

    def collect(k, sim, diag):
        p = masses @ sim.state.v
        drift = float(np.linalg.norm(p - p0) / np.linalg.norm(p0))
        drifts.append(drift)
        rows.append((k, (k + 1) * config.params.h,
                     float(p[0]), float(p[1]), float(p[2]), drift))

    rec = simulate(compiled, config.params, config.frames, name="momentum",
                   collect=collect)
    worst = max(drifts) if drifts else math.inf
    touched = rec.peak_constraints > 0
    lines = [f"momentum: two-cube frictional impact, {config.frames} steps, no gravity"]
    ok = _check(lines, touched, f"bodies collided (peak constraints {rec.peak_constraints})")
    ok &= _check(lines, worst < 0.01,
                 f"max relative momentum drift {worst:.2e} (target < 1e-2)")
    os.makedirs(output_dir, exist_ok=True)
    write_csv(("step", "time", "px", "py", "pz", "drift"), rows,
              os.path.join(output_dir, "momentum.csv"))
    return SuiteReport("momentum", bool(ok), lines,
                       {"max_drift": worst, "peak_constraints": rec.peak_constraints},
                       [rec])


# --- slope friction --------------------------------------------------------

SLOPE_ANGLE = math.atan(0.5)


def slope_config(friction: float) -> SceneConfig:
    """A cube on an incline with tan(theta) = 0.5; both tilted rigidly."""
    rot = {"axis": (0.0, 1.0, 0.0), "angle": SLOPE_ANGLE}
    R = rotation_matrix(rot["axis"], rot["angle"])
    slab = slab_body((1.2, 0.3, 0.05), (-0.3, -0.15, -0.05), rotate=rot,
                     cells=(4, 2, 1))
    cube_t0 = np.array([-0.1, -0.1, 1.5e-3])
    cube = BodySpec(
        material=_mat("snh", 1e6, 0.3), density=1000.0,
        primitive={"kind": "cube", "size": 0.2},
        translate=tuple(R @ cube_t0), rotate=rot,
    )
    # Steady sliding never clamps alpha, so the outer loop exits after
    # min_iterations passes.  Each pass advances the slip by only a few
    # microns while inside the mollifier's high-curvature band, so a floor
    # of one pass degenerates genuine sliding into numerical creep.
    params = StepParams(h=5e-3, offset=1e-3, friction_coefficient=friction,
                        min_iterations=6)
    return SceneConfig(bodies=[slab, cube], boundary=[fixed_all(0)],
                       params=params, frames=100)


def _body_speed(compiled: CompiledScene, sim: Simulation, body: int) -> float:
    sl = compiled.body_slice(body)
    m = compiled.system.masses[sl]
    v = m @ sim.state.v[sl] / m.sum()
    return float(np.linalg.norm(v))


def suite_slope_friction(output_dir: str, seed=None) -> SuiteReport:
    g = 9.81
    speeds = {}
    records = []
    for mu_f in (0.55, 0.45):
        config = slope_config(mu_f)
        compiled = build_scene(config)
        trace = []
        records.append(simulate(
            compiled, config.params, config.frames, name=f"slope mu_f={mu_f}",
            collect=lambda k, sim, diag: trace.append(_body_speed(compiled, sim, 1)),
        ))
        speeds[mu_f] = trace
    h = 5e-3
    steady = speeds[0.55][-1]
    # Fit the sliding acceleration after the settling transient.
    t = (np.arange(100) + 1) * h
    window = slice(40, 100)
    accel = float(np.polyfit(t[window], np.asarray(speeds[0.45])[window], 1)[0])
    target = g * (math.sin(SLOPE_ANGLE) - 0.45 * math.cos(SLOPE_ANGLE))
    lines = [f"slope-friction: tan(theta)=0.5, analytic slide acceleration "
             f"{target:.4f} m/s^2"]
    ok = _check(lines, steady < 1e-3,
                f"mu_f=0.55 steady speed {steady:.2e} m/s (target < 1e-3)")
    ok &= _check(lines, abs(accel - target) <= 0.05 * target,
                 f"mu_f=0.45 acceleration {accel:.4f} m/s^2 (target within 5%)")
    os.makedirs(output_dir, exist_ok=True)
    rows = [(k, t[k], speeds[0.55][k], speeds[0.45][k]) for k in range(100)]
    write_csv(("step", "time", "speed_mu055", "speed_mu045"), rows,
              os.path.join(output_dir, "slope_friction.csv"))
    return SuiteReport("slope-friction", bool(ok), lines,
                       {"steady_speed": steady, "acceleration": accel,
                        "target_acceleration": target}, records)


# --- masonry arch ----------------------------------------------------------

ARCH_BLOCKS = 10
ARCH_R_INNER = 0.8
ARCH_R_OUTER = 1.0
ARCH_DEPTH = 0.25
ARCH_STEPS = 200


def arch_config(friction: float) -> SceneConfig:
    """Ten voussoirs over a fixed slab; stability hinges on joint friction."""
    # Joints start ~1.2 mm open so the initial state is strictly separated.
    gap_angle = 1.2e-3 / (2.0 * 0.5 * (ARCH_R_INNER + ARCH_R_OUTER))
    seg = math.pi / ARCH_BLOCKS
    bodies = [slab_body((2.8, 0.45, 0.08), (-1.4, -0.1, -0.08), cells=(4, 1, 1))]
    for i in range(ARCH_BLOCKS):
        bodies.append(BodySpec(
            material=_mat("cor", 1e7, 0.2), density=2000.0,
            primitive={"kind": "arch-block",
                       "theta0": i * seg + gap_angle,
                       "theta1": (i + 1) * seg - gap_angle,
                       "r_inner": ARCH_R_INNER, "r_outer": ARCH_R_OUTER,
                       "depth": ARCH_DEPTH},
            translate=(0.0, 0.0, 1.5e-3),
        ))
    params = StepParams(h=5e-3, offset=1e-3, friction_coefficient=friction)
    return SceneConfig(bodies=bodies, boundary=[fixed_all(0)], params=params,
                       frames=ARCH_STEPS)


def suite_arch(output_dir: str, seed=None) -> SuiteReport:
    block_height = ARCH_R_OUTER - ARCH_R_INNER
    drift_traces = {}
    records = []
    for mu_f in (0.5, 0.0):
        config = arch_config(mu_f)
        compiled = build_scene(config)
        sl = compiled.body_slice(1)
        x0 = compiled.state.x[sl.start:].copy()
        trace = []

        def collect(k, sim, diag, x0=x0, start=sl.start):
            trace.append(float(np.abs(
                np.linalg.norm(sim.state.x[start:] - x0, axis=1)).max()))

        records.append(simulate(compiled, config.params, config.frames,
                                name=f"arch mu_f={mu_f}", collect=collect))
        drift_traces[mu_f] = trace
    stable = max(drift_traces[0.5])
    collapse = max(drift_traces[0.0])
    lines = [f"arch: {ARCH_BLOCKS} blocks, E=10 MPa, {ARCH_STEPS} steps, "
             f"block height {block_height:.2f} m"]
    ok = _check(lines, stable < 0.05 * block_height,
                f"mu_f=0.5 max drift {stable:.4f} m (target < {0.05 * block_height:.3f})")
    ok &= _check(lines, collapse > block_height,
                 f"mu_f=0.0 max drift {collapse:.3f} m (collapse target > {block_height:.2f})")
    os.makedirs(output_dir, exist_ok=True)
    n = min(len(drift_traces[0.5]), len(drift_traces[0.0]))
    rows = [(k, (k + 1) * 5e-3, drift_traces[0.5][k], drift_traces[0.0][k])
            for k in range(n)]
    write_csv(("step", "time", "drift_mu05", "drift_mu00"), rows,
              os.path.join(output_dir, "arch.csv"))
    return SuiteReport("arch", bool(ok), lines,
                       {"stable_drift": stable, "collapse_drift": collapse},
                       records)


# --- constraint-count stability across offsets ------------------------------

DELTA_VALUES = (5e-4, 1e-3, 2e-3)


def sphere_drop_config(offset: float, jitter=(0.0, 0.0)) -> SceneConfig:
    sphere = BodySpec(
        material=_mat("snh", 2e5, 0.3), density=1000.0,
        primitive={"kind": "sphere", "n": 4, "radius": 0.15},
        translate=(jitter[0], jitter[1], 0.16 + 0.01),
        velocity=(0.0, 0.0, -1.0),
    )
    slab = slab_body((0.8, 0.8, 0.08), (-0.4, -0.4, -0.08))
    params = StepParams(h=5e-3, offset=offset)
    return SceneConfig(bodies=[slab, sphere], boundary=[fixed_all(0)],
                       params=params, frames=60)


def suite_high_res_delta(output_dir: str, seed=None) -> SuiteReport:
    rng = np.random.default_rng(0 if seed is None else seed)
    jitter = tuple(rng.uniform(-1e-4, 1e-4, size=2))
    peaks = []
    devs = []
    records = []
    for delta in DELTA_VALUES:
        config = sphere_drop_config(delta, jitter)
        compiled = build_scene(config)
        sl = compiled.body_slice(1)
        x0 = compiled.state.x[sl]
        m = compiled.system.masses[sl]
        com0 = m @ x0 / m.sum()
        r0 = np.linalg.norm(x0 - com0, axis=1)
        rec = simulate(compiled, config.params, config.frames,
                       name=f"high-res-delta delta={delta:g}")
        records.append(rec)
        xf = rec.final.x[sl]
        com = m @ xf / m.sum()
        rf = np.linalg.norm(xf - com, axis=1)
        devs.append(float(np.abs(rf - r0).max() / 0.15))
        peaks.append(rec.peak_constraints)
    ratio = max(peaks) / max(min(peaks), 1)
    lines = [f"high-res-delta: sphere drop, delta in {DELTA_VALUES} "
             f"({DELTA_VALUES[-1] / DELTA_VALUES[0]:.0f}x span)"]
    ok = _check(lines, ratio < 2.0,
                f"peak constraint counts {peaks}, max/min {ratio:.2f} (target < 2)")
    ok &= _check(lines, max(devs) < 0.2,
                 f"max radius deviation {max(devs):.3f} of radius (target < 0.2)")
    os.makedirs(output_dir, exist_ok=True)
    rows = list(zip(DELTA_VALUES, peaks, devs))
    write_csv(("delta", "peak_constraints", "radius_deviation"), rows,
              os.path.join(output_dir, "high_res_delta.csv"))
    return SuiteReport("high-res-delta", bool(ok), lines,
                       {"peaks": peaks, "ratio": ratio, "deviation": max(devs)},
                       records)


# --- fixtures used by the aggregate guarantees only -------------------------


def impactor_config() -> SceneConfig:
    """A cube crossing more than its own diameter per step into a fixed wall."""
    cube = BodySpec(
        material=_mat("snh", 1e7, 0.3), density=1000.0,
        primitive={"kind": "cube", "size": 0.1},
        translate=(-0.3, -0.05, -0.05), velocity=(25.0, 0.0, 0.0),
    )
    wall = slab_body((0.1, 0.6, 0.6), (0.0, -0.3, -0.3), cells=(1, 2, 2))
    params = StepParams(h=5e-3, offset=1e-3, gravity=(0.0, 0.0, 0.0))
    return SceneConfig(bodies=[wall, cube], boundary=[fixed_all(0)],
                       params=params, frames=12)


def stacked_plates_config() -> SceneConfig:
    """Three thin plates dropped onto a slab: a pileup of near-parallel faces."""
    bodies = [slab_body((0.5, 0.5, 0.06), (-0.25, -0.25, -0.06))]
    for i in range(3):
        bodies.append(BodySpec(
            material=_mat("snh", 1e6, 0.3), density=1000.0,
            primitive={"kind": "box", "nx": 3, "ny": 3, "nz": 1,
                       "size": [0.3, 0.3, 0.02]},
            translate=(-0.15, -0.15, 0.004 + i * 0.028),
        ))
    params = StepParams(h=5e-3, offset=1e-3, friction_coefficient=0.2)
    return SceneConfig(bodies=bodies, boundary=[fixed_all(0)], params=params,
                       frames=40)


def desk_config(decay: float) -> SceneConfig:
    """Three cubes tumbling onto a slab; exercises admission and pruning."""
    bodies = [slab_body((0.6, 0.6, 0.06), (-0.3, -0.3, -0.06))]
    spots = [(-0.17, -0.08, 0.003), (0.0, -0.02, 0.19), (-0.09, -0.05, 0.38)]
    for sx, sy, sz in spots:
        bodies.append(BodySpec(
            material=_mat("snh", 2e5, 0.3), density=1000.0,
            primitive={"kind": "cube", "size": 0.15},
            translate=(sx, sy, sz),
        ))
    params = StepParams(h=5e-3, offset=1e-3, friction_coefficient=0.3,
                        decay=decay)
    return SceneConfig(bodies=bodies, boundary=[fixed_all(0)], params=params,
                       frames=60)


# ---------------------------------------------------------------------------

_SUITES = {
    "bar-convergence": suite_bar_convergence,
    "momentum": suite_momentum,
    "slope-friction": suite_slope_friction,
    "arch": suite_arch,
    "high-res-delta": suite_high_res_delta,
}


def run_suite(name: str, output_dir: str = "validate-out", seed=None) -> SuiteReport:
    try:
        fn = _SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite {name!r}")
    return fn(output_dir, seed=seed)
