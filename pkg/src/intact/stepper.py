"""Outer time-stepping loop.

Advances one implicit Euler step by repeatedly solving the augmented
Lagrangian subproblem, admitting newly blocking contact pairs, and
clamping the update to the largest intersection-free fraction reported
by CCD. The accepted state is a convex combination of subproblem
solutions; the scalar beta tracks the residual weight of early iterates
and the step terminates once it falls below epsilon.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from typing import Callable, Optional

import numpy as np

from .ccd import BlockingPairs, max_step_size
from .contact import ActiveSet
from .friction import friction_precompute
from .elasticity import inversion_safe_step
from .mesh import SimState
from .solver import ElasticRegion, assemble, solve_subproblem

log = logging.getLogger(__name__)

OUTER_ITERATION_CAP = 1024
# alpha below this counts as a stagnant pass; 50 in a row trigger the escape.
STAGNATION_ALPHA = 1e-4
STAGNATION_LIMIT = 50
# CCD keeps trajectories this fraction of the contact offset apart, so
# anchor distances stay strictly positive at every accepted state.
CCD_GAP_FRACTION = 0.1


@dataclasses.dataclass(frozen=True)
class StepParams:
    """Time integration and contact parameters for one simulation.

    offset is the contact activation distance (constraints enforce
    d >= offset), epsilon the termination threshold on beta,
    min_iterations the number of initial passes exempt from the beta
    recursion, decay the per-sweep reduction of inactive-constraint
    weights, and stiffness_constant the multiplier turning the largest
    system-diagonal entry into the penalty stiffness.
    """

    h: float
    offset: float
    epsilon: float = 1e-3
    min_iterations: int = 1
    decay: float = 0.9
    stiffness_constant: float = 0.1
    cg_tol: float = 1e-4
    friction_coefficient: float = 0.0
    eps_v: float = 1e-3
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)

    def __post_init__(self):
        if not self.h > 0.0:
            raise ValueError("h must be positive")
        if not self.offset > 0.0:
            raise ValueError("contact offset must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.min_iterations < 1:
            raise ValueError("min_iterations must be at least 1")
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError("decay must lie in [0, 1]")
        if not self.stiffness_constant > 0.0:
            raise ValueError("stiffness_constant must be positive")
        if len(self.gravity) != 3:
            raise ValueError("gravity must be a 3-vector")


@dataclasses.dataclass
class BoundaryCondition:
    """Dirichlet boundary: vertices either pinned in place or driven
    along a prescribed trajectory sampled per step index."""

    vertices: np.ndarray
    kind: str = "fixed"
    trajectory: Optional[Callable[[int], np.ndarray]] = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.int64)
        if self.kind not in ("fixed", "scripted"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "scripted" and self.trajectory is None:
            raise ValueError("scripted boundary requires a trajectory")

    def targets(self, x: np.ndarray, step_index: int) -> np.ndarray:
        if self.kind == "scripted":
            t = np.asarray(self.trajectory(step_index), dtype=float)
            if t.shape != (len(self.vertices), 3):
                raise ValueError("trajectory sample has wrong shape")
            return t
        return x[self.vertices]


@dataclasses.dataclass
class System:
    """Assembled simulation system: lumped masses, elastic regions,
    the surface primitives CCD scans, and Dirichlet boundaries."""

    masses: np.ndarray
    regions: list[ElasticRegion]
    surface_triangles: np.ndarray
    surface_edges: np.ndarray
    surface_vertices: np.ndarray
    boundary: list[BoundaryCondition] = dataclasses.field(default_factory=list)

    def __post_init__(self):
        n = len(self.masses)
        mask = np.zeros(n, dtype=bool)
        total = 0
        for bc in self.boundary:
            mask[bc.vertices] = True
            total += len(bc.vertices)
        if total != int(mask.sum()):
            raise ValueError("boundary conditions share vertices")
        self.dbc_mask = mask

    @property
    def n_vertices(self) -> int:
        return len(self.masses)


@dataclasses.dataclass
class IterationRecord:
    alpha: float
    beta: float
    n_constraints: int
    newton_iters: int
    cg_iters: int
    wall_ms: float


@dataclasses.dataclass
class StepDiagnostics:
    """Per-pass measurements plus the stiffness state the step ended on.

    friction holds the anchors precomputed from the accepted state for
    the following step (None when friction is disabled or no contact
    carries force).
    """

    iterations: list[IterationRecord]
    mu: float
    offset: float
    adaptive_triggers: int = 0
    aborted: bool = False
    friction: object = None
    iterates: Optional[list[np.ndarray]] = None

    @property
    def alphas(self) -> np.ndarray:
        return np.array([r.alpha for r in self.iterations])

    @property
    def betas(self) -> np.ndarray:
        return np.array([r.beta for r in self.iterations])


class StepAbortError(RuntimeError):
    """Raised when the outer loop hits its iteration cap; the partial
    state is discarded rather than accepted."""

    def __init__(self, diagnostics: StepDiagnostics):
        super().__init__(
            "outer loop hit the iteration cap before beta reached epsilon"
        )
        self.diagnostics = diagnostics


def beta_update(beta: float, alpha: float, k: int, min_iterations: int) -> float:
    """Residual-weight recursion: multiply in (1 - alpha) once the pass
    count has cleared the minimum, leave beta untouched before that."""
    if k + 1 >= min_iterations:
        return (1.0 - alpha) * beta
    return beta


def mu_init(h_diag_max: float, stiffness_constant: float) -> float:
    """Penalty stiffness proportional to the stiffest diagonal entry."""
    return stiffness_constant * h_diag_max


def stiffness_diagonal_max(
    x: np.ndarray, masses: np.ndarray, regions: list[ElasticRegion], h: float
) -> float:
    """Largest scalar diagonal entry of the constraint-free system
    matrix (mass plus scaled elasticity) at x."""
    if len(masses) == 0:
        return 1.0
    _, hess = assemble(x, x, masses, regions, None, 1.0, 1.0, h)
    blocks = hess.diagonal_blocks()
    return float(blocks[:, (0, 1, 2), (0, 1, 2)].max())


def adaptive_mu(counter: int, mu: float, offset: float) -> tuple[float, float]:
    """Stagnation escape: double the penalty and halve the offset after
    the configured run of near-zero step fractions."""
    if counter >= STAGNATION_LIMIT:
        return 2.0 * mu, 0.5 * offset
    return mu, offset


def stagnation_advance(counter: int, alpha: float) -> int:
    """Consecutive-stagnant-pass counter; any real advance resets it."""
    return counter + 1 if alpha < STAGNATION_ALPHA else 0


def apply_dbc(
    x_hat: np.ndarray, boundary: list[BoundaryCondition], x: np.ndarray, step_index: int
) -> np.ndarray:
    """Write Dirichlet targets into the iterate in place."""
    for bc in boundary:
        x_hat[bc.vertices] = bc.targets(x, step_index)
    return x_hat


def velocity_update(x_new: np.ndarray, x_old: np.ndarray, h: float) -> np.ndarray:
    return (x_new - x_old) / h


def clamp_state(x: np.ndarray, x_hat: np.ndarray, alpha: float) -> np.ndarray:
    """Advance the accepted state the safe fraction toward the target.

    Components whose endpoints coincide are returned bit-identical (the
    exact convex combination), so pinned vertices never accumulate
    rounding drift across passes.
    """
    if alpha >= 1.0:
        return x_hat.copy()
    mixed = (1.0 - alpha) * x + alpha * x_hat
    return np.where(x == x_hat, x, mixed)


def step(
    state: SimState,
    system: System,
    active_set: ActiveSet,
    params: StepParams,
    step_index: int = 0,
    friction=None,
    outer_cap: int = OUTER_ITERATION_CAP,
    record_iterates: bool = False,
) -> tuple[SimState, ActiveSet, StepDiagnostics]:
    """Advance (x, v) by one step of size h.

    friction carries the anchors precomputed at the end of the previous
    step. The returned diagnostics hold the anchors for the next one.
    Raises StepAbortError if beta fails to reach epsilon within
    outer_cap passes; no state is accepted in that case.
    """
    h = params.h
    x_t = state.x
    gravity = np.asarray(params.gravity, dtype=float)
    # External forces enter only through the inertia target.
    x_tilde = x_t + h * state.v + (h * h) * gravity

    mu = mu_init(
        stiffness_diagonal_max(x_t, system.masses, system.regions, h),
        params.stiffness_constant,
    )
    offset = params.offset

    x = x_t.copy()
    x_hat = x_t.copy()
    apply_dbc(x_hat, system.boundary, x_t, step_index)

    beta = 1.0
    counter = 0
    triggers = 0
    blocking = BlockingPairs.empty()
    records: list[IterationRecord] = []
    iterates: Optional[list[np.ndarray]] = [] if record_iterates else None
    terminated = False

    for k in range(outer_cap):
        t0 = time.perf_counter()
        result = solve_subproblem(
            x_tilde,
            x,
            x_hat,
            system.masses,
            system.regions,
            active_set,
            mu,
            offset,
            h,
            cg_tol=params.cg_tol,
            decay=params.decay,
            dbc_mask=system.dbc_mask,
            friction=friction,
        )
        x_hat = result.x_hat
        # Admissions use the pairs that blocked the previous pass; the
        # remainder of that segment is exactly what they still obstruct.
        active_set.update(blocking)
        cap = 1.0
        for reg in system.regions:
            cap = min(
                cap,
                inversion_safe_step(reg.material, x, x_hat - x, reg.tets, reg.shape_rows),
            )
        alpha, blocking = max_step_size(
            x,
            x_hat,
            system.surface_triangles,
            system.surface_edges,
            system.surface_vertices,
            CCD_GAP_FRACTION * offset,
            cap=cap,
        )
        x = clamp_state(x, x_hat, alpha)
        beta = beta_update(beta, alpha, k - 1, params.min_iterations)
        records.append(
            IterationRecord(
                alpha=alpha,
                beta=beta,
                n_constraints=len(active_set),
                newton_iters=result.newton_iters,
                cg_iters=result.cg_iters,
                wall_ms=(time.perf_counter() - t0) * 1e3,
            )
        )
        if iterates is not None:
            iterates.append(x_hat.copy())

        counter = stagnation_advance(counter, alpha)
        new_mu, new_offset = adaptive_mu(counter, mu, offset)
        if new_mu != mu:
            log.warning(
                "stagnation escape at pass %d: mu %.3e -> %.3e, offset %.3e -> %.3e",
                k, mu, new_mu, offset, new_offset,
            )
            mu, offset = new_mu, new_offset
            counter = 0
            triggers += 1

        if beta <= params.epsilon:
            terminated = True
            break

    diagnostics = StepDiagnostics(
        iterations=records,
        mu=mu,
        offset=offset,
        adaptive_triggers=triggers,
        aborted=not terminated,
        iterates=iterates,
    )
    if not terminated:
        raise StepAbortError(diagnostics)

    v_new = velocity_update(x, x_t, h)
    if params.friction_coefficient > 0.0:
        diagnostics.friction = friction_precompute(
            x,
            active_set,
            mu,
            offset,
            h,
            params.friction_coefficient,
            params.eps_v,
        )
    return SimState(x=x, v=v_new), active_set, diagnostics


@dataclasses.dataclass
class Simulation:
    """Owns the evolving state across steps and threads the friction
    anchors from each accepted step into the next."""

    system: System
    params: StepParams
    state: SimState
    active_set: ActiveSet = dataclasses.field(default_factory=ActiveSet)
    friction: object = None
    step_count: int = 0

    def advance(self, record_iterates: bool = False) -> StepDiagnostics:
        self.state, self.active_set, diag = step(
            self.state,
            self.system,
            self.active_set,
            self.params,
            step_index=self.step_count,
            friction=self.friction,
            record_iterates=record_iterates,
        )
        self.friction = diag.friction
        self.step_count += 1
        return diag

    def run(self, n_steps: int, callback=None) -> list[StepDiagnostics]:
        out = []
        for _ in range(n_steps):
            diag = self.advance()
            out.append(diag)
            if callback is not None:
                callback(self.step_count, self.state, diag)
        return out
