"""Command-line entry points.

`intact run scene.json` simulates a JSON scene and writes per-frame OBJ
surface meshes plus two CSV tables (per-iteration diagnostics, per-frame
state totals).  `intact validate <suite>` runs a named fixture suite against
its pinned thresholds and prints PASS/FAIL lines.

Exit codes: 0 completed, 1 simulation failure (aborted step or failed
validation), 2 configuration error.

Heavy modules are imported inside the command handlers so that `--threads`
can cap the BLAS/OpenMP pools before numpy first loads.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

EXIT_OK = 0
EXIT_STEP_ABORT = 1
EXIT_CONFIG_ERROR = 2

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

SUITES = ("bar-convergence", "momentum", "slope-friction", "arch", "high-res-delta")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intact",
        description="Penetration-free elastodynamics: scene runner and validation suites.",
    )
    parser.add_argument(
        "--threads", type=int, metavar="N", default=None,
        help="worker cap for numerical kernels (default: all cores)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a JSON scene and export frames")
    run.add_argument("config", help="path to a scene JSON file")
    run.add_argument("--frames", type=int, metavar="K", default=None,
                     help="override the scene's frame count")
    run.add_argument("--seed", type=int, metavar="S", default=None,
                     help="seed recorded for reproducibility (scenes are deterministic)")
    run.add_argument("--dump-every", type=int, metavar="N", default=1,
                     help="write every Nth frame (the final frame is always written)")
    run.add_argument("--output", metavar="DIR", default=None,
                     help="override the scene's output directory")

    val = sub.add_parser("validate", help="run a named validation suite")
    val.add_argument("suite", help="one of: " + ", ".join(SUITES))
    val.add_argument("--seed", type=int, metavar="S", default=None,
                     help="seed for the suite's randomized placements")
    val.add_argument("--output", metavar="DIR", default="validate-out",
                     help="directory for the suite's plot CSVs")
    return parser


@dataclasses.dataclass
class RunResult:
    frames_written: int
    steps_completed: int
    abort_message: str | None = None

    @property
    def aborted(self) -> bool:
        return self.abort_message is not None


def run_scene(compiled, config, dump_every: int = 1, on_frame=None) -> RunResult:
    """Drives the simulation and writes frames and CSV tables.

    Diagnostics rows accumulate one per outer iteration, including the
    iterations of an aborted step; an abort stops the run but still flushes
    both tables.
    """
    from .io_utils import (diagnostics_rows, export_diagnostics, export_frame,
                           export_state_summary, state_row)
    from .stepper import Simulation, StepAbortError

    outdir = config.output_dir
    os.makedirs(outdir, exist_ok=True)
    sim = Simulation(compiled.system, config.params, compiled.state.copy())
    diag_rows: list[tuple] = []
    state_rows: list[tuple] = []
    frames_written = 0
    steps = 0
    abort_message = None
    for k in range(config.frames):
        try:
            diag = sim.advance()
        except StepAbortError as e:
            diag_rows += diagnostics_rows(k, e.diagnostics)
            abort_message = f"step {k}: {e}"
            break
        diag_rows += diagnostics_rows(k, diag)
        n_constraints = diag.iterations[-1].n_constraints if diag.iterations else 0
        state_rows.append(state_row(k, (k + 1) * config.params.h,
                                    compiled.system.masses, sim.state,
                                    n_constraints))
        steps += 1
        if k % dump_every == 0 or k == config.frames - 1:
            export_frame(sim.state.x, compiled.system.surface_triangles,
                         os.path.join(outdir, f"frame_{k:06d}.obj"))
            frames_written += 1
        if on_frame is not None:
            on_frame(k, sim)
    export_diagnostics(diag_rows, os.path.join(outdir, "diagnostics.csv"))
    export_state_summary(state_rows, os.path.join(outdir, "state.csv"))
    return RunResult(frames_written=frames_written, steps_completed=steps,
                     abort_message=abort_message)


def _cmd_run(args) -> int:
    from .scene import SceneError, build_scene, load_scene

    try:
        if args.dump_every < 1:
            raise SceneError("dump-every", "must be at least 1")
        config = load_scene(args.config)
        if args.frames is not None:
            if args.frames < 0:
                raise SceneError("frames", "must be non-negative")
            config = dataclasses.replace(config, frames=args.frames)
        if args.output is not None:
            config = dataclasses.replace(config, output_dir=args.output)
        base_dir = os.path.dirname(os.path.abspath(args.config))
        compiled = build_scene(config, base_dir=base_dir)
    except SceneError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    try:
        result = run_scene(compiled, config, dump_every=args.dump_every)
    except OSError as e:
        print(f"i/o error: {e.filename or config.output_dir}: {e.strerror}",
              file=sys.stderr)
        return EXIT_CONFIG_ERROR
    if result.aborted:
        print(f"aborted: {result.abort_message} (diagnostics dumped to "
              f"{config.output_dir})", file=sys.stderr)
        return EXIT_STEP_ABORT
    print(f"completed {result.steps_completed} steps, "
          f"{result.frames_written} frames -> {config.output_dir}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    if args.suite not in SUITES:
        print(f"config error: unknown suite {args.suite!r} (one of: "
              f"{', '.join(SUITES)})", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    from . import validate

    report = validate.run_suite(args.suite, output_dir=args.output, seed=args.seed)
    for line in report.lines:
        print(line)
    print(f"{'PASS' if report.passed else 'FAIL'}: {args.suite}")
    return EXIT_OK if report.passed else EXIT_STEP_ABORT


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("config error: --threads must be at least 1", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_validate(args)


if __name__ == "__main__":
    raise SystemExit(main())
