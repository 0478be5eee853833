"""Command-line front end: ``solve``, ``optimize`` and ``verify``.

Exit codes: 0 success, 1 configuration or usage error, 2 solver failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import RunConfig
from .control import nelder_mead_fallback, optimize
from .exceptions import BinghamError, ConfigError, InnerSolverFailure, LinearSolveBreakdown
from .fields import estimate_embedding_constant, norm_L2, norm_V
from .serialization import (LockError, cell_data, directory_lock, sha256_file, write_cells_csv, write_centerline,
                            write_faces_csv, write_manifest, write_table_csv, write_vtk)
from .verification import format_table, run_checks
from .viflow import apriori_bound_check, solve_flow

ENV_OUTPUT_DIR = "BINGHAM_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "bingham_output"
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2

logger = logging.getLogger("bingham_control")


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.1.0"


def _output_dir(args, cfg: RunConfig) -> Path:
    if args.output_dir:
        return Path(args.output_dir)
    if cfg is not None and cfg.has("output", "directory"):
        return Path(cfg.raw("output", "directory"))
    return Path(os.environ.get(ENV_OUTPUT_DIR, DEFAULT_OUTPUT_DIR))


def _write_fields(directory: Path, formats, report, prefix: str = "") -> list:
    data = cell_data(report.velocity, report.pressure.values, report.rigid_mask)
    grid = report.velocity.grid
    written = []
    if "csv" in formats:
        write_cells_csv(directory / f"{prefix}cells.csv", grid, data)
        write_faces_csv(directory / f"{prefix}velocity_faces.csv", report.velocity)
        written += [f"{prefix}cells.csv", f"{prefix}velocity_faces.csv"]
    if "vtk" in formats:
        write_vtk(directory / f"{prefix}fields.vtk", grid, data)
        written.append(f"{prefix}fields.vtk")
    if "gnuplot" in formats:
        write_centerline(directory, report.velocity, stem=f"{prefix}centerline")
        written += [f"{prefix}centerline.dat", f"{prefix}centerline.gp"]
    return written


def _finish_manifest(directory: Path, manifest: dict, files: list, timings: dict) -> None:
    manifest["files"] = {name: sha256_file(directory / name) for name in sorted(files)}
    manifest["timings"] = timings
    write_manifest(directory / "manifest.json", manifest)


def _base_manifest(command: str, cfg: RunConfig, seed: int) -> dict:
    return {"command": command, "config_hash": cfg.config_hash(), "tool_version": tool_version(), "seed": seed}


def cmd_solve(args) -> int:
    t0 = time.perf_counter()
    cfg = RunConfig.from_file(args.config)
    cfg.seed = args.seed
    problem = cfg.build_problem()
    solver = cfg.build_solver()
    formats = cfg.output_formats()
    directory = _output_dir(args, cfg)
    with directory_lock(directory):
        t_build = time.perf_counter()
        try:
            report = solve_flow(problem, solver)
            failure = None if report.converged else report.message
        except LinearSolveBreakdown as exc:
            report, failure = None, str(exc)
        t_solve = time.perf_counter()
        manifest = _base_manifest("solve", cfg, args.seed)
        files = []
        if report is not None:
            C_h = estimate_embedding_constant(problem.grid, seed=args.seed)
            diag = report.summary()
            diag.update(C_h=C_h, apriori_bound_holds=apriori_bound_check(report, problem, C_h),
                        norm_V=norm_V(report.velocity), force_norm_L2=norm_L2(problem.total_force))
            manifest["diagnostics"] = diag
            files = _write_fields(directory, formats, report)
        manifest["status"] = "failed" if failure else "converged"
        if failure:
            manifest["failure"] = failure
        _finish_manifest(directory, manifest, files, {"build": t_build - t0, "solve": t_solve - t_build,
                                                      "total": time.perf_counter() - t0})
    if failure:
        print(f"error: solver failed: {failure}", file=sys.stderr)
        return EXIT_SOLVER
    if not args.quiet:
        print(f"converged in {report.iterations} iterations; energy residuals "
              f"{report.energy_residual_regularized:.3e} (regularized), {report.energy_residual_exact:.3e} "
              f"(exact); VI residual {report.vi_residual:.3e} >= -{report.vi_tolerance:.3e}; output in {directory}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    t0 = time.perf_counter()
    cfg = RunConfig.from_file(args.config)
    cfg.seed = args.seed
    problem = cfg.build_problem(with_control=False)
    solver = cfg.build_solver()
    aset = cfg.build_admissible()
    basis = cfg.build_basis()
    opt = cfg.build_optimizer()
    method = cfg.optimizer_method()
    formats = cfg.output_formats()
    directory = _output_dir(args, cfg)
    with directory_lock(directory):
        manifest = _base_manifest("optimize", cfg, args.seed)

        def target_solve(p):
            rep = solve_flow(p, solver)
            if not rep.converged:
                raise InnerSolverFailure(f"target solve failed: {rep.message}")
            return rep

        try:
            cost = cfg.build_cost(problem, target_solve)
            t_build = time.perf_counter()
            run = nelder_mead_fallback if method == "nelder-mead" else optimize
            pair = run(problem, cost, aset, basis, opt, solver)
            failure = None if pair.admissible else "returned pair failed the admissibility check"
        except (InnerSolverFailure, LinearSolveBreakdown) as exc:
            pair, failure, t_build = None, str(exc), time.perf_counter()
        t_opt = time.perf_counter()
        files = []
        if pair is not None:
            summary = pair.summary()
            J0 = pair.history[0] if pair.history else pair.J
            summary.update(J_start=J0, J_ratio=pair.J / J0 if J0 else 0.0)
            manifest["diagnostics"] = summary
            write_table_csv(directory / "J_history.csv", ["iteration", "J"], list(enumerate(pair.history)))
            files.append("J_history.csv")
            if pair.candidate_J:
                rows = [[n] + [float(c) for c in np.ravel(cand)] + [J]
                        for n, (cand, J) in enumerate(zip(aset.candidates, pair.candidate_J))]
                header = ["candidate"] + [f"c{k}" for k in range(basis.size)] + ["J"]
                write_table_csv(directory / "candidates.csv", header, rows)
                files.append("candidates.csv")
                manifest["candidate_J"] = pair.candidate_J
            files += _write_fields(directory, formats, pair.report)
            if "csv" in formats:
                write_faces_csv(directory / "control_faces.csv", pair.control)
                files.append("control_faces.csv")
        manifest["status"] = "failed" if failure else pair.status
        if failure:
            manifest["failure"] = failure
        _finish_manifest(directory, manifest, files, {"build": t_build - t0, "optimize": t_opt - t_build,
                                                      "total": time.perf_counter() - t0})
    if failure:
        print(f"error: optimization failed: {failure}", file=sys.stderr)
        return EXIT_SOLVER
    if not args.quiet:
        print(f"J = {pair.J:.6e} after {pair.iterations} iterations ({pair.status}, {pair.n_solves} solves); "
              f"coefficients {np.array2string(pair.coefficients, precision=6)}; output in {directory}")
    return EXIT_OK


def cmd_verify(args) -> int:
    sign = -1.0 if args.flip_yield_sign else 1.0
    results = run_checks(args.filter, seed=args.seed, yield_sign=sign)
    if not results:
        print(f"error: no check matches {args.filter!r}", file=sys.stderr)
        return EXIT_CONFIG
    if not args.quiet or not all(r.passed for r in results):
        print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_SOLVER


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", default=argparse.SUPPRESS,
                        help=f"output directory (default: config [output] directory, ${ENV_OUTPUT_DIR}, "
                             f"or ./{DEFAULT_OUTPUT_DIR})")
    common.add_argument("--seed", type=_seed, default=argparse.SUPPRESS, help="random seed (unsigned 64-bit)")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="print errors only")

    parser = argparse.ArgumentParser(prog="bingham-control", description=__doc__.splitlines()[0])
    parser.add_argument("--output-dir", default=None, help=argparse.SUPPRESS)
    parser.add_argument("--seed", type=_seed, default=0, help=argparse.SUPPRESS)
    parser.add_argument("--quiet", action="store_true", default=False, help=argparse.SUPPRESS)
    parser.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve one flow problem")
    p.add_argument("config", help="INI configuration file")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("optimize", parents=[common], help="optimize the control")
    p.add_argument("config", help="INI configuration file")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("verify", parents=[common], help="run the property and oracle checks")
    p.add_argument("--filter", default=None, help="run only checks whose name contains this text")
    p.add_argument("--flip-yield-sign", action="store_true",
                   help="debug: flip the sign of the yield term in the energy check (must fail)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, LockError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BinghamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
