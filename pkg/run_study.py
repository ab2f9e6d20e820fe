#!/usr/bin/env python3
"""
Bulk-surface wave solver - command line front end

Builds meshes, solves single scenarios and runs spatial/temporal
convergence studies, writing study.csv and study.svg.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from config import load_environment, load_study_config, parse_level_range, setup_logging, solver_mode
from errors import ConfigError, NumericalError
from mesh import build_hierarchy, validate, write_mesh
from models import ConvergenceTable, SolverSettings, StudyConfig, StudyKind
from reporting import emit_outputs, write_csv
from study_workflow import run_spatial_study, run_temporal_study, solve_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    env = load_environment()
    parser = argparse.ArgumentParser(description="Bulk-surface FEM for wave equations with dynamic boundary conditions")
    parser.add_argument("--rk-stages", type=int, choices=(1, 2, 3), default=1, help="Gauss Runge-Kutta stages")
    parser.add_argument("--solver", choices=("direct", "iterative"), default=env["BSWAVE_SOLVER"],
                        help="stage system solver")
    parser.add_argument("--log-level", default=env["LOG_LEVEL"])
    commands = parser.add_subparsers(dest="command", required=True)

    mesh = commands.add_parser("mesh", help="write a refined disc mesh")
    mesh.add_argument("--levels", type=int, required=True)
    mesh.add_argument("--seed", type=int, default=6)
    mesh.add_argument("--out", required=True)

    solve = commands.add_parser("solve", help="solve the scenario of a configuration file")
    solve.add_argument("--config", required=True)

    spatial = commands.add_parser("study-spatial", help="paired h/tau refinement study")
    spatial.add_argument("--scenario", required=True)
    spatial.add_argument("--levels", default=None, help="level range a..b")
    spatial.add_argument("--out", default=env["BSWAVE_OUTPUT_DIR"])
    spatial.add_argument("--config", default=None)

    temporal = commands.add_parser("study-temporal", help="tau refinement study on a fixed mesh")
    temporal.add_argument("--scenario", required=True)
    temporal.add_argument("--level", type=int, default=3)
    temporal.add_argument("--halvings", type=int, default=4)
    temporal.add_argument("--out", default=env["BSWAVE_OUTPUT_DIR"])
    temporal.add_argument("--config", default=None)
    return parser


def _study_config(args: argparse.Namespace, values: Dict[str, Any]) -> StudyConfig:
    values["rk_stages"] = args.rk_stages
    values["solver"] = SolverSettings(mode=solver_mode(args.solver))
    if getattr(args, "config", None):
        return load_study_config(args.config, defaults=values)
    return StudyConfig(**values)


def command_mesh(args: argparse.Namespace) -> int:
    hierarchy = build_hierarchy(args.seed, args.levels)
    mesh = hierarchy.levels[-1]
    violations = validate(mesh)
    if violations:
        raise NumericalError(f"refined mesh violates {len(violations)} invariants")
    write_mesh(mesh, args.out)
    print(f"Wrote level {args.levels} mesh: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles, h = {mesh.h:.6g}")
    return EXIT_OK


def command_solve(args: argparse.Namespace) -> int:
    config = _study_config(args, {})
    record, solution = solve_scenario(config)
    output = Path(config.output_dir)
    output.mkdir(parents=True, exist_ok=True)
    write_csv(_single_row_table(record), output / "solve.csv")
    if solution.trajectory.energy is not None:
        solution.trajectory.energy.write_csv(output / "energy.csv")
    print(f"Solved {record.scenario} on level {record.level}: N = {record.n_dofs}, h = {record.h:.6g}, tau = {record.tau:.6g}")
    return EXIT_OK


def _single_row_table(record) -> ConvergenceTable:
    return ConvergenceTable(kind=StudyKind.SPATIAL, scenario=record.scenario, rows=[record], eoc=[])


def command_spatial(args: argparse.Namespace) -> int:
    values: Dict[str, Any] = {"scenario": args.scenario, "output_dir": args.out}
    if args.levels:
        values["levels"] = parse_level_range(args.levels)
    config = _study_config(args, values)
    table = run_spatial_study(config)
    paths = emit_outputs(table, config.output_dir, config.norms)
    _print_table(table, paths)
    return EXIT_OK


def command_temporal(args: argparse.Namespace) -> int:
    values = {"scenario": args.scenario, "output_dir": args.out, "level": args.level, "halvings": args.halvings}
    config = _study_config(args, values)
    table = run_temporal_study(config)
    paths = emit_outputs(table, config.output_dir, config.norms)
    _print_table(table, paths)
    return EXIT_OK


def _print_table(table: ConvergenceTable, paths: Dict[str, Path]) -> None:
    print(f"{table.scenario} ({table.kind.value})")
    for index, row in enumerate(table.rows):
        rate = f"{table.eoc[index - 1]:.3f}" if index > 0 else "-"
        error = row.errors.combined_l2 if row.errors is not None else float("nan")
        print(f"  level {row.level}  h = {row.h:.4e}  tau = {row.tau:.4e}  N = {row.n_dofs:6d}  "
              f"L2 = {error:.4e}  EOC = {rate}")
    print(f"Results: {paths['csv']}, {paths['svg']}")


COMMANDS = {
    "mesh": command_mesh,
    "solve": command_solve,
    "study-spatial": command_spatial,
    "study-temporal": command_temporal,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValidationError) as e:
        logger.error(f"Configuration error: {e}")
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        print(f"❌ Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
