"""Spatial and temporal convergence studies built from timed solver steps."""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np

from analysis import LiftedQuadrature, error_vs_exact, error_vs_reference, eoc, split_norms
from assembly import AssembledOperators, assemble_operators, interpolate
from errors import ConfigError, NonPositiveError
from linalg import SolverHandle
from mesh import Mesh2D, RefinementHierarchy, build_hierarchy
from models import (
    ComparisonMode, ConvergenceTable, ErrorMetric, RunRecord, StepperConfig,
    StepResult, StudyConfig, StudyKind,
)
from scenarios import Scenario, scenario as load_scenario
from timestepping import FirstOrderSystem, Trajectory, gauss_tableau, integrate

logger = logging.getLogger(__name__)


@dataclass
class LevelSolution:
    """Final state of one (mesh, tau) run"""

    level: int
    mesh: Mesh2D
    operators: AssembledOperators
    tau: float
    u: np.ndarray
    trajectory: Trajectory
    wall_seconds: float
    energy_drift: float


def execute_step(step_name: str, func: Callable[..., Any], *args, **kwargs) -> StepResult:
    """Run one step, timing it and capturing failures in a StepResult"""
    start_time = time.time()
    try:
        output = func(*args, **kwargs)
        execution_time = time.time() - start_time
        logger.info(f"Step {step_name} completed in {execution_time:.2f}s")
        return StepResult(step_name=step_name, success=True, output=output, execution_time=execution_time)
    except Exception as e:
        execution_time = time.time() - start_time
        logger.error(f"Step {step_name} failed: {e}")
        return StepResult(step_name=step_name, success=False, error_message=str(e), exception=e,
                          execution_time=execution_time)


def _unwrap(result: StepResult) -> Any:
    if not result.success:
        raise result.exception
    return result.output


def resolve_scenario(config: StudyConfig, override: Optional[Scenario] = None) -> Scenario:
    """Scenario from the catalog (or the given one) with the configured coefficient overrides"""
    base = override if override is not None else load_scenario(config.scenario)
    if not config.overrides:
        return base
    return base.model_copy(update={"spec": base.spec.with_overrides(config.overrides)})


def stepper_config(tau: float, T: float, energy_observer: bool = False) -> StepperConfig:
    try:
        return StepperConfig(tau=tau, T=T, energy_observer=energy_observer)
    except ValueError as e:
        raise ConfigError(f"invalid time step: {e}") from e


def initial_vectors(mesh: Mesh2D, operators: AssembledOperators, case: Scenario) -> Tuple[np.ndarray, np.ndarray]:
    spec = case.spec
    zero = lambda x: np.zeros(len(x))  # noqa: E731
    u0 = interpolate(mesh, spec.u0 or zero, operators.dofmap, spec.delta0 or zero)
    u1 = interpolate(mesh, spec.u1 or zero, operators.dofmap, spec.delta1 or zero)
    return u0, u1


def solve_level(case: Scenario, mesh: Mesh2D, level: int, tau: float, T: float, config: StudyConfig) -> LevelSolution:
    """Assemble and integrate one scenario on one mesh"""
    start_time = time.time()
    operators = assemble_operators(mesh, case.spec)
    system = FirstOrderSystem.from_operators(operators)
    u0, u1 = initial_vectors(mesh, operators, case)
    solver = SolverHandle.from_settings(config.solver)
    trajectory = integrate(
        system, gauss_tableau(config.rk_stages), u0, u1,
        stepper_config(tau, T, config.energy_observer), solver,
    )
    energy_drift = trajectory.energy.relative_drift() if trajectory.energy is not None else 0.0
    wall_seconds = time.time() - start_time if config.record_wall_time else 0.0
    logger.info(f"{case.name}: level {level}, h = {mesh.h:.4g}, tau = {tau:.4g}, N = {operators.n_dofs}")
    return LevelSolution(
        level=level, mesh=mesh, operators=operators, tau=tau, u=system.split(trajectory.y)[1],
        trajectory=trajectory, wall_seconds=wall_seconds, energy_drift=energy_drift,
    )


def _run_jobs(jobs: Sequence[Tuple[str, Callable[[], LevelSolution]]], max_workers: int) -> List[LevelSolution]:
    """Run independent level jobs, in a thread pool when max_workers > 1"""
    if max_workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [pool.submit(execute_step, name, job) for name, job in jobs]
            results = [future.result() for future in futures]
    else:
        results = [execute_step(name, job) for name, job in jobs]
    return [_unwrap(result) for result in results]


def pairwise_eoc(errors: Sequence[float], steps: Sequence[float]) -> List[float]:
    """EOC per consecutive pair, NaN where an error vanishes"""
    rates = []
    for pair in range(len(errors) - 1):
        try:
            rates.append(eoc(errors[pair:pair + 2], steps[pair:pair + 2])[0])
        except NonPositiveError:
            rates.append(math.nan)
    return rates


class ConvergenceStudy:
    """Runs the spatial or temporal study described by a StudyConfig"""

    def __init__(self, config: StudyConfig, case: Optional[Scenario] = None):
        self.config = config
        self.case = resolve_scenario(config, case)
        self.T = config.T if config.T is not None else self.case.T
        self.tau0 = config.tau0 if config.tau0 is not None else self.case.tau0
        self.seed = config.seed if config.seed is not None else self.case.seed
        self.comparison = config.comparison or self.case.comparison
        if self.comparison == ComparisonMode.EXACT and self.case.exact is None:
            raise ConfigError(f"scenario '{self.case.name}' has no exact solution to compare with")
        logger.info(f"ConvergenceStudy initialized for scenario {self.case.name}")

    def _record(self, solution: LevelSolution, errors) -> RunRecord:
        return RunRecord(
            scenario=self.case.name, level=solution.level, h=solution.mesh.h, tau=solution.tau,
            n_dofs=solution.operators.n_dofs, wall_seconds=solution.wall_seconds,
            errors=errors, energy_drift=solution.energy_drift,
        )

    def _exact_errors(self, solution: LevelSolution) -> Any:
        quadrature = None
        if self.config.metric == ErrorMetric.LIFTED_QUADRATURE:
            quadrature = LiftedQuadrature(solution.mesh, self.case.curve)
        return error_vs_exact(
            solution.mesh, solution.operators, solution.u, self.case.exact, self.T,
            metric=self.config.metric, curve=self.case.curve, level=solution.level, quadrature=quadrature,
        )

    def run_spatial(self) -> ConvergenceTable:
        first, last = self.config.levels
        reference_mode = self.comparison == ComparisonMode.REFERENCE
        depth = last + (self.config.reference_gap if reference_mode else 0)
        hierarchy: RefinementHierarchy = _unwrap(execute_step(
            "build_hierarchy", build_hierarchy, self.seed, depth, self.case.curve))

        taus = {level: self.tau0 / 2 ** (level - first) for level in range(first, last + 1)}
        for tau in taus.values():
            stepper_config(tau, self.T)
        jobs = [
            (f"solve_level_{level}",
             lambda level=level: solve_level(self.case, hierarchy.levels[level], level, taus[level], self.T, self.config))
            for level in range(first, last + 1)
        ]
        if reference_mode:
            jobs.append((f"reference_level_{depth}",
                         lambda: solve_level(self.case, hierarchy.levels[depth], depth, taus[last], self.T, self.config)))
        solutions = _run_jobs(jobs, self.config.max_workers)

        rows = []
        if reference_mode:
            reference = solutions.pop()
            for solution in solutions:
                errors = error_vs_reference(hierarchy, solution.level, depth, solution.u, reference.u,
                                            solution.operators, t=self.T)
                rows.append(self._record(solution, errors))
        else:
            rows = [self._record(solution, self._exact_errors(solution)) for solution in solutions]

        rates = pairwise_eoc([row.errors.combined_l2 for row in rows], [row.h for row in rows])
        logger.info(f"Spatial study {self.case.name}: EOC {[round(rate, 3) for rate in rates]}")
        return ConvergenceTable(kind=StudyKind.SPATIAL, scenario=self.case.name, rows=rows, eoc=rates)

    def temporal_steps(self) -> List[float]:
        if self.config.taus is not None:
            taus = [float(tau) for tau in self.config.taus]
        else:
            taus = [self.tau0 / 2 ** i for i in range(self.config.halvings + 1)]
        if len(taus) < 2:
            raise ConfigError("a temporal study needs at least two time steps")
        if any(b >= a for a, b in zip(taus, taus[1:])):
            raise ConfigError(f"time steps must be strictly decreasing, got {taus}")
        for tau in taus:
            stepper_config(tau, self.T)
        return taus

    def run_temporal(self) -> ConvergenceTable:
        level = self.config.level
        taus = self.temporal_steps()
        reference_tau = taus[-1] / 2 ** self.config.reference_gap
        stepper_config(reference_tau, self.T)
        hierarchy: RefinementHierarchy = _unwrap(execute_step(
            "build_hierarchy", build_hierarchy, self.seed, level, self.case.curve))
        mesh = hierarchy.levels[level]

        jobs = [(f"solve_tau_{index}", lambda tau=tau: solve_level(self.case, mesh, level, tau, self.T, self.config))
                for index, tau in enumerate(taus)]
        jobs.append(("reference_tau", lambda: solve_level(self.case, mesh, level, reference_tau, self.T, self.config)))
        solutions = _run_jobs(jobs, self.config.max_workers)
        reference = solutions.pop()

        rows = [self._record(solution, split_norms(solution.u - reference.u, solution.operators, level=level, t=self.T))
                for solution in solutions]
        rates = pairwise_eoc([row.errors.combined_l2 for row in rows], taus)
        logger.info(f"Temporal study {self.case.name}: EOC {[round(rate, 3) for rate in rates]}")
        return ConvergenceTable(kind=StudyKind.TEMPORAL, scenario=self.case.name, rows=rows, eoc=rates)

    def solve(self) -> Tuple[RunRecord, LevelSolution]:
        level = self.config.level
        hierarchy: RefinementHierarchy = _unwrap(execute_step(
            "build_hierarchy", build_hierarchy, self.seed, level, self.case.curve))
        solution = _unwrap(execute_step(
            "solve", solve_level, self.case, hierarchy.levels[level], level, self.tau0, self.T, self.config))
        errors = self._exact_errors(solution) if self.case.exact is not None else None
        return self._record(solution, errors), solution


def run_spatial_study(config: StudyConfig, case: Optional[Scenario] = None) -> ConvergenceTable:
    return ConvergenceStudy(config, case).run_spatial()


def run_temporal_study(config: StudyConfig, case: Optional[Scenario] = None) -> ConvergenceTable:
    return ConvergenceStudy(config, case).run_temporal()


def solve_scenario(config: StudyConfig, case: Optional[Scenario] = None) -> Tuple[RunRecord, LevelSolution]:
    return ConvergenceStudy(config, case).solve()
