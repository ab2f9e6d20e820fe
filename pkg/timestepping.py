"""Gauss collocation Runge-Kutta integration of  M u'' + B u' + A u = b(t).

The system is written in first-order form for y = (v, u) with v = M u' + B u,

    v' = -A u + b(t),    M u' = v - B u,

and the s stages are eliminated down to one sparse system for the stage
velocities, so that no inverse of M is ever formed.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse as sp

from errors import SingularMatrix, SingularStageMatrix, Unsupported
from linalg import SolverHandle, has_constant_kernel
from models import SolverMode, StepperConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ButcherTableau:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def s(self) -> int:
        return int(self.b.shape[0])


def gauss_tableau(s: int) -> ButcherTableau:
    """Collocation tableau at the Gauss-Legendre nodes on [0, 1]"""
    if s not in (1, 2, 3):
        raise Unsupported(f"Gauss tableaux are available for 1 to 3 stages, got {s}")
    nodes, weights = np.polynomial.legendre.leggauss(s)
    c = 0.5 * (nodes + 1.0)
    b = 0.5 * weights
    # collocation: sum_j a_ij c_j^(k-1) = c_i^k / k for k = 1..s
    powers = np.arange(1, s + 1)
    vandermonde = c[:, None] ** (powers - 1)[None, :]
    integrated = c[:, None] ** powers[None, :] / powers[None, :]
    A = np.linalg.solve(vandermonde.T, integrated.T).T
    return ButcherTableau(A=A, b=b, c=c)


def order_condition_residuals(tableau: ButcherTableau) -> Tuple[np.ndarray, np.ndarray]:
    """Quadrature residuals for k = 1..2s and stage residuals for k = 1..s"""
    A, b, c = tableau.A, tableau.b, tableau.c
    k = np.arange(1, 2 * tableau.s + 1)
    quadrature = np.array([b @ c ** (j - 1) - 1.0 / j for j in k])
    stage = np.array([A @ c ** (j - 1) - c ** j / j for j in range(1, tableau.s + 1)])
    return quadrature, stage


def algebraic_stability_matrix(tableau: ButcherTableau) -> np.ndarray:
    """(b_i a_ij + b_j a_ji - b_i b_j); positive semidefinite for algebraically stable methods"""
    bA = tableau.b[:, None] * tableau.A
    return bA + bA.T - np.outer(tableau.b, tableau.b)


def coercivity_constant(tableau: ButcherTableau) -> float:
    """Largest alpha with w^T D A^-1 w >= alpha w^T D w, D = diag(b)(diag(c)^-1 - I)"""
    D = np.diag(tableau.b * (1.0 / tableau.c - 1.0))
    DA = D @ np.linalg.inv(tableau.A)
    return float(scipy.linalg.eigh(0.5 * (DA + DA.T), D, eigvals_only=True).min())


@dataclass(frozen=True)
class FirstOrderSystem:
    M: sp.csr_matrix
    A: sp.csr_matrix
    B: sp.csr_matrix
    load: Callable[[float], np.ndarray]
    has_load: bool = True

    @property
    def n(self) -> int:
        return int(self.M.shape[0])

    @classmethod
    def from_operators(cls, operators) -> "FirstOrderSystem":
        return cls(M=operators.M, A=operators.A, B=operators.B, load=operators.load,
                   has_load=operators.load.spec.has_sources)

    def initial_state(self, u0: np.ndarray, u0_dot: np.ndarray) -> np.ndarray:
        """y(0) = (M u'(0) + B u(0), u(0))"""
        return np.concatenate((self.M @ u0_dot + self.B @ u0, u0))

    def split(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return y[:self.n], y[self.n:]

    def load_at(self, t: float) -> np.ndarray:
        return self.load(t) if self.has_load else np.zeros(self.n)


def discrete_energy(system: FirstOrderSystem, y: np.ndarray, solver: Optional[SolverHandle] = None) -> float:
    """E = u'^T M u' / 2 + u^T A u / 2 with u' recovered from M u' = v - B u"""
    solver = solver or SolverHandle()
    v, u = system.split(y)
    velocity = solver.solve(system.M, v - system.B @ u)
    return float(0.5 * velocity @ (system.M @ velocity) + 0.5 * u @ (system.A @ u))


def s_norm(system: FirstOrderSystem, y: np.ndarray, solver: Optional[SolverHandle] = None) -> float:
    """sqrt(v^T A^-1 v + u^T M u)"""
    if has_constant_kernel(system.A):
        raise SingularMatrix("A has constant functions in its kernel (kappa = 0)")
    solver = solver or SolverHandle()
    v, u = system.split(y)
    return float(np.sqrt(v @ solver.solve(system.A, v) + u @ (system.M @ u)))


class RungeKuttaStepper:
    """Implicit Runge-Kutta stepper for one fixed time step"""

    def __init__(self, system: FirstOrderSystem, tableau: ButcherTableau, tau: float,
                 solver: Optional[SolverHandle] = None, reuse_stage_matrix: bool = True):
        self.system = system
        self.tableau = tableau
        self.tau = tau
        self.solver = solver or SolverHandle()
        self.reuse_stage_matrix = reuse_stage_matrix
        self._stage_matrix = self.build_stage_matrix() if reuse_stage_matrix else None

    def build_stage_matrix(self) -> sp.csr_matrix:
        """I_s (x) M + tau A_RK (x) B + tau^2 A_RK^2 (x) A"""
        A_rk = self.tableau.A
        tau = self.tau
        system = self.system
        matrix = (sp.kron(sp.identity(self.tableau.s), system.M)
                  + tau * sp.kron(A_rk, system.B)
                  + tau ** 2 * sp.kron(A_rk @ A_rk, system.A)).tocsr()
        matrix.sort_indices()
        return matrix

    def step(self, y: np.ndarray, t: float) -> np.ndarray:
        system, tau = self.system, self.tau
        A_rk, b, c = self.tableau.A, self.tableau.b, self.tableau.c
        v, u = system.split(y)

        loads = np.array([system.load_at(t + c_j * tau) for c_j in c])
        Au = system.A @ u
        rhs = (v - system.B @ u)[None, :] - tau * A_rk.sum(axis=1)[:, None] * Au[None, :] + tau * A_rk @ loads

        stage_matrix = self._stage_matrix if self._stage_matrix is not None else self.build_stage_matrix()
        try:
            velocities = self.solver.solve(stage_matrix, rhs.ravel()).reshape(self.tableau.s, system.n)
        except SingularMatrix as e:
            logger.error(f"Stage system at t = {t:.6g} could not be solved: {e}")
            raise SingularStageMatrix(str(e)) from e
        finally:
            if self._stage_matrix is None:
                self.solver.release(stage_matrix)

        stages = u[None, :] + tau * A_rk @ velocities
        accelerations = loads - (system.A @ stages.T).T
        return np.concatenate((v + tau * b @ accelerations, u + tau * b @ velocities))


def rk_step(system: FirstOrderSystem, tableau: ButcherTableau, y_n: np.ndarray, t_n: float,
            tau: float, solver: Optional[SolverHandle] = None) -> np.ndarray:
    stepper = RungeKuttaStepper(system, tableau, tau, solver, reuse_stage_matrix=False)
    return stepper.step(y_n, t_n)


class EnergyObserver:
    """Records the discrete energy after every step"""

    def __init__(self, system: FirstOrderSystem, solver: Optional[SolverHandle] = None):
        self.system = system
        self.solver = solver or SolverHandle(SolverMode.DIRECT)
        self.records: List[Tuple[int, float, float]] = []

    def __call__(self, step: int, t: float, y: np.ndarray) -> None:
        self.records.append((step, t, discrete_energy(self.system, y, self.solver)))

    @property
    def energies(self) -> np.ndarray:
        return np.array([energy for _, _, energy in self.records])

    def relative_drift(self) -> float:
        energies = self.energies
        if len(energies) == 0:
            return 0.0
        scale = abs(energies[0]) if energies[0] != 0.0 else 1.0
        return float(np.max(np.abs(energies - energies[0])) / scale)

    def is_non_increasing(self, slack: float = 1e-10) -> bool:
        return bool(np.all(np.diff(self.energies) <= slack))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records, columns=["step", "t", "energy"])

    def write_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


@dataclass
class Trajectory:
    y: np.ndarray
    t: float
    steps: int
    checkpoints: Dict[float, np.ndarray] = field(default_factory=dict)
    energy: Optional[EnergyObserver] = None


Observer = Callable[[int, float, np.ndarray], None]


def integrate(system: FirstOrderSystem, tableau: ButcherTableau, u0: np.ndarray, u0_dot: np.ndarray,
              config: StepperConfig, solver: Optional[SolverHandle] = None,
              observers: Sequence[Observer] = ()) -> Trajectory:
    """Run round(T / tau) steps from y(0) = (M u'(0) + B u(0), u(0))"""
    solver = solver or SolverHandle()
    stepper = RungeKuttaStepper(system, tableau, config.tau, solver)
    observers = list(observers)
    energy = None
    if config.energy_observer:
        energy = EnergyObserver(system)
        observers.append(energy)
    checkpoint_steps = {int(round(t / config.tau)): t for t in config.checkpoints}

    y = system.initial_state(np.asarray(u0, dtype=float), np.asarray(u0_dot, dtype=float))
    trajectory = Trajectory(y=y, t=0.0, steps=0, energy=energy)
    for observer in observers:
        observer(0, 0.0, y)
    if 0 in checkpoint_steps:
        trajectory.checkpoints[checkpoint_steps[0]] = y.copy()

    n_steps = config.n_steps
    for step in range(1, n_steps + 1):
        t_prev = (step - 1) * config.tau
        y = stepper.step(y, t_prev)
        t = step * config.tau
        for observer in observers:
            observer(step, t, y)
        if step in checkpoint_steps:
            trajectory.checkpoints[checkpoint_steps[step]] = y.copy()

    trajectory.y, trajectory.t, trajectory.steps = y, n_steps * config.tau, n_steps
    logger.debug(f"Integrated {n_steps} steps of size {config.tau:.4g} with {tableau.s}-stage Gauss")
    return trajectory


def temporal_errors(system: FirstOrderSystem, tableau: ButcherTableau, u0: np.ndarray, u0_dot: np.ndarray,
                    T: float, taus: Sequence[float], reference_tau: float,
                    solver: Optional[SolverHandle] = None) -> List[float]:
    """M-norm errors of u(T) for each tau against a run with reference_tau"""
    solver = solver or SolverHandle()
    reference = integrate(system, tableau, u0, u0_dot, StepperConfig(tau=reference_tau, T=T), solver)
    _, u_ref = system.split(reference.y)
    errors = []
    for tau in taus:
        run = integrate(system, tableau, u0, u0_dot, StepperConfig(tau=tau, T=T), solver)
        _, u = system.split(run.y)
        e = u - u_ref
        errors.append(float(np.sqrt(e @ (system.M @ e))))
    return errors
