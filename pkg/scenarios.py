"""Catalog of the reference experiments on the unit disc."""

import logging
from typing import Callable, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from analysis import ExactSolution
from assembly import ProblemSpec
from errors import UnknownScenario
from geometry import BoundaryCurve, unit_circle
from models import ComparisonMode, LoadRule, ProblemVariant

logger = logging.getLogger(__name__)

PURE_TAU0 = 2.0 ** -5
ACOUSTIC_TAU0 = 0.025  # T = 0.2 must be a multiple of every halved step
ACOUSTIC_EXPONENT = 1.2
WAVE_SEED = 12  # boundary spacing half the radial spacing at every level


class Scenario(BaseModel):
    """Problem, geometry and study defaults of one experiment"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str
    description: str
    spec: ProblemSpec
    curve: BoundaryCurve
    T: float
    tau0: float
    seed: int = 6
    comparison: ComparisonMode = ComparisonMode.REFERENCE
    exact: Optional[ExactSolution] = None


def gaussian_bump(x: np.ndarray) -> np.ndarray:
    """exp(-20((x1 - 1)^2 + x2^2))"""
    return np.exp(-20.0 * ((x[:, 0] - 1.0) ** 2 + x[:, 1] ** 2))


def _zero(x: np.ndarray) -> np.ndarray:
    return np.zeros(len(x))


def _pure_spec(**values) -> ProblemSpec:
    return ProblemSpec(mu=1.0, beta=1.0, kappa=0.0, u0=gaussian_bump, u1=_zero, **values)


def _pure() -> Scenario:
    return Scenario(
        name="pure",
        description="pure second-order dynamic boundary conditions, Gaussian initial displacement",
        spec=_pure_spec(variant=ProblemVariant.PURE_SECOND_ORDER),
        curve=unit_circle(), T=1.0, tau0=PURE_TAU0, seed=WAVE_SEED,
    )


def _advection_bulk() -> Scenario:
    return Scenario(
        name="adv-bulk",
        description="constant advection (2, 0) in the bulk",
        spec=_pure_spec(
            variant=ProblemVariant.ADVECTIVE,
            v_omega=lambda x: np.broadcast_to(np.array([2.0, 0.0]), x.shape).copy(),
            v_gamma=lambda x: np.zeros_like(x),
        ),
        curve=unit_circle(), T=1.0, tau0=PURE_TAU0, seed=WAVE_SEED,
    )


def _advection_surface() -> Scenario:
    return Scenario(
        name="adv-surface",
        description="rotational advection (-x2, x1) on the boundary only",
        spec=_pure_spec(
            variant=ProblemVariant.ADVECTIVE,
            v_omega=lambda x: np.zeros_like(x),
            v_gamma=lambda x: np.column_stack((-x[:, 1], x[:, 0])),
        ),
        curve=unit_circle(), T=1.0, tau0=PURE_TAU0, seed=WAVE_SEED,
    )


def _strong_damping(beta: float = 1.0, name: str = "sdamp") -> Scenario:
    return Scenario(
        name=name,
        description=f"strong damping d_omega = 0.1, d_gamma = 0.2, beta = {beta:g}",
        spec=ProblemSpec(
            variant=ProblemVariant.STRONG_DAMPING, mu=1.0, beta=beta, kappa=0.0,
            d_omega=0.1, d_gamma=0.2, u0=gaussian_bump, u1=_zero,
        ),
        curve=unit_circle(), T=1.0, tau0=PURE_TAU0, seed=WAVE_SEED,
    )


def _radius(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.hypot(x[:, 0], x[:, 1]), 1e-300)


def acoustic_exact(k: float = ACOUSTIC_EXPONENT) -> ExactSolution:
    """u = sin(2 pi t) r^k and delta = k / (2 pi) cos(2 pi t) r^k"""
    omega = 2.0 * np.pi

    def grad_radial(x, scale):
        r = _radius(x)
        return (scale * k * r ** (k - 2.0))[:, None] * x

    return ExactSolution(
        u=lambda x, t: np.sin(omega * t) * _radius(x) ** k,
        grad_u=lambda x, t: grad_radial(x, np.sin(omega * t)),
        delta=lambda x, t: k / omega * np.cos(omega * t) * _radius(x) ** k,
        grad_delta=lambda x, t: grad_radial(x, k / omega * np.cos(omega * t)),
    )


def acoustic_spec(k: float = ACOUSTIC_EXPONENT, c_omega: float = 1.0, c_gamma: float = 1.0,
                  mu_gamma: float = 1.0, a_omega: float = 1.0, k_gamma: float = 1.0) -> ProblemSpec:
    """Acoustic problem with sources manufactured from ``acoustic_exact``"""
    omega = 2.0 * np.pi

    def f_omega(x, t):
        r = _radius(x)
        return np.sin(omega * t) * ((a_omega - omega ** 2) * r ** k - c_omega * k ** 2 * r ** (k - 2.0))

    def f_gamma(x, t):
        # delta is radial, so its Laplace-Beltrami term vanishes on the circle
        factor = -omega * k * mu_gamma + k_gamma * k / omega - omega * c_omega
        return np.cos(omega * t) * factor * _radius(x) ** k

    return ProblemSpec(
        variant=ProblemVariant.ACOUSTIC,
        c_omega=c_omega, c_gamma=c_gamma, mu_gamma=mu_gamma, a_omega=a_omega, k_gamma=k_gamma,
        f_omega=f_omega, f_gamma=f_gamma, load_rule=LoadRule.QUADRATURE,
        u0=_zero,
        u1=lambda x: omega * _radius(x) ** k,
        delta0=lambda x: k / omega * _radius(x) ** k,
        delta1=_zero,
    )


def _acoustic() -> Scenario:
    return Scenario(
        name="acoustic",
        description="acoustic boundary conditions with a manufactured solution, k = 1.2",
        spec=acoustic_spec(),
        curve=unit_circle(), T=0.2, tau0=ACOUSTIC_TAU0,
        comparison=ComparisonMode.EXACT,
        exact=acoustic_exact(),
    )


SCENARIOS: Dict[str, Callable[[], Scenario]] = {
    "pure": _pure,
    "adv-bulk": _advection_bulk,
    "adv-surface": _advection_surface,
    "sdamp": _strong_damping,
    "sdamp-matched": lambda: _strong_damping(beta=2.0, name="sdamp-matched"),
    "acoustic": _acoustic,
}


def list_scenarios() -> List[str]:
    return sorted(SCENARIOS)


def scenario(name: str) -> Scenario:
    try:
        factory = SCENARIOS[name]
    except KeyError:
        raise UnknownScenario(f"unknown scenario '{name}', choose from {list_scenarios()}") from None
    logger.debug(f"Loaded scenario {name}")
    return factory()
