"""Quadrature rules on the reference triangle and on edges.

Triangle rules are given in barycentric coordinates with weights summing
to one (multiply by the element area). Edge rules live on [0, 1] with
weights summing to one (multiply by the edge length).
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class TriangleRule:
    barycentric: np.ndarray  # (q, 3)
    weights: np.ndarray  # (q,)
    degree: int


@dataclass(frozen=True)
class EdgeRule:
    points: np.ndarray  # (q,) on [0, 1]
    weights: np.ndarray  # (q,)
    degree: int


# exact for quadratics; used by the assembly of every form
EDGE_MIDPOINT_RULE = TriangleRule(
    barycentric=np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]),
    weights=np.full(3, 1.0 / 3.0),
    degree=2,
)

_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322

# six-point degree-4 rule, no point on a vertex
DEGREE4_RULE = TriangleRule(
    barycentric=np.array([
        [_A1, _A1, 1.0 - 2.0 * _A1],
        [_A1, 1.0 - 2.0 * _A1, _A1],
        [1.0 - 2.0 * _A1, _A1, _A1],
        [_A2, _A2, 1.0 - 2.0 * _A2],
        [_A2, 1.0 - 2.0 * _A2, _A2],
        [1.0 - 2.0 * _A2, _A2, _A2],
    ]),
    weights=np.array([_W1, _W1, _W1, _W2, _W2, _W2]),
    degree=4,
)


@lru_cache(maxsize=None)
def gauss_edge_rule(n_points: int) -> EdgeRule:
    """Gauss-Legendre rule with n points mapped to [0, 1]"""
    nodes, weights = np.polynomial.legendre.leggauss(n_points)
    return EdgeRule(points=0.5 * (nodes + 1.0), weights=0.5 * weights, degree=2 * n_points - 1)


def triangle_rule(degree: int) -> TriangleRule:
    if degree <= 2:
        return EDGE_MIDPOINT_RULE
    if degree <= 4:
        return DEGREE4_RULE
    raise ValueError(f"no triangle rule of degree {degree}")
