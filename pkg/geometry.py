"""Smooth boundary curves, closest-point projection and the curved element map G_h.

Boundary triangles E = (a0, a1, a2) with the straight boundary edge a1a2 are
mapped onto curved elements by the transfinite map

    G_h(lam) = lam0 * a0 + (lam1 + lam2) * P((lam1 * a1 + lam2 * a2) / (lam1 + lam2))

where P is the closest-point projection onto the boundary curve. The map
fixes the vertices, is the identity on the edges a0a1 and a0a2 and sends
a1a2 onto the boundary arc.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import optimize

from errors import AmbiguousProjection, DegenerateElement, InvalidArgument, ZeroLengthEdge
from models import CurveKind

logger = logging.getLogger(__name__)

# projections closer than this to the circle centre are rejected
CIRCLE_SINGULAR_RADIUS = 0.1

CurveFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class BoundaryCurve:
    """Closed boundary curve Gamma, parametrized over [0, 2*pi)"""

    kind: CurveKind
    parametrization: Optional[CurveFunction] = None
    derivative: Optional[CurveFunction] = None
    second_derivative: Optional[CurveFunction] = None
    n_sweep: int = 4096

    def __post_init__(self):
        if self.kind == CurveKind.PARAMETRIZED:
            if self.parametrization is None or self.derivative is None:
                raise InvalidArgument("parametrized curves need a parametrization and its derivative")
            theta = np.linspace(0.0, 2.0 * np.pi, 257)
            speed = np.linalg.norm(self.derivative(theta), axis=1)
            if np.any(speed <= 0.0):
                raise InvalidArgument("curve derivative vanishes")

    # parametric access

    def point(self, theta) -> np.ndarray:
        """Curve points at the given angles"""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if self.kind == CurveKind.UNIT_CIRCLE:
            return np.column_stack((np.cos(theta), np.sin(theta)))
        if self.kind == CurveKind.PARAMETRIZED:
            return np.asarray(self.parametrization(theta), dtype=float)
        raise InvalidArgument("a polygonal boundary has no parametrization")

    def tangent(self, theta) -> np.ndarray:
        """Unnormalized tangents d gamma / d theta"""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if self.kind == CurveKind.UNIT_CIRCLE:
            return np.column_stack((-np.sin(theta), np.cos(theta)))
        if self.kind == CurveKind.PARAMETRIZED:
            return np.asarray(self.derivative(theta), dtype=float)
        raise InvalidArgument("a polygonal boundary has no parametrization")

    def curvature_vector(self, theta) -> np.ndarray:
        """Second derivative of the parametrization"""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if self.kind == CurveKind.UNIT_CIRCLE:
            return -self.point(theta)
        if self.second_derivative is not None:
            return np.asarray(self.second_derivative(theta), dtype=float)
        step = 1e-6
        return (self.tangent(theta + step) - self.tangent(theta - step)) / (2.0 * step)

    # closest points

    def closest_point(self, x) -> Tuple[np.ndarray, float]:
        """Return the closest point on the curve and its parameter"""
        x = np.asarray(x, dtype=float)
        if self.kind == CurveKind.UNIT_CIRCLE:
            r = float(np.hypot(x[0], x[1]))
            if r < CIRCLE_SINGULAR_RADIUS:
                raise AmbiguousProjection(f"point {x.tolist()} is too close to the circle centre")
            theta = float(np.arctan2(x[1], x[0]) % (2.0 * np.pi))
            return x / r, theta
        if self.kind == CurveKind.POLYGONAL:
            return x.copy(), float("nan")
        return self._closest_parametrized(x)

    def _closest_parametrized(self, x: np.ndarray) -> Tuple[np.ndarray, float]:
        grid = np.linspace(0.0, 2.0 * np.pi, self.n_sweep, endpoint=False)
        d2 = np.sum((self.point(grid) - x) ** 2, axis=1)

        # local minima of the sampled distance (periodic)
        is_min = (d2 <= np.roll(d2, 1)) & (d2 <= np.roll(d2, -1))
        minima = np.flatnonzero(is_min)
        minima = minima[np.argsort(d2[minima])]
        best = int(minima[0])
        if len(minima) > 1:
            second = int(minima[1])
            gap = min(abs(best - second), self.n_sweep - abs(best - second))
            if gap > 2 and d2[second] - d2[best] <= 1e-10 * max(1.0, d2[best]):
                raise AmbiguousProjection(f"point {x.tolist()} has no unique closest point")

        def residual(theta):
            return float(np.dot(self.point(theta)[0] - x, self.tangent(theta)[0]))

        def residual_prime(theta):
            g1 = self.tangent(theta)[0]
            return float(np.dot(g1, g1) + np.dot(self.point(theta)[0] - x, self.curvature_vector(theta)[0]))

        dtheta = 2.0 * np.pi / self.n_sweep
        try:
            theta = optimize.newton(residual, grid[best], fprime=residual_prime, tol=1e-15, maxiter=50)
            if abs(theta - grid[best]) > 2.0 * dtheta:
                raise RuntimeError("Newton iteration left the sweep bracket")
        except RuntimeError:
            result = optimize.minimize_scalar(
                lambda th: float(np.sum((self.point(th)[0] - x) ** 2)),
                bounds=(grid[best] - dtheta, grid[best] + dtheta),
                method="bounded",
                options={"xatol": 1e-14},
            )
            theta = float(result.x)
        theta = float(theta % (2.0 * np.pi))
        return self.point(theta)[0], theta

    def project_points(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == CurveKind.UNIT_CIRCLE:
            r = np.hypot(points[:, 0], points[:, 1])
            if np.any(r < CIRCLE_SINGULAR_RADIUS):
                raise AmbiguousProjection("projection requested too close to the circle centre")
            return points / r[:, None]
        if self.kind == CurveKind.POLYGONAL:
            return points.copy()
        return np.array([self._closest_parametrized(x)[0] for x in points])

    def projection_jacobians(self, points: np.ndarray) -> np.ndarray:
        """Derivatives DP(y) of the closest-point map, shape (n, 2, 2)"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        if self.kind == CurveKind.POLYGONAL:
            return np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
        if self.kind == CurveKind.UNIT_CIRCLE:
            r = np.hypot(points[:, 0], points[:, 1])
            if np.any(r < CIRCLE_SINGULAR_RADIUS):
                raise AmbiguousProjection("projection requested too close to the circle centre")
            unit = points / r[:, None]
            tangent = np.column_stack((-unit[:, 1], unit[:, 0]))
            return np.einsum("ni,nj->nij", tangent, tangent) / r[:, None, None]
        jacobians = np.empty((n, 2, 2))
        for i, y in enumerate(points):
            p, theta = self._closest_parametrized(y)
            g1 = self.tangent(theta)[0]
            g2 = self.curvature_vector(theta)[0]
            denominator = np.dot(g1, g1) + np.dot(p - y, g2)
            jacobians[i] = np.outer(g1, g1) / denominator
        return jacobians

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Distance of each point to the curve"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == CurveKind.UNIT_CIRCLE:
            return np.abs(np.hypot(points[:, 0], points[:, 1]) - 1.0)
        if self.kind == CurveKind.POLYGONAL:
            return np.zeros(points.shape[0])
        return np.linalg.norm(self.project_points(points) - points, axis=1)


def unit_circle() -> BoundaryCurve:
    """The default boundary x1^2 + x2^2 = 1"""
    return BoundaryCurve(kind=CurveKind.UNIT_CIRCLE)


def polygonal_boundary() -> BoundaryCurve:
    """Boundary treated as the polygon itself, so G_h is the identity"""
    return BoundaryCurve(kind=CurveKind.POLYGONAL)


def parametrized_curve(parametrization: CurveFunction, derivative: CurveFunction,
                       second_derivative: Optional[CurveFunction] = None) -> BoundaryCurve:
    """Closed curve gamma(theta), theta in [0, 2 pi), with its derivatives"""
    return BoundaryCurve(
        kind=CurveKind.PARAMETRIZED,
        parametrization=parametrization,
        derivative=derivative,
        second_derivative=second_derivative,
    )


def ellipse(semi_x: float, semi_y: float) -> BoundaryCurve:
    """Axis-aligned ellipse centred at the origin"""
    if semi_x <= 0.0 or semi_y <= 0.0:
        raise InvalidArgument("ellipse semi-axes must be positive")
    return parametrized_curve(
        lambda th: np.column_stack((semi_x * np.cos(th), semi_y * np.sin(th))),
        lambda th: np.column_stack((-semi_x * np.sin(th), semi_y * np.cos(th))),
        lambda th: np.column_stack((-semi_x * np.cos(th), -semi_y * np.sin(th))),
    )


def project_to_boundary(x, curve: BoundaryCurve) -> np.ndarray:
    """Closest point on Gamma"""
    return curve.closest_point(x)[0]


def project_points(points: np.ndarray, curve: BoundaryCurve) -> np.ndarray:
    """Closest points on Gamma for an (n, 2) array"""
    return curve.project_points(points)


def projection_jacobian(y, curve: BoundaryCurve) -> np.ndarray:
    """2x2 derivative of the closest-point map at y"""
    return curve.projection_jacobians(np.asarray(y, dtype=float)[None, :])[0]


@dataclass(frozen=True)
class CurvedTriangleMap:
    """Element map of one boundary triangle (a0 interior, a1 a2 on Gamma, CCW)"""

    interior_vertex: np.ndarray
    boundary_vertices: Tuple[np.ndarray, np.ndarray]
    curve: BoundaryCurve
    area: float = field(init=False)

    def __post_init__(self):
        a0 = np.asarray(self.interior_vertex, dtype=float)
        a1, a2 = (np.asarray(v, dtype=float) for v in self.boundary_vertices)
        area = 0.5 * ((a1[0] - a0[0]) * (a2[1] - a0[1]) - (a1[1] - a0[1]) * (a2[0] - a0[0]))
        if area <= 0.0:
            raise DegenerateElement(f"boundary triangle has non-positive area {area}")
        object.__setattr__(self, "interior_vertex", a0)
        object.__setattr__(self, "boundary_vertices", (a1, a2))
        object.__setattr__(self, "area", float(area))

    def evaluate(self, lam: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Mapped points and DG_h (w.r.t. x on the straight element) at barycentric points"""
        a1, a2 = self.boundary_vertices
        points, jacobians = curved_map_batch(
            self.interior_vertex[None, :], a1[None, :], a2[None, :], self.curve, np.atleast_2d(lam)
        )
        return points[0], jacobians[0]


def curved_map_batch(a0: np.ndarray, a1: np.ndarray, a2: np.ndarray, curve: BoundaryCurve,
                     lam: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Evaluate G_h and DG_h on m boundary triangles at q barycentric points.

    Returns points of shape (m, q, 2) and Jacobians of shape (m, q, 2, 2).
    """
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    if np.any(lam < -1e-14) or np.any(np.abs(lam.sum(axis=1) - 1.0) > 1e-12):
        raise InvalidArgument("barycentric coordinates must be non-negative and sum to one")
    m, q = a0.shape[0], lam.shape[0]
    l0, l1, l2 = (lam[:, k][None, :, None] for k in range(3))
    s = l1 + l2
    A0, A1, A2 = a0[:, None, :], a1[:, None, :], a2[:, None, :]

    safe_s = np.where(s > 0.0, s, 1.0)
    y = np.where(s > 0.0, (l1 * A1 + l2 * A2) / safe_s, 0.5 * (A1 + A2))
    y = np.broadcast_to(y, (m, q, 2)).reshape(m * q, 2)

    p = curve.project_points(y).reshape(m, q, 2)
    dp = curve.projection_jacobians(y).reshape(m, q, 2, 2)
    # vertices already lie on Gamma: keep them bitwise so interior edges map identically
    on_a1 = np.broadcast_to((l2 == 0.0) & (l1 > 0.0), (m, q, 1))
    on_a2 = np.broadcast_to((l1 == 0.0) & (l2 > 0.0), (m, q, 1))
    p = np.where(on_a1, np.broadcast_to(A1, (m, q, 2)), p)
    p = np.where(on_a2, np.broadcast_to(A2, (m, q, 2)), p)

    points = l0 * A0 + s * p
    y = y.reshape(m, q, 2)
    d_xi = -A0 + p + np.einsum("mqij,mqj->mqi", dp, A1 - y)
    d_eta = -A0 + p + np.einsum("mqij,mqj->mqi", dp, A2 - y)
    reference_jacobian = np.stack((d_xi, d_eta), axis=-1)

    affine = np.stack((a1 - a0, a2 - a0), axis=-1)  # (m, 2, 2)
    if np.any(np.linalg.det(affine) <= 0.0):
        raise DegenerateElement("boundary triangle with non-positive area")
    affine_inverse = np.linalg.inv(affine)
    jacobians = np.einsum("mqij,mjk->mqik", reference_jacobian, affine_inverse)
    return points, jacobians


def curved_map(element_map: CurvedTriangleMap, lam) -> Tuple[np.ndarray, float]:
    """G_h at one barycentric point together with det DG_h"""
    points, jacobians = element_map.evaluate(np.asarray(lam, dtype=float)[None, :])
    return points[0], float(np.linalg.det(jacobians[0]))


def curved_map_jacobian(element_map: CurvedTriangleMap, lam) -> np.ndarray:
    """DG_h at one barycentric point"""
    return element_map.evaluate(np.asarray(lam, dtype=float)[None, :])[1][0]


def outward_normal(p, q, centroid) -> np.ndarray:
    """Unit normal of the edge pq pointing away from the adjacent triangle's centroid"""
    p, q, centroid = (np.asarray(v, dtype=float) for v in (p, q, centroid))
    edge = q - p
    length = float(np.hypot(edge[0], edge[1]))
    if length == 0.0:
        raise ZeroLengthEdge(f"edge {p.tolist()}-{q.tolist()} has zero length")
    normal = np.array([edge[1], -edge[0]]) / length
    if np.dot(normal, 0.5 * (p + q) - centroid) < 0.0:
        normal = -normal
    return normal


def lifted_edge(p: np.ndarray, q: np.ndarray, curve: BoundaryCurve,
                s: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lift of the straight edge pq onto Gamma at edge coordinates s in [0, 1].

    Returns the points on Gamma, the arc-length speed dsigma/ds and unit tangents.
    """
    s = np.asarray(s, dtype=float)
    y = (1.0 - s)[:, None] * p + s[:, None] * q
    points = curve.project_points(y)
    velocity = np.einsum("nij,j->ni", curve.projection_jacobians(y), q - p)
    speed = np.linalg.norm(velocity, axis=1)
    return points, speed, velocity / speed[:, None]
