"""Error measurement, reference comparison, Ritz diagnostics and convergence rates."""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from assembly import AssembledOperators, DofMap, ProblemSpec, assemble_stiffness, build_dofmap, interpolate
from errors import HierarchyMismatch, InvalidArgument, MissingGradient, NonPositiveError, SingularMatrix
from geometry import BoundaryCurve, curved_map_batch, lifted_edge
from linalg import SolverHandle, has_constant_kernel
from mesh import Mesh2D, RefinementHierarchy, boundary_triangles
from models import DofLayout, ErrorMetric, ErrorReport, NormKind, ProblemVariant, SolverMode
from quadrature import gauss_edge_rule, triangle_rule

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExactSolution:
    """Exact fields as vectorized callables of (x, t); ``delta`` is the acoustic boundary unknown"""

    u: Callable
    grad_u: Optional[Callable] = None
    delta: Optional[Callable] = None
    grad_delta: Optional[Callable] = None


def discrete_norm(v: np.ndarray, kind: NormKind, operators, solver: Optional[SolverHandle] = None) -> float:
    """Discrete norms; ``S`` expects a stacked state (v, u) of twice the size"""
    kind = NormKind(kind)
    v = np.asarray(v, dtype=float)
    M, A = operators.M, operators.A
    if kind == NormKind.MH:
        return math.sqrt(max(0.0, float(v @ (M @ v))))
    if kind == NormKind.AH:
        return math.sqrt(max(0.0, float(v @ (A @ v))))

    if has_constant_kernel(A):
        raise SingularMatrix(f"{kind.value} norm needs a nonsingular A")
    solver = solver or SolverHandle(SolverMode.ITERATIVE_SPD)
    if kind == NormKind.DUAL_AH:
        Mv = M @ v
        return math.sqrt(max(0.0, float(Mv @ solver.solve(A, Mv))))
    n = M.shape[0]
    velocity, displacement = v[:n], v[n:]
    value = velocity @ solver.solve(A, velocity) + displacement @ (M @ displacement)
    return math.sqrt(max(0.0, float(value)))


def split_norms(e: np.ndarray, operators: AssembledOperators, level: Optional[int] = None,
                t: float = 0.0) -> ErrorReport:
    """Bulk and surface L2/H1 norms of a nodal vector from the separately assembled parts"""
    l2_bulk = float(e @ (operators.bulk_mass @ e))
    l2_surf = float(e @ (operators.surface_mass @ e))
    semi_bulk = float(e @ (operators.bulk_stiffness @ e))
    semi_surf = float(e @ (operators.surface_stiffness @ e))
    return ErrorReport(
        err_l2_bulk=math.sqrt(max(0.0, l2_bulk)),
        err_l2_surf=math.sqrt(max(0.0, l2_surf)),
        err_h1_bulk=math.sqrt(max(0.0, l2_bulk + semi_bulk)),
        err_h1_surf=math.sqrt(max(0.0, l2_surf + semi_surf)),
        metric=ErrorMetric.NODAL_DISCRETE,
        level=level,
        t=t,
        surface_weight=operators.surface_weight,
    )


def _barycentric_gradients(corners: np.ndarray) -> np.ndarray:
    """Gradients of the barycentric coordinates of triangles (m, 3, 2), shape (m, 3, 2)"""
    x, y = corners[:, :, 0], corners[:, :, 1]
    twice_area = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (y[:, 1] - y[:, 0]) * (x[:, 2] - x[:, 0])
    return np.stack((
        np.column_stack((y[:, 1] - y[:, 2], x[:, 2] - x[:, 1])),
        np.column_stack((y[:, 2] - y[:, 0], x[:, 0] - x[:, 2])),
        np.column_stack((y[:, 0] - y[:, 1], x[:, 1] - x[:, 0])),
    ), axis=1) / twice_area[:, None, None]


class LiftedQuadrature:
    """Quadrature on the curved domain Omega and on Gamma through the element maps G_h.

    Triangles without a boundary edge are integrated on the straight element;
    triangles owning a boundary edge are mapped with G_h, and boundary edges are
    lifted onto Gamma with the arc-length element |DP(y)(q - p)| ds.
    """

    def __init__(self, mesh: Mesh2D, curve: BoundaryCurve, degree: int = 4, edge_points: int = 4):
        self.mesh = mesh
        rule = triangle_rule(degree)
        self.lam = rule.barycentric

        # local vertex order: boundary-owning triangles are rotated to (a0, a1, a2)
        local = mesh.triangles.copy()
        tri, a0, a1, a2 = boundary_triangles(mesh)
        local[tri] = np.column_stack((a0, a1, a2))
        self.local_vertices = local

        corners = mesh.vertices[local]
        areas = 0.5 * np.abs(
            (corners[:, 1, 0] - corners[:, 0, 0]) * (corners[:, 2, 1] - corners[:, 0, 1])
            - (corners[:, 1, 1] - corners[:, 0, 1]) * (corners[:, 2, 0] - corners[:, 0, 0])
        )
        gradients = _barycentric_gradients(corners)
        nt, nq = len(local), len(rule.weights)

        self.points = np.einsum("qi,eid->eqd", self.lam, corners)
        self.weights = areas[:, None] * rule.weights[None, :]
        self.basis_gradients = np.broadcast_to(gradients[:, None, :, :], (nt, nq, 3, 2)).copy()

        if len(tri):
            mapped, jacobians = curved_map_batch(corners[tri, 0], corners[tri, 1], corners[tri, 2], curve, self.lam)
            determinants = np.linalg.det(jacobians)
            if np.any(determinants <= 0.0):
                logger.warning("Curved element map has a non-positive Jacobian determinant")
            inverse_transpose = np.linalg.inv(jacobians).transpose(0, 1, 3, 2)
            self.points[tri] = mapped
            self.weights[tri] *= np.abs(determinants)
            self.basis_gradients[tri] = np.einsum("mqij,mkj->mqki", inverse_transpose, gradients[tri])

        edge_rule = gauss_edge_rule(edge_points)
        self.phi = np.column_stack((1.0 - edge_rule.points, edge_rule.points))
        self.edges = mesh.boundary_edges[:, :2]
        n_edges = len(self.edges)
        self.edge_points = np.empty((n_edges, edge_points, 2))
        self.edge_tangents = np.empty((n_edges, edge_points, 2))
        self.edge_weights = np.empty((n_edges, edge_points))
        self.edge_speed = np.empty((n_edges, edge_points))
        for index, (i, j) in enumerate(self.edges):
            points, speed, tangents = lifted_edge(mesh.vertices[i], mesh.vertices[j], curve, edge_rule.points)
            self.edge_points[index] = points
            self.edge_tangents[index] = tangents
            self.edge_speed[index] = speed
            self.edge_weights[index] = edge_rule.weights * speed

    def bulk_values(self, nodal: np.ndarray) -> np.ndarray:
        return np.einsum("qi,ei->eq", self.lam, nodal[self.local_vertices])

    def bulk_gradients(self, nodal: np.ndarray) -> np.ndarray:
        return np.einsum("eqid,ei->eqd", self.basis_gradients, nodal[self.local_vertices])

    def surface_values(self, nodal_by_vertex: np.ndarray) -> np.ndarray:
        return np.einsum("qi,ei->eq", self.phi, nodal_by_vertex[self.edges])

    def surface_derivatives(self, nodal_by_vertex: np.ndarray) -> np.ndarray:
        """Arc-length derivative of the lifted P1 trace at the edge quadrature points"""
        jump = nodal_by_vertex[self.edges[:, 1]] - nodal_by_vertex[self.edges[:, 0]]
        return jump[:, None] / self.edge_speed

    def evaluate(self, field: Callable, t: float, on_surface: bool = False) -> np.ndarray:
        points = self.edge_points if on_surface else self.points
        shape = points.shape[:2]
        return np.asarray(field(points.reshape(-1, 2), t), dtype=float).reshape(shape)

    def evaluate_vector(self, field: Callable, t: float, on_surface: bool = False) -> np.ndarray:
        points = self.edge_points if on_surface else self.points
        return np.asarray(field(points.reshape(-1, 2), t), dtype=float).reshape(points.shape)


def _surface_by_vertex(solution: np.ndarray, dofmap: DofMap) -> np.ndarray:
    """Surface unknown spread to vertex numbering (trace or delta dofs)"""
    values = np.zeros(dofmap.n_vertices)
    values[dofmap.boundary_vertex_order] = solution[dofmap.surface_dofs]
    return values


def error_vs_exact(mesh: Mesh2D, operators: AssembledOperators, u_h: np.ndarray, exact: ExactSolution,
                   t: float, metric: ErrorMetric = ErrorMetric.NODAL_DISCRETE,
                   curve: Optional[BoundaryCurve] = None, level: Optional[int] = None,
                   quadrature: Optional[LiftedQuadrature] = None) -> ErrorReport:
    dofmap = operators.dofmap
    acoustic = dofmap.layout == DofLayout.ACOUSTIC_BLOCK
    surface_exact = exact.delta if acoustic and exact.delta is not None else exact.u

    if ErrorMetric(metric) == ErrorMetric.NODAL_DISCRETE:
        nodal = interpolate(
            mesh, lambda x: exact.u(x, t), dofmap,
            surface_function=(lambda x: surface_exact(x, t)) if acoustic else None,
        )
        return split_norms(nodal - u_h, operators, level=level, t=t)

    if quadrature is None:
        if curve is None:
            raise InvalidArgument("the lifted metric needs the boundary curve")
        quadrature = LiftedQuadrature(mesh, curve)
    bulk_nodal = u_h[:dofmap.n_vertices]
    surface_nodal = _surface_by_vertex(u_h, dofmap)

    bulk_diff = quadrature.bulk_values(bulk_nodal) - quadrature.evaluate(exact.u, t)
    l2_bulk = float(np.sum(quadrature.weights * bulk_diff ** 2))
    surf_diff = quadrature.surface_values(surface_nodal) - quadrature.evaluate(surface_exact, t, on_surface=True)
    l2_surf = float(np.sum(quadrature.edge_weights * surf_diff ** 2))

    h1_bulk = h1_surf = None
    if exact.grad_u is not None:
        grad_diff = quadrature.bulk_gradients(bulk_nodal) - quadrature.evaluate_vector(exact.grad_u, t)
        h1_bulk = math.sqrt(l2_bulk + float(np.sum(quadrature.weights[..., None] * grad_diff ** 2)))
    surface_gradient = exact.grad_delta if acoustic else exact.grad_u
    if surface_gradient is not None:
        exact_derivative = np.einsum(
            "eqd,eqd->eq", quadrature.evaluate_vector(surface_gradient, t, on_surface=True), quadrature.edge_tangents)
        derivative_diff = quadrature.surface_derivatives(surface_nodal) - exact_derivative
        h1_surf = math.sqrt(l2_surf + float(np.sum(quadrature.edge_weights * derivative_diff ** 2)))

    return ErrorReport(
        err_l2_bulk=math.sqrt(l2_bulk),
        err_l2_surf=math.sqrt(l2_surf),
        err_h1_bulk=h1_bulk,
        err_h1_surf=h1_surf,
        metric=ErrorMetric.LIFTED_QUADRATURE,
        level=level,
        t=t,
        surface_weight=operators.surface_weight,
    )


def restrict_to_coarse(hierarchy: RefinementHierarchy, coarse_level: int, fine_level: int,
                       vector: np.ndarray, coarse_dofmap: DofMap) -> np.ndarray:
    """Nodal restriction of a fine-level vector through the vertex injection"""
    if fine_level <= coarse_level:
        raise HierarchyMismatch(f"reference level {fine_level} is not finer than level {coarse_level}")
    if fine_level >= hierarchy.depth:
        raise HierarchyMismatch(f"level {fine_level} is not part of the hierarchy")
    fine_mesh = hierarchy.levels[fine_level]
    if coarse_dofmap.n_vertices != hierarchy.levels[coarse_level].n_vertices:
        raise HierarchyMismatch("coarse dof map does not belong to the coarse level")
    fine_dofmap = build_dofmap(
        fine_mesh,
        ProblemVariant.ACOUSTIC if coarse_dofmap.layout == DofLayout.ACOUSTIC_BLOCK else ProblemVariant.PURE_SECOND_ORDER,
    )
    if len(vector) != fine_dofmap.n_dofs:
        raise HierarchyMismatch(f"reference has {len(vector)} dofs, level {fine_level} has {fine_dofmap.n_dofs}")

    injection = hierarchy.injection(coarse_level, fine_level)
    bulk = vector[injection]
    if coarse_dofmap.layout != DofLayout.ACOUSTIC_BLOCK:
        return bulk
    fine_boundary = injection[coarse_dofmap.boundary_vertex_order]
    positions = np.searchsorted(fine_dofmap.boundary_vertex_order, fine_boundary)
    if np.any(positions >= fine_dofmap.n_boundary) or np.any(
            fine_dofmap.boundary_vertex_order[np.minimum(positions, fine_dofmap.n_boundary - 1)] != fine_boundary):
        raise HierarchyMismatch("coarse boundary vertices are not boundary vertices of the fine level")
    return np.concatenate((bulk, vector[fine_dofmap.n_vertices + positions]))


def error_vs_reference(hierarchy: RefinementHierarchy, coarse_level: int, fine_level: int,
                       coarse_solution: np.ndarray, fine_reference: np.ndarray,
                       operators_coarse: AssembledOperators, t: float = 0.0) -> ErrorReport:
    if len(coarse_solution) != operators_coarse.n_dofs:
        raise HierarchyMismatch("coarse solution does not match the coarse operators")
    restricted = restrict_to_coarse(hierarchy, coarse_level, fine_level, fine_reference, operators_coarse.dofmap)
    return split_norms(restricted - coarse_solution, operators_coarse, level=coarse_level, t=t)


def ritz_project(mesh: Mesh2D, curve: BoundaryCurve, spec: ProblemSpec, exact: ExactSolution,
                 solver: Optional[SolverHandle] = None, t: float = 0.0,
                 quadrature: Optional[LiftedQuadrature] = None) -> np.ndarray:
    """Solve a_h(R u, v_h) = a(u, v_h^l) with curved quadrature on the right-hand side"""
    if exact.grad_u is None:
        raise MissingGradient("the Ritz map needs the exact gradient")
    dofmap = build_dofmap(mesh, ProblemVariant.PURE_SECOND_ORDER)
    A = assemble_stiffness(mesh, spec, dofmap)
    if spec.kappa <= 0.0 or has_constant_kernel(A):
        raise SingularMatrix("the Ritz map needs kappa > 0")
    quadrature = quadrature or LiftedQuadrature(mesh, curve)
    n = mesh.n_vertices

    grad = quadrature.evaluate_vector(exact.grad_u, t)
    bulk = np.einsum("eqd,eqkd,eq->ek", grad, quadrature.basis_gradients, quadrature.weights)
    rhs = np.bincount(quadrature.local_vertices.ravel(), weights=bulk.ravel(), minlength=n)

    # on Gamma: beta * tangential derivatives + kappa * values, with d(phi)/ds = (-1, 1)
    surface_grad = quadrature.evaluate_vector(exact.grad_u, t, on_surface=True)
    tangential = np.einsum("eqd,eqd->eq", surface_grad, quadrature.edge_tangents)
    edge_rule_weights = quadrature.edge_weights / quadrature.edge_speed
    d_phi = np.array([-1.0, 1.0])
    stiffness_part = spec.beta * np.einsum("eq,eq,k->ek", tangential, edge_rule_weights, d_phi)
    values = quadrature.evaluate(exact.u, t, on_surface=True)
    mass_part = spec.kappa * np.einsum("eq,eq,qk->ek", values, quadrature.edge_weights, quadrature.phi)
    rhs += np.bincount(quadrature.edges.ravel(), weights=(stiffness_part + mass_part).ravel(), minlength=n)

    solver = solver or SolverHandle(SolverMode.DIRECT)
    return solver.solve(A, rhs)


def eoc(errors: Sequence[float], hs: Sequence[float]) -> List[float]:
    """Estimated orders of convergence between consecutive rows"""
    errors = [float(e) for e in errors]
    hs = [float(h) for h in hs]
    if len(errors) != len(hs) or len(errors) < 2:
        raise InvalidArgument("eoc needs two or more errors and matching step sizes")
    if any(b >= a for a, b in zip(hs, hs[1:])) or any(h <= 0.0 for h in hs):
        raise InvalidArgument(f"step sizes must be positive and strictly decreasing: {hs}")
    bad = [e for e in errors if not e > 0.0]
    if bad:
        raise NonPositiveError(f"errors must be positive, got {bad}")
    return [math.log(e0 / e1) / math.log(h0 / h1) for e0, e1, h0, h1 in zip(errors, errors[1:], hs, hs[1:])]
