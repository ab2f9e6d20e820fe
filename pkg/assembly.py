"""P1 bulk-surface finite element assembly for the four wave problems.

Every variant leads to the second-order system  M u'' + B u' + A u = b(t).
TraceCoupled problems share one nodal unknown between Omega_h and Gamma_h;
the acoustic problem carries an independent boundary displacement delta in a
second block (all bulk dofs first, then delta at the boundary vertices).
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import DegenerateElement, InvalidArgument, MissingField, ZeroLengthEdge
from geometry import outward_normal
from mesh import Mesh2D, boundary_vertices, triangle_areas
from models import DofLayout, LoadRule, ProblemVariant
from quadrature import DEGREE4_RULE, EDGE_MIDPOINT_RULE, gauss_edge_rule

logger = logging.getLogger(__name__)

ScalarField = Callable[..., Any]

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
_EDGE_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
_EDGE_STIFFNESS = np.array([[1.0, -1.0], [-1.0, 1.0]])


class ProblemSpec(BaseModel):
    """Variant tag, coefficients, sources and initial data of one wave problem.

    Callables are vectorized: scalar fields take points of shape (n, 2)
    (sources also take t) and return shape (n,); vector fields return (n, 2).
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    variant: ProblemVariant = ProblemVariant.PURE_SECOND_ORDER

    # pure, advective and strongly damped problems
    mu: float = Field(default=1.0, gt=0.0)
    beta: float = Field(default=1.0, ge=0.0)
    kappa: float = Field(default=0.0, ge=0.0)
    alpha_omega: float = Field(default=0.0, ge=0.0)
    alpha_gamma: float = Field(default=0.0, ge=0.0)
    v_omega: Optional[ScalarField] = None
    v_gamma: Optional[ScalarField] = None
    d_omega: Optional[float] = None
    d_gamma: Optional[float] = None

    # acoustic boundary conditions
    c_omega: float = Field(default=1.0, gt=0.0)
    c_gamma: float = Field(default=1.0, gt=0.0)
    mu_gamma: float = Field(default=1.0, gt=0.0)
    a_omega: float = Field(default=1.0, gt=0.0)
    k_gamma: float = Field(default=1.0, gt=0.0)

    f_omega: Optional[ScalarField] = None
    f_gamma: Optional[ScalarField] = None
    load_rule: LoadRule = LoadRule.INTERPOLATED

    u0: Optional[ScalarField] = None
    u1: Optional[ScalarField] = None
    delta0: Optional[ScalarField] = None
    delta1: Optional[ScalarField] = None

    @model_validator(mode="after")
    def _check_variant(self) -> "ProblemSpec":
        if self.variant == ProblemVariant.STRONG_DAMPING:
            if self.d_omega is None or self.d_gamma is None or self.d_omega <= 0.0 or self.d_gamma <= 0.0:
                raise ValueError("strong damping needs d_omega > 0 and d_gamma > 0")
            if self.beta <= 0.0:
                raise ValueError("strong damping needs beta > 0")
        return self

    @property
    def layout(self) -> DofLayout:
        if self.variant == ProblemVariant.ACOUSTIC:
            return DofLayout.ACOUSTIC_BLOCK
        return DofLayout.TRACE_COUPLED

    @property
    def surface_weight(self) -> float:
        return self.mu_gamma if self.variant == ProblemVariant.ACOUSTIC else self.mu

    @property
    def has_sources(self) -> bool:
        return any(f is not None for f in (self.f_omega, self.f_gamma))

    def with_overrides(self, values: Dict[str, Any]) -> "ProblemSpec":
        """Copy with selected fields replaced (re-validated)"""
        unknown = [key for key in values if key not in type(self).model_fields]
        if unknown:
            raise InvalidArgument(f"unknown problem parameters {unknown}")
        return type(self).model_validate({**dict(self), **values})


@dataclass(frozen=True)
class DofMap:
    layout: DofLayout
    n_vertices: int
    boundary_vertex_order: np.ndarray

    @property
    def n_boundary(self) -> int:
        return int(self.boundary_vertex_order.shape[0])

    @property
    def delta_offset(self) -> Optional[int]:
        return self.n_vertices if self.layout == DofLayout.ACOUSTIC_BLOCK else None

    @property
    def n_dofs(self) -> int:
        if self.layout == DofLayout.ACOUSTIC_BLOCK:
            return self.n_vertices + self.n_boundary
        return self.n_vertices

    @property
    def surface_dofs(self) -> np.ndarray:
        """Indices of the unknowns that live on Gamma_h"""
        if self.layout == DofLayout.ACOUSTIC_BLOCK:
            return self.n_vertices + np.arange(self.n_boundary)
        return self.boundary_vertex_order

    def trace_matrix(self) -> sp.csr_matrix:
        """Selection of boundary vertex values, shape (n_boundary, n_vertices)"""
        rows = np.arange(self.n_boundary)
        return sp.csr_matrix(
            (np.ones(self.n_boundary), (rows, self.boundary_vertex_order)),
            shape=(self.n_boundary, self.n_vertices),
        )


def build_dofmap(mesh: Mesh2D, variant: ProblemVariant) -> DofMap:
    layout = DofLayout.ACOUSTIC_BLOCK if variant == ProblemVariant.ACOUSTIC else DofLayout.TRACE_COUPLED
    return DofMap(layout=layout, n_vertices=mesh.n_vertices, boundary_vertex_order=boundary_vertices(mesh))


# element geometry and scatter

def _bulk_geometry(mesh: Mesh2D):
    """Areas and barycentric gradients, shape (nt,) and (nt, 3, 2)"""
    areas = triangle_areas(mesh)
    bad = np.flatnonzero(areas <= 0.0)
    if len(bad):
        raise DegenerateElement(f"triangle {int(bad[0])} has non-positive area {areas[bad[0]]}")
    p = mesh.vertices[mesh.triangles]
    x, y = p[:, :, 0], p[:, :, 1]
    gradients = np.stack((
        np.column_stack((y[:, 1] - y[:, 2], x[:, 2] - x[:, 1])),
        np.column_stack((y[:, 2] - y[:, 0], x[:, 0] - x[:, 2])),
        np.column_stack((y[:, 0] - y[:, 1], x[:, 1] - x[:, 0])),
    ), axis=1) / (2.0 * areas[:, None, None])
    return areas, gradients


def _surface_geometry(mesh: Mesh2D):
    """Boundary edge endpoints, lengths and unit tangents"""
    ends = mesh.boundary_edges[:, :2]
    delta = mesh.vertices[ends[:, 1]] - mesh.vertices[ends[:, 0]]
    lengths = np.linalg.norm(delta, axis=1)
    bad = np.flatnonzero(lengths == 0.0)
    if len(bad):
        raise ZeroLengthEdge(f"boundary edge {int(bad[0])} has zero length")
    return ends, lengths, delta / lengths[:, None]


def _scatter(n: int, dofs: np.ndarray, local: np.ndarray) -> sp.csr_matrix:
    k = dofs.shape[1]
    rows = np.repeat(dofs[:, :, None], k, axis=2)
    cols = np.repeat(dofs[:, None, :], k, axis=1)
    matrix = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    matrix.sort_indices()
    return matrix


def bulk_mass_matrix(mesh: Mesh2D) -> sp.csr_matrix:
    areas, _ = _bulk_geometry(mesh)
    return _scatter(mesh.n_vertices, mesh.triangles, areas[:, None, None] * _LOCAL_MASS)


def bulk_stiffness_matrix(mesh: Mesh2D) -> sp.csr_matrix:
    areas, gradients = _bulk_geometry(mesh)
    local = areas[:, None, None] * np.einsum("eid,ejd->eij", gradients, gradients)
    return _scatter(mesh.n_vertices, mesh.triangles, local)


def surface_mass_matrix(mesh: Mesh2D) -> sp.csr_matrix:
    """Edge mass on Gamma_h in vertex numbering"""
    ends, lengths, _ = _surface_geometry(mesh)
    return _scatter(mesh.n_vertices, ends, lengths[:, None, None] * _EDGE_MASS)


def surface_stiffness_matrix(mesh: Mesh2D) -> sp.csr_matrix:
    """Tangential (Laplace-Beltrami) stiffness on Gamma_h in vertex numbering"""
    ends, lengths, _ = _surface_geometry(mesh)
    return _scatter(mesh.n_vertices, ends, _EDGE_STIFFNESS[None, :, :] / lengths[:, None, None])


def _restrict(matrix: sp.csr_matrix, trace: sp.csr_matrix) -> sp.csr_matrix:
    restricted = (trace @ matrix @ trace.T).tocsr()
    restricted.sort_indices()
    return restricted


def _embed(bulk: Optional[sp.spmatrix], surface: Optional[sp.spmatrix], dofmap: DofMap) -> sp.csr_matrix:
    nv, nb = dofmap.n_vertices, dofmap.n_boundary
    blocks = sp.block_diag(
        (bulk if bulk is not None else sp.csr_matrix((nv, nv)),
         surface if surface is not None else sp.csr_matrix((nb, nb))),
        format="csr",
    )
    blocks.sort_indices()
    return blocks


def assemble_mass(mesh: Mesh2D, spec: ProblemSpec, dofmap: DofMap) -> sp.csr_matrix:
    bulk = bulk_mass_matrix(mesh)
    surface = surface_mass_matrix(mesh)
    if dofmap.layout == DofLayout.ACOUSTIC_BLOCK:
        return _embed(bulk, spec.mu_gamma * _restrict(surface, dofmap.trace_matrix()), dofmap)
    return (bulk + spec.mu * surface).tocsr()


def assemble_stiffness(mesh: Mesh2D, spec: ProblemSpec, dofmap: DofMap) -> sp.csr_matrix:
    bulk_mass = bulk_mass_matrix(mesh)
    bulk = bulk_stiffness_matrix(mesh)
    surface_mass = surface_mass_matrix(mesh)
    surface = surface_stiffness_matrix(mesh)
    if dofmap.layout == DofLayout.ACOUSTIC_BLOCK:
        trace = dofmap.trace_matrix()
        return _embed(
            spec.a_omega * bulk_mass + spec.c_omega * bulk,
            _restrict(spec.k_gamma * surface_mass + spec.c_gamma * surface, trace),
            dofmap,
        )
    return (bulk + spec.beta * surface + spec.kappa * surface_mass).tocsr()


def _nodal_vectors(field: ScalarField, points: np.ndarray) -> np.ndarray:
    values = np.asarray(field(points), dtype=float)
    return np.broadcast_to(values, points.shape).copy()


def _advection_matrix(mesh: Mesh2D, spec: ProblemSpec) -> sp.csr_matrix:
    if spec.v_omega is None or spec.v_gamma is None:
        raise MissingField("the advective variant needs both v_omega and v_gamma")
    nv = mesh.n_vertices

    # bulk: (alpha w + I_h v . grad w) v with the edge-midpoint rule
    areas, gradients = _bulk_geometry(mesh)
    lam, weights = EDGE_MIDPOINT_RULE.barycentric, EDGE_MIDPOINT_RULE.weights
    v_nodal = _nodal_vectors(spec.v_omega, mesh.vertices)
    v_quad = np.einsum("qi,eid->eqd", lam, v_nodal[mesh.triangles])
    transport = np.einsum("eqd,ejd->eqj", v_quad, gradients)
    local = np.einsum("q,qk,eqj->ekj", weights, lam, transport)
    local += spec.alpha_omega * np.einsum("q,qk,qj->kj", weights, lam, lam)[None, :, :]
    bulk = _scatter(nv, mesh.triangles, areas[:, None, None] * local)

    # surface: (alpha w + I_h v . grad_Gamma w) v with two-point Gauss
    ends, lengths, tangents = _surface_geometry(mesh)
    rule = gauss_edge_rule(2)
    phi = np.column_stack((1.0 - rule.points, rule.points))
    v_boundary = np.zeros((nv, 2))
    flagged = boundary_vertices(mesh)
    v_boundary[flagged] = _nodal_vectors(spec.v_gamma, mesh.vertices[flagged])
    v_quad = np.einsum("qi,eid->eqd", phi, v_boundary[ends])
    surface_gradients = np.stack((-tangents, tangents), axis=1) / lengths[:, None, None]
    transport = np.einsum("eqd,ejd->eqj", v_quad, surface_gradients)
    local = np.einsum("q,qk,eqj->ekj", rule.weights, phi, transport)
    local += spec.alpha_gamma * np.einsum("q,qk,qj->kj", rule.weights, phi, phi)[None, :, :]
    surface = _scatter(nv, ends, lengths[:, None, None] * local)
    return (bulk + surface).tocsr()


def assemble_velocity_form(mesh: Mesh2D, spec: ProblemSpec, dofmap: DofMap) -> sp.csr_matrix:
    """Matrix B of the u' terms"""
    n = dofmap.n_dofs
    if spec.variant == ProblemVariant.PURE_SECOND_ORDER:
        return sp.csr_matrix((n, n))
    if spec.variant == ProblemVariant.ADVECTIVE:
        return _advection_matrix(mesh, spec)
    if spec.variant == ProblemVariant.STRONG_DAMPING:
        return (spec.d_omega * bulk_stiffness_matrix(mesh)
                + spec.d_gamma * surface_stiffness_matrix(mesh)).tocsr()

    trace = dofmap.trace_matrix()
    coupling = (spec.c_omega * (_restrict(surface_mass_matrix(mesh), trace) @ trace)).tocsr()
    # delta is the inward boundary displacement, delta' = -d_nu u
    matrix = sp.bmat([[None, coupling.T], [-coupling, None]], format="csr")
    matrix.sort_indices()
    return matrix


class LoadVector:
    """Time-dependent load b(t) of the second-order system"""

    def __init__(self, mesh: Mesh2D, spec: ProblemSpec, dofmap: DofMap):
        self.spec = spec
        self.dofmap = dofmap
        self.n_vertices = mesh.n_vertices
        self.vertices = mesh.vertices
        self.flagged = boundary_vertices(mesh)
        self.trace = dofmap.trace_matrix()
        self.bulk_mass = bulk_mass_matrix(mesh)
        self.surface_mass = surface_mass_matrix(mesh)

        # straight-element quadrature data for the quadrature load rule
        areas, _ = _bulk_geometry(mesh)
        self.triangles = mesh.triangles
        self._bulk_points = np.einsum("qi,eid->eqd", DEGREE4_RULE.barycentric,
                                      mesh.vertices[mesh.triangles]).reshape(-1, 2)
        self._bulk_weights = areas[:, None, None] * (DEGREE4_RULE.weights[:, None] * DEGREE4_RULE.barycentric)[None]

        ends, lengths, _ = _surface_geometry(mesh)
        rule = gauss_edge_rule(3)
        phi = np.column_stack((1.0 - rule.points, rule.points))
        self.edges = ends
        self._edge_points = np.einsum("qi,eid->eqd", phi, mesh.vertices[ends]).reshape(-1, 2)
        self._edge_weights = lengths[:, None, None] * (rule.weights[:, None] * phi)[None]

    def _bulk_integral(self, f: ScalarField, t: float) -> np.ndarray:
        values = np.asarray(f(self._bulk_points, t), dtype=float).reshape(len(self.triangles), -1)
        contributions = np.einsum("eq,eqk->ek", values, self._bulk_weights)
        return np.bincount(self.triangles.ravel(), weights=contributions.ravel(), minlength=self.n_vertices)

    def _edge_integral(self, f: ScalarField, t: float) -> np.ndarray:
        values = np.asarray(f(self._edge_points, t), dtype=float).reshape(len(self.edges), -1)
        contributions = np.einsum("eq,eqk->ek", values, self._edge_weights)
        return np.bincount(self.edges.ravel(), weights=contributions.ravel(), minlength=self.n_vertices)

    def _boundary_nodal(self, f: ScalarField, t: float) -> np.ndarray:
        values = np.zeros(self.n_vertices)
        values[self.flagged] = np.broadcast_to(
            np.asarray(f(self.vertices[self.flagged], t), dtype=float), (len(self.flagged),))
        return values

    def bulk_part(self, t: float) -> np.ndarray:
        spec = self.spec
        load = np.zeros(self.n_vertices)
        if spec.f_omega is not None:
            if spec.load_rule == LoadRule.QUADRATURE:
                load += self._bulk_integral(spec.f_omega, t)
            else:
                values = np.broadcast_to(np.asarray(spec.f_omega(self.vertices, t), dtype=float),
                                         (self.n_vertices,))
                load += self.bulk_mass @ values
        return load

    def surface_part(self, t: float) -> np.ndarray:
        """Surface source in vertex numbering (zero off Gamma_h)"""
        spec = self.spec
        if spec.f_gamma is None:
            return np.zeros(self.n_vertices)
        if spec.load_rule == LoadRule.QUADRATURE:
            return self._edge_integral(spec.f_gamma, t)
        return self.surface_mass @ self._boundary_nodal(spec.f_gamma, t)

    def __call__(self, t: float) -> np.ndarray:
        if not self.spec.has_sources:
            return np.zeros(self.dofmap.n_dofs)
        if self.dofmap.layout == DofLayout.ACOUSTIC_BLOCK:
            return np.concatenate((self.bulk_part(t), self.trace @ self.surface_part(t)))
        return self.bulk_part(t) + self.surface_part(t)


def assemble_load(mesh: Mesh2D, spec: ProblemSpec, dofmap: DofMap, t: float) -> np.ndarray:
    return LoadVector(mesh, spec, dofmap)(t)


def interpolate(mesh: Mesh2D, function: ScalarField, dofmap: DofMap,
                surface_function: Optional[ScalarField] = None) -> np.ndarray:
    """Nodal interpolant; for the acoustic block the delta values follow at the boundary vertices"""
    values = np.broadcast_to(np.asarray(function(mesh.vertices), dtype=float), (mesh.n_vertices,)).copy()
    if dofmap.layout != DofLayout.ACOUSTIC_BLOCK:
        return values
    boundary_points = mesh.vertices[dofmap.boundary_vertex_order]
    surface = surface_function if surface_function is not None else function
    delta = np.broadcast_to(np.asarray(surface(boundary_points), dtype=float), (dofmap.n_boundary,))
    return np.concatenate((values, delta))


def quasi_monotonicity_shift(B: sp.spmatrix, iterations: int = 100) -> float:
    """max(0, -lambda_min) of the symmetric part of B by shifted power iterations"""
    S = (0.5 * (B + B.T)).tocsr()
    if S.nnz == 0 or not np.any(S.data):
        return 0.0
    shift = float(abs(S).sum(axis=1).max())  # Gershgorin bound on the spectral radius
    n = S.shape[0]
    x = np.ones(n) + np.linspace(0.0, 1.0, n)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(iterations):
        y = shift * x - S @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            break
        x = y / norm
        estimate = float(x @ (S @ x))
    return max(0.0, -estimate)


def check_monotonicity(mesh: Mesh2D, spec: ProblemSpec, eps: float = 1e-8) -> List[str]:
    """Sample the coefficient conditions that make the advective form monotone"""
    if spec.variant != ProblemVariant.ADVECTIVE:
        return []
    if spec.v_omega is None or spec.v_gamma is None:
        raise MissingField("the advective variant needs both v_omega and v_gamma")
    issues: List[str] = []

    _, gradients = _bulk_geometry(mesh)
    v_nodal = _nodal_vectors(spec.v_omega, mesh.vertices)
    divergence = np.einsum("eid,eid->e", v_nodal[mesh.triangles], gradients)
    bulk_margin = spec.alpha_omega - 0.5 * divergence
    for index in np.flatnonzero(bulk_margin < -eps):
        issues.append(f"triangle {index}: alpha_omega - div(v_omega)/2 = {bulk_margin[index]:.3e}")

    ends, lengths, tangents = _surface_geometry(mesh)
    flagged = boundary_vertices(mesh)
    v_boundary = np.zeros((mesh.n_vertices, 2))
    v_boundary[flagged] = _nodal_vectors(spec.v_gamma, mesh.vertices[flagged])
    surface_divergence = np.einsum("ed,ed->e", v_boundary[ends[:, 1]] - v_boundary[ends[:, 0]], tangents) / lengths
    rule = gauss_edge_rule(2)
    for index, ((i, j), tri) in enumerate(zip(ends, mesh.boundary_edges[:, 2])):
        p, q = mesh.vertices[i], mesh.vertices[j]
        normal = outward_normal(p, q, mesh.vertices[mesh.triangles[tri]].mean(axis=0))
        for s in rule.points:
            v = (1.0 - s) * v_nodal[i] + s * v_nodal[j]
            margin = spec.alpha_gamma + 0.5 * (float(v @ normal) - surface_divergence[index])
            if margin < -eps:
                issues.append(f"boundary edge {index}: alpha_gamma + (v.nu - div_Gamma v)/2 = {margin:.3e}")
                break

    if issues:
        logger.warning(f"Advective form is not monotone at {len(issues)} sample locations")
    return issues


@dataclass(frozen=True)
class AssembledOperators:
    """M, A, B, the load and the split bulk/surface parts embedded in the N x N layout"""

    M: sp.csr_matrix
    A: sp.csr_matrix
    B: sp.csr_matrix
    load: LoadVector
    quasi_monotonicity_shift: float
    dofmap: DofMap
    bulk_mass: sp.csr_matrix
    surface_mass: sp.csr_matrix
    bulk_stiffness: sp.csr_matrix
    surface_stiffness: sp.csr_matrix
    surface_weight: float

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_dofs


def assemble_operators(mesh: Mesh2D, spec: ProblemSpec) -> AssembledOperators:
    dofmap = build_dofmap(mesh, spec.variant)
    M = assemble_mass(mesh, spec, dofmap)
    A = assemble_stiffness(mesh, spec, dofmap)
    B = assemble_velocity_form(mesh, spec, dofmap)

    bulk_mass = bulk_mass_matrix(mesh)
    surface_mass = surface_mass_matrix(mesh)
    bulk_stiffness = bulk_stiffness_matrix(mesh)
    surface_stiffness = surface_stiffness_matrix(mesh)
    if dofmap.layout == DofLayout.ACOUSTIC_BLOCK:
        trace = dofmap.trace_matrix()
        parts = (
            _embed(bulk_mass, None, dofmap),
            _embed(None, _restrict(surface_mass, trace), dofmap),
            _embed(bulk_stiffness, None, dofmap),
            _embed(None, _restrict(surface_stiffness, trace), dofmap),
        )
    else:
        parts = (bulk_mass, surface_mass, bulk_stiffness, surface_stiffness)

    rho_hat = quasi_monotonicity_shift(B)
    if spec.variant == ProblemVariant.ADVECTIVE:
        check_monotonicity(mesh, spec)
        if rho_hat > 0.0:
            logger.warning(f"Velocity form is only quasi-monotone, rho_hat = {rho_hat:.3e}")

    logger.info(f"Assembled {spec.variant.value} operators with {dofmap.n_dofs} dofs")
    return AssembledOperators(
        M=M, A=A, B=B,
        load=LoadVector(mesh, spec, dofmap),
        quasi_monotonicity_shift=rho_hat,
        dofmap=dofmap,
        bulk_mass=parts[0],
        surface_mass=parts[1],
        bulk_stiffness=parts[2],
        surface_stiffness=parts[3],
        surface_weight=spec.surface_weight,
    )


def export_coordinate_text(matrix: sp.spmatrix, path: Union[str, Path]) -> None:
    """Write ``row col value`` lines in row-major order"""
    csr = sp.csr_matrix(matrix)
    csr.sort_indices()
    coo = csr.tocoo()
    lines = [f"{i} {j} {value:.17g}" for i, j, value in zip(coo.row, coo.col, coo.data)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
