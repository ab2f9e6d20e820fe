"""Triangulations of the disc with boundary vertices on Gamma and nested refinement."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from errors import DegenerateElement, InvalidArgument
from geometry import BoundaryCurve, unit_circle
from models import CurveKind, MeshViolation, ViolationType

logger = logging.getLogger(__name__)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Mesh2D:
    """Conforming triangulation of the polygonal domain Omega_h.

    ``boundary_edges`` rows are ``(i, j, tri)`` with ``i -> j`` oriented as in
    the counter-clockwise cycle of the owning triangle ``tri``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    is_boundary: np.ndarray
    h: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(np.asarray(self.vertices, dtype=float)))
        object.__setattr__(self, "triangles", _frozen(np.asarray(self.triangles, dtype=np.int64)))
        object.__setattr__(self, "boundary_edges",
                           _frozen(np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 3)))
        object.__setattr__(self, "is_boundary", _frozen(np.asarray(self.is_boundary, dtype=bool)))
        object.__setattr__(self, "h", mesh_width(self) if len(self.triangles) else 0.0)

    @classmethod
    def from_triangles(cls, vertices: np.ndarray, triangles: np.ndarray) -> "Mesh2D":
        """Build a mesh and derive its boundary edges and flags by edge counting"""
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        boundary_edges = _find_boundary_edges(triangles)
        is_boundary = np.zeros(len(vertices), dtype=bool)
        is_boundary[boundary_edges[:, :2].ravel()] = True
        return cls(vertices, triangles, boundary_edges, is_boundary)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @property
    def n_boundary_edges(self) -> int:
        return int(self.boundary_edges.shape[0])


def _oriented_edges(triangles: np.ndarray) -> np.ndarray:
    """All triangle edges (a,b), (b,c), (c,a), shape (nt, 3, 2)"""
    return np.stack(
        (triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]), axis=1
    )


def _unique_edges(triangles: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    oriented = _oriented_edges(triangles).reshape(-1, 2)
    keys = np.sort(oriented, axis=1)
    edges, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return edges, inverse.reshape(-1), counts


def _find_boundary_edges(triangles: np.ndarray) -> np.ndarray:
    oriented = _oriented_edges(triangles).reshape(-1, 2)
    _, inverse, counts = _unique_edges(triangles)
    on_boundary = counts[inverse] == 1
    rows = np.flatnonzero(on_boundary)
    # keep the unique-edge order so the result does not depend on triangle order
    rows = rows[np.argsort(inverse[rows], kind="stable")]
    owners = rows // 3
    return np.column_stack((oriented[rows], owners)).astype(np.int64)


def triangle_areas(mesh: Mesh2D) -> np.ndarray:
    """Signed areas (positive for counter-clockwise triangles)"""
    p = mesh.vertices[mesh.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def edge_lengths(mesh: Mesh2D) -> np.ndarray:
    """Per-triangle lengths of edges (a,b), (b,c), (c,a)"""
    p = mesh.vertices[mesh.triangles]
    return np.stack((
        np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
        np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
        np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
    ), axis=1)


def mesh_width(mesh: Mesh2D) -> float:
    """Maximal element diameter h"""
    if mesh.n_triangles == 0:
        raise InvalidArgument("mesh has no triangles")
    return float(edge_lengths(mesh).max())


def polygon_area(mesh: Mesh2D) -> float:
    """Area of Omega_h"""
    return float(triangle_areas(mesh).sum())


def boundary_length(mesh: Mesh2D) -> float:
    """Length of the polygonal boundary Gamma_h"""
    ends = mesh.vertices[mesh.boundary_edges[:, :2]]
    return float(np.linalg.norm(ends[:, 1] - ends[:, 0], axis=1).sum())


def boundary_vertices(mesh: Mesh2D) -> np.ndarray:
    """Increasing indices of the flagged boundary vertices"""
    return np.flatnonzero(mesh.is_boundary)


def min_angle(mesh: Mesh2D) -> float:
    """Smallest interior angle over all triangles, in degrees"""
    lengths = edge_lengths(mesh)
    a, b, c = lengths[:, 1], lengths[:, 2], lengths[:, 0]  # opposite vertex 0, 1, 2
    angles = np.stack((
        np.arccos(np.clip((b ** 2 + c ** 2 - a ** 2) / (2.0 * b * c), -1.0, 1.0)),
        np.arccos(np.clip((a ** 2 + c ** 2 - b ** 2) / (2.0 * a * c), -1.0, 1.0)),
        np.arccos(np.clip((a ** 2 + b ** 2 - c ** 2) / (2.0 * a * b), -1.0, 1.0)),
    ), axis=1)
    return float(np.degrees(angles.min()))


def boundary_triangles(mesh: Mesh2D) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Triangles owning a boundary edge as (tri, a0, a1, a2) with a1 -> a2 the boundary edge"""
    i, j, tri = mesh.boundary_edges.T
    opposite = mesh.triangles[tri].sum(axis=1) - i - j
    return tri, opposite, i, j


def seed_disc_mesh(n: int, curve: Optional[BoundaryCurve] = None) -> Mesh2D:
    """Fan of n triangles around the origin with boundary vertices at angles 2*pi*k/n"""
    if n < 4:
        raise InvalidArgument(f"seed mesh needs at least 4 boundary vertices, got {n}")
    curve = curve or unit_circle()
    theta = 2.0 * np.pi * np.arange(n) / n
    if curve.kind == CurveKind.PARAMETRIZED:
        ring = curve.point(theta)
    else:
        ring = np.column_stack((np.cos(theta), np.sin(theta)))
    vertices = np.vstack((np.zeros((1, 2)), ring))
    k = np.arange(n)
    triangles = np.column_stack((np.zeros(n, dtype=np.int64), 1 + k, 1 + (k + 1) % n))
    mesh = Mesh2D.from_triangles(vertices, triangles)
    logger.info(f"Seeded fan mesh with {mesh.n_vertices} vertices and {mesh.n_triangles} triangles")
    return mesh


def refine(mesh: Mesh2D, curve: Optional[BoundaryCurve] = None) -> Mesh2D:
    """Red refinement; boundary edge midpoints are projected onto Gamma.

    Coarse vertices keep their indices, new midpoints are appended.
    """
    curve = curve or unit_circle()
    edges, inverse, counts = _unique_edges(mesh.triangles)
    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    on_boundary = counts == 1
    if np.any(on_boundary):
        midpoints[on_boundary] = curve.project_points(midpoints[on_boundary])

    nv = mesh.n_vertices
    vertices = np.vstack((mesh.vertices, midpoints))
    mid = (nv + inverse).reshape(-1, 3)
    a, b, c = mesh.triangles.T
    m_ab, m_bc, m_ca = mid.T
    children = np.stack((
        np.column_stack((a, m_ab, m_ca)),
        np.column_stack((m_ab, b, m_bc)),
        np.column_stack((m_ca, m_bc, c)),
        np.column_stack((m_ab, m_bc, m_ca)),
    ), axis=1).reshape(-1, 3)

    fine = Mesh2D.from_triangles(vertices, children)
    if np.any(triangle_areas(fine) <= 0.0):
        raise DegenerateElement("refinement produced a triangle with non-positive area")
    logger.debug(f"Refined mesh: h {mesh.h:.4g} -> {fine.h:.4g}, {fine.n_vertices} vertices")
    return fine


def validate(mesh: Mesh2D, curve: Optional[BoundaryCurve] = None, tol: float = 1e-12) -> List[MeshViolation]:
    """Check the Mesh2D invariants and report every violation found"""
    curve = curve or unit_circle()
    violations: List[MeshViolation] = []

    for index in np.flatnonzero(triangle_areas(mesh) <= 0.0):
        violations.append(MeshViolation(
            type=ViolationType.NEGATIVE_AREA, index=int(index),
            description=f"triangle {index} has non-positive signed area",
        ))

    edges, inverse, counts = _unique_edges(mesh.triangles)
    for index in np.flatnonzero(counts > 2):
        violations.append(MeshViolation(
            type=ViolationType.NON_CONFORMING, index=int(index),
            description=f"edge {edges[index].tolist()} is shared by {counts[index]} triangles",
        ))
    expected = {tuple(sorted(edge)) for edge in edges[counts == 1].tolist()}
    stored = {tuple(sorted(edge)) for edge in mesh.boundary_edges[:, :2].tolist()}
    for index, edge in enumerate(sorted(expected ^ stored)):
        violations.append(MeshViolation(
            type=ViolationType.NON_CONFORMING, index=index,
            description=f"boundary edge {list(edge)} disagrees with edge counting",
        ))

    per_triangle = np.bincount(mesh.boundary_edges[:, 2], minlength=mesh.n_triangles)
    for index in np.flatnonzero(per_triangle > 1):
        violations.append(MeshViolation(
            type=ViolationType.MULTIPLE_BOUNDARY_EDGES, index=int(index),
            description=f"triangle {index} owns {per_triangle[index]} boundary edges",
        ))

    on_edges = np.zeros(mesh.n_vertices, dtype=bool)
    on_edges[mesh.boundary_edges[:, :2].ravel()] = True
    for index in np.flatnonzero(on_edges != mesh.is_boundary):
        violations.append(MeshViolation(
            type=ViolationType.BOUNDARY_FLAG, index=int(index),
            description=f"vertex {index} boundary flag does not match the boundary edges",
        ))

    if curve.kind != CurveKind.POLYGONAL:
        flagged = boundary_vertices(mesh)
        distance = curve.distance(mesh.vertices[flagged]) if len(flagged) else np.zeros(0)
        for index, gap in zip(flagged[distance > tol], distance[distance > tol]):
            violations.append(MeshViolation(
                type=ViolationType.OFF_CURVE, index=int(index),
                description=f"boundary vertex {index} is {gap:.3e} away from the curve",
            ))

    if violations:
        logger.warning(f"Mesh validation found {len(violations)} violations")
    return violations


@dataclass(frozen=True)
class RefinementHierarchy:
    """Nested meshes; ``vertex_injection[k]`` maps level k vertices into level k + 1"""

    levels: List[Mesh2D]
    vertex_injection: List[np.ndarray]
    curve: BoundaryCurve

    @property
    def depth(self) -> int:
        return len(self.levels)

    def injection(self, coarse_level: int, fine_level: int) -> np.ndarray:
        """Index map from coarse_level vertices to identical fine_level vertices"""
        if not 0 <= coarse_level <= fine_level < self.depth:
            raise InvalidArgument(f"levels {coarse_level} -> {fine_level} outside 0..{self.depth - 1}")
        mapping = np.arange(self.levels[coarse_level].n_vertices)
        for level in range(coarse_level, fine_level):
            mapping = self.vertex_injection[level][mapping]
        return mapping


def build_hierarchy(n: int, levels: int, curve: Optional[BoundaryCurve] = None) -> RefinementHierarchy:
    """Seed mesh plus ``levels`` nested refinements"""
    if levels < 0:
        raise InvalidArgument(f"number of refinement levels must be non-negative, got {levels}")
    curve = curve or unit_circle()
    meshes = [seed_disc_mesh(n, curve)]
    injections = []
    for _ in range(levels):
        coarse = meshes[-1]
        meshes.append(refine(coarse, curve))
        injections.append(np.arange(coarse.n_vertices))
    logger.info(f"Built hierarchy with {len(meshes)} levels, finest h = {meshes[-1].h:.4g}")
    return RefinementHierarchy(levels=meshes, vertex_injection=injections, curve=curve)


def write_mesh(mesh: Mesh2D, path: Union[str, Path]) -> None:
    """Write the plain text mesh format (17 significant digits)"""
    lines = [f"{mesh.n_vertices} {mesh.n_triangles} {mesh.n_boundary_edges}"]
    for (x, y), flag in zip(mesh.vertices, mesh.is_boundary):
        lines.append(f"{x:.17g} {y:.17g} {int(flag)}")
    lines.extend(f"{i} {j} {k}" for i, j, k in mesh.triangles)
    lines.extend(f"{i} {j} {tri}" for i, j, tri in mesh.boundary_edges)
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path: Union[str, Path]) -> Mesh2D:
    """Inverse of write_mesh"""
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    try:
        nv, nt, nb = (int(value) for value in rows[0])
        vertex_rows = rows[1:1 + nv]
        triangle_rows = rows[1 + nv:1 + nv + nt]
        edge_rows = rows[1 + nv + nt:1 + nv + nt + nb]
        if len(edge_rows) != nb:
            raise ValueError("truncated mesh file")
        vertices = np.array([[float(x), float(y)] for x, y, _ in vertex_rows]).reshape(-1, 2)
        flags = np.array([int(flag) for _, _, flag in vertex_rows], dtype=bool)
        triangles = np.array(triangle_rows, dtype=np.int64).reshape(-1, 3)
        edges = np.array(edge_rows, dtype=np.int64).reshape(-1, 3)
    except (ValueError, IndexError) as e:
        raise InvalidArgument(f"malformed mesh file {path}: {e}") from e
    return Mesh2D(vertices, triangles, edges, flags)
