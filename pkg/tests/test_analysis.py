import math
from types import SimpleNamespace

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from analysis import (
    ExactSolution,
    LiftedQuadrature,
    discrete_norm,
    eoc,
    error_vs_exact,
    error_vs_reference,
    restrict_to_coarse,
    ritz_project,
    split_norms,
)
from assembly import ProblemSpec, assemble_operators, build_dofmap, interpolate
from conftest import random_spd
from errors import HierarchyMismatch, InvalidArgument, MissingGradient, NonPositiveError, SingularMatrix
from geometry import polygonal_boundary
from linalg import SolverHandle
from mesh import polygon_area
from models import ErrorMetric, NormKind, ProblemVariant, SolverMode
from scenarios import acoustic_exact, acoustic_spec


def _operators(M, A):
    return SimpleNamespace(M=sp.csr_matrix(M), A=sp.csr_matrix(A))


def _smooth_exact():
    return ExactSolution(
        u=lambda x, t: np.sin(x[:, 0]) * np.cos(x[:, 1]),
        grad_u=lambda x, t: np.column_stack((np.cos(x[:, 0]) * np.cos(x[:, 1]),
                                             -np.sin(x[:, 0]) * np.sin(x[:, 1]))),
    )


def test_norms_reduce_to_euclidean_for_identity(rng):
    operators = _operators(np.eye(5), np.eye(5))
    v = rng.standard_normal(5)
    for kind in (NormKind.MH, NormKind.AH, NormKind.DUAL_AH):
        assert discrete_norm(v, kind, operators) == pytest.approx(np.linalg.norm(v), rel=1e-12)
    y = rng.standard_normal(10)
    assert discrete_norm(y, NormKind.S, operators) == pytest.approx(np.linalg.norm(y), rel=1e-12)


def test_norms_are_homogeneous(rng):
    operators = _operators(random_spd(rng, 8), random_spd(rng, 8))
    v = rng.standard_normal(8)
    for kind in (NormKind.MH, NormKind.AH, NormKind.DUAL_AH):
        assert discrete_norm(-2.5 * v, kind, operators) == pytest.approx(2.5 * discrete_norm(v, kind, operators),
                                                                        rel=1e-10)


def test_dual_norm_is_the_supremum(rng):
    M, A = random_spd(rng, 10), random_spd(rng, 10)
    d = rng.standard_normal(10)
    closed_form = math.sqrt(d @ M @ np.linalg.solve(A, M @ d))
    computed = discrete_norm(d, NormKind.DUAL_AH, _operators(M, A), SolverHandle(SolverMode.DIRECT))
    assert computed == pytest.approx(closed_form, rel=1e-12)

    def ratio(v):
        return (d @ M @ v) / math.sqrt(v @ A @ v)

    samples = rng.standard_normal((10000, 10))
    ratios = np.array([ratio(v) for v in samples])
    assert ratios.max() <= closed_form * (1.0 + 1e-12)

    # hill climb from the best sample
    v = samples[np.argmax(ratios)]
    best, step, failures = ratio(v), 0.5 * np.linalg.norm(v), 0
    for _ in range(5000):
        candidate = v + step * rng.standard_normal(10)
        value = ratio(candidate)
        if value > best:
            v, best = candidate, value
        else:
            failures += 1
            if failures % 50 == 0:
                step *= 0.7
    assert best >= 0.999 * closed_form
    assert best <= closed_form * (1.0 + 1e-12)


def test_dual_norm_needs_nonsingular_stiffness(hierarchy):
    operators = assemble_operators(hierarchy.levels[1], ProblemSpec(kappa=0.0))
    with pytest.raises(SingularMatrix):
        discrete_norm(np.ones(operators.n_dofs), NormKind.DUAL_AH, operators)


def test_norm_ordering_on_a_mesh(hierarchy, rng):
    operators = assemble_operators(hierarchy.levels[1], ProblemSpec(kappa=1.0))
    M, A = operators.M.toarray(), operators.A.toarray()
    constant = math.sqrt(scipy.linalg.eigh(M, A, eigvals_only=True).max())
    handle = SolverHandle(SolverMode.DIRECT)
    for _ in range(20):
        v = rng.standard_normal(operators.n_dofs)
        dual = discrete_norm(v, NormKind.DUAL_AH, operators, handle)
        mass = discrete_norm(v, NormKind.MH, operators)
        energy = discrete_norm(v, NormKind.AH, operators)
        assert dual <= constant * mass * (1.0 + 1e-10)
        assert mass <= constant * energy * (1.0 + 1e-10)


def test_split_norms_are_consistent_with_mass(hierarchy, rng):
    operators = assemble_operators(hierarchy.levels[2], ProblemSpec(mu=2.0, kappa=1.0))
    e = rng.standard_normal(operators.n_dofs)
    report = split_norms(e, operators, level=2, t=0.5)
    assert report.combined_l2 == pytest.approx(math.sqrt(e @ (operators.M @ e)), rel=1e-13)
    assert report.err_h1_bulk >= report.err_l2_bulk
    assert report.err_h1_surf >= report.err_l2_surf
    assert report.level == 2


def test_exact_interpolant_has_zero_nodal_error(hierarchy):
    mesh = hierarchy.levels[2]
    operators = assemble_operators(mesh, ProblemSpec())
    exact = _smooth_exact()
    u_h = interpolate(mesh, lambda x: exact.u(x, 0.0), operators.dofmap)
    report = error_vs_exact(mesh, operators, u_h, exact, 0.0)
    assert report.combined_l2 == 0.0


def test_zero_exact_solution_gives_norms_of_the_discrete_solution(hierarchy, circle, rng):
    mesh = hierarchy.levels[2]
    operators = assemble_operators(mesh, ProblemSpec())
    zero = ExactSolution(u=lambda x, t: np.zeros(len(x)))
    u_h = rng.standard_normal(operators.n_dofs)
    nodal = error_vs_exact(mesh, operators, u_h, zero, 0.0)
    assert nodal.combined_l2 == pytest.approx(math.sqrt(u_h @ (operators.M @ u_h)), rel=1e-13)
    lifted = error_vs_exact(mesh, operators, u_h, zero, 0.0, metric=ErrorMetric.LIFTED_QUADRATURE,
                            curve=polygonal_boundary())
    assert lifted.combined_l2 == pytest.approx(nodal.combined_l2, rel=1e-12)


def test_lifted_quadrature_measures_the_disc(hierarchy, circle):
    quadrature = LiftedQuadrature(hierarchy.levels[3], circle)
    assert quadrature.weights.sum() == pytest.approx(np.pi, abs=5e-3)
    assert quadrature.edge_weights.sum() == pytest.approx(2.0 * np.pi, abs=1e-6)
    straight = LiftedQuadrature(hierarchy.levels[3], polygonal_boundary())
    assert straight.weights.sum() == pytest.approx(polygon_area(hierarchy.levels[3]), rel=1e-13)


def test_lifted_metric_differs_from_nodal_by_interpolation_error(hierarchy, circle):
    exact = _smooth_exact()
    errors = []
    for level in (2, 3):
        mesh = hierarchy.levels[level]
        operators = assemble_operators(mesh, ProblemSpec())
        u_h = interpolate(mesh, lambda x: exact.u(x, 0.0), operators.dofmap)
        lifted = error_vs_exact(mesh, operators, u_h, exact, 0.0, metric=ErrorMetric.LIFTED_QUADRATURE,
                                curve=circle, level=level)
        assert lifted.metric == ErrorMetric.LIFTED_QUADRATURE
        errors.append(lifted.err_l2_bulk)
    assert errors[0] / errors[1] >= 3.0


def test_lifted_metric_needs_a_curve(hierarchy):
    mesh = hierarchy.levels[1]
    operators = assemble_operators(mesh, ProblemSpec())
    with pytest.raises(InvalidArgument):
        error_vs_exact(mesh, operators, np.zeros(operators.n_dofs), _smooth_exact(), 0.0,
                       metric=ErrorMetric.LIFTED_QUADRATURE)


def test_acoustic_interpolant_has_zero_nodal_error(hierarchy):
    mesh = hierarchy.levels[2]
    operators = assemble_operators(mesh, acoustic_spec())
    exact = acoustic_exact()
    t = 0.1
    u_h = interpolate(mesh, lambda x: exact.u(x, t), operators.dofmap, lambda x: exact.delta(x, t))
    assert error_vs_exact(mesh, operators, u_h, exact, t).combined_l2 == 0.0


def test_reference_error_of_injected_solution(hierarchy, rng):
    coarse, fine = hierarchy.levels[1], hierarchy.levels[3]
    operators = assemble_operators(coarse, ProblemSpec())
    u = rng.standard_normal(coarse.n_vertices)
    reference = rng.standard_normal(fine.n_vertices)
    reference[hierarchy.injection(1, 3)] = u
    assert error_vs_reference(hierarchy, 1, 3, u, reference, operators).combined_l2 == 0.0

    shift = 0.25
    report = error_vs_reference(hierarchy, 1, 3, u, reference + shift, operators)
    assert report.err_l2_bulk == pytest.approx(shift * math.sqrt(polygon_area(coarse)), rel=1e-12)
    assert report.combined_l2 == pytest.approx(shift * math.sqrt(operators.M.sum()), rel=1e-12)


def test_acoustic_restriction_maps_boundary_unknowns(hierarchy):
    coarse, fine = hierarchy.levels[1], hierarchy.levels[2]
    bulk = lambda x: x[:, 0] + 2.0 * x[:, 1]  # noqa: E731
    surface = lambda x: x[:, 0] * x[:, 1]  # noqa: E731
    coarse_map = build_dofmap(coarse, ProblemVariant.ACOUSTIC)
    fine_values = interpolate(fine, bulk, build_dofmap(fine, ProblemVariant.ACOUSTIC), surface)
    restricted = restrict_to_coarse(hierarchy, 1, 2, fine_values, coarse_map)
    np.testing.assert_array_equal(restricted, interpolate(coarse, bulk, coarse_map, surface))


def test_reference_must_be_finer(hierarchy):
    operators = assemble_operators(hierarchy.levels[2], ProblemSpec())
    u = np.zeros(operators.n_dofs)
    with pytest.raises(HierarchyMismatch):
        error_vs_reference(hierarchy, 2, 2, u, u, operators)
    with pytest.raises(HierarchyMismatch):
        error_vs_reference(hierarchy, 2, 3, u, u, operators)


def test_ritz_map_reproduces_linear_functions(hierarchy):
    mesh = hierarchy.levels[2]
    spec = ProblemSpec(beta=1.0, kappa=1.0)
    linear = ExactSolution(
        u=lambda x, t: 1.0 + 2.0 * x[:, 0] - 3.0 * x[:, 1],
        grad_u=lambda x, t: np.tile([2.0, -3.0], (len(x), 1)),
    )
    projected = ritz_project(mesh, polygonal_boundary(), spec, linear)
    np.testing.assert_allclose(projected, linear.u(mesh.vertices, 0.0), atol=1e-10)

    constant = ExactSolution(u=lambda x, t: np.full(len(x), 0.75), grad_u=lambda x, t: np.zeros_like(x))
    np.testing.assert_allclose(ritz_project(mesh, polygonal_boundary(), spec, constant), 0.75, atol=1e-10)


def test_ritz_map_requirements(hierarchy, circle):
    mesh = hierarchy.levels[1]
    with pytest.raises(MissingGradient):
        ritz_project(mesh, circle, ProblemSpec(kappa=1.0), ExactSolution(u=lambda x, t: np.zeros(len(x))))
    with pytest.raises(SingularMatrix):
        ritz_project(mesh, circle, ProblemSpec(kappa=0.0), _smooth_exact())


def test_ritz_map_converges_at_second_order(hierarchy, circle):
    spec = ProblemSpec(beta=1.0, kappa=1.0)
    exact = ExactSolution(
        u=lambda x, t: x[:, 0] ** 2 + x[:, 1],
        grad_u=lambda x, t: np.column_stack((2.0 * x[:, 0], np.ones(len(x)))),
    )
    errors, widths = [], []
    for level in (2, 3, 4):
        mesh = hierarchy.levels[level]
        quadrature = LiftedQuadrature(mesh, circle)
        operators = assemble_operators(mesh, spec)
        projected = ritz_project(mesh, circle, spec, exact, quadrature=quadrature)
        report = error_vs_exact(mesh, operators, projected, exact, 0.0, metric=ErrorMetric.LIFTED_QUADRATURE,
                                curve=circle, quadrature=quadrature)
        errors.append(report.combined_l2)
        widths.append(mesh.h)
    rates = eoc(errors, widths)
    assert all(1.8 <= rate <= 2.2 for rate in rates)


def test_eoc_examples():
    assert eoc([1e-2, 2.5e-3], [0.2, 0.1]) == [pytest.approx(2.0)]
    assert eoc([1.0, 2.0 ** -1.5], [1.0, 0.5]) == [pytest.approx(1.5)]
    assert eoc([4.0, 1.0], [2.0, 1.0])[0] == pytest.approx(eoc([0.4, 0.1], [2.0, 1.0])[0], rel=1e-14)


def test_eoc_recovers_noisy_rates(rng):
    hs = 0.5 ** np.arange(1, 6)
    errors = 3.0 * hs ** 2 * (1.0 + 0.01 * rng.uniform(-1.0, 1.0, len(hs)))
    assert all(abs(rate - 2.0) <= 0.1 for rate in eoc(errors, hs))


def test_eoc_rejects_bad_input():
    with pytest.raises(NonPositiveError):
        eoc([1e-2, 0.0], [0.2, 0.1])
    with pytest.raises(InvalidArgument):
        eoc([1e-2], [0.2])
    with pytest.raises(InvalidArgument):
        eoc([1e-2, 1e-3], [0.1, 0.2])
