import math
import textwrap

import numpy as np
import pandas as pd
import pytest

import run_study
from assembly import ProblemSpec
from config import create_env_file, load_environment, load_study_config, parse_level_range, solver_mode
from errors import ConfigError, SingularMatrix, UnknownScenario
from geometry import unit_circle
from mesh import build_hierarchy, read_mesh
from models import (
    ComparisonMode, ConvergenceTable, ErrorMetric, ErrorReport, RunRecord, SolverMode, SolverSettings, StudyConfig,
    StudyKind,
)
from reporting import CSV_COLUMNS, emit_outputs, load_table, table_to_frame, write_csv
from scenarios import Scenario, list_scenarios, scenario
from study_workflow import (
    ConvergenceStudy, execute_step, pairwise_eoc, run_spatial_study, run_temporal_study, solve_scenario,
)

SHORT_RUN = {"T": 0.25, "tau0": 0.0625, "reference_gap": 1, "record_wall_time": False}


def _zero_scenario():
    return Scenario(
        name="zero", description="vanishing initial data", spec=ProblemSpec(),
        curve=unit_circle(), T=0.25, tau0=0.0625,
    )


def _synthetic_table(**report):
    rows = []
    for level, h in enumerate((0.5, 0.25, 0.125)):
        scale = 4.0 ** -level
        rows.append(RunRecord(
            scenario="pure", level=level + 2, h=h, tau=h / 8.0, n_dofs=19 * 4 ** level,
            errors=ErrorReport(err_l2_bulk=1e-2 * scale, err_l2_surf=3e-3 * scale,
                               err_h1_bulk=0.1 * 2.0 ** -level, err_h1_surf=None, **report),
            energy_drift=1e-14 * level,
        ))
    return ConvergenceTable(kind=StudyKind.SPATIAL, scenario="pure", rows=rows, eoc=[2.0, 2.0])


def _write_ini(path, body):
    path.write_text(textwrap.dedent(body))
    return path


# scenarios

def test_scenario_catalog():
    assert list_scenarios() == ["acoustic", "adv-bulk", "adv-surface", "pure", "sdamp", "sdamp-matched"]
    x = np.array([[0.3, -0.2], [1.0, 0.0]])
    np.testing.assert_array_equal(scenario("adv-bulk").spec.v_omega(x), [[2.0, 0.0], [2.0, 0.0]])
    damping = scenario("sdamp").spec
    assert (damping.d_omega, damping.d_gamma, damping.beta) == (0.1, 0.2, 1.0)
    assert scenario("sdamp-matched").spec.beta == 2.0
    assert scenario("pure").tau0 == 2.0 ** -5


def test_acoustic_scenario_exact_solution():
    case = scenario("acoustic")
    assert case.comparison == ComparisonMode.EXACT
    assert case.T == 0.2
    x = np.array([[1.0, 0.0], [0.0, 0.5]])
    np.testing.assert_allclose(case.exact.u(x, 0.25), [1.0, 0.5 ** 1.2], rtol=1e-14)


def test_unknown_scenario():
    with pytest.raises(UnknownScenario):
        scenario("nope")


def test_scenario_mesh_seeds():
    for name in ("pure", "adv-bulk", "adv-surface", "sdamp", "sdamp-matched"):
        assert scenario(name).seed == 12
    assert scenario("acoustic").seed == 6
    assert ConvergenceStudy(StudyConfig(scenario="pure")).seed == 12
    assert ConvergenceStudy(StudyConfig(scenario="pure", seed=6)).seed == 6


# workflow

def test_execute_step_captures_failures():
    result = execute_step("boom", lambda: 1 / 0)
    assert not result.success
    assert isinstance(result.exception, ZeroDivisionError)
    assert result.error_message == "division by zero"
    assert execute_step("ok", lambda x: x + 1, 1).output == 2


def test_pairwise_eoc_marks_vanishing_errors():
    rates = pairwise_eoc([1e-2, 0.0, 1e-4], [0.4, 0.2, 0.1])
    assert all(math.isnan(rate) for rate in rates)
    assert pairwise_eoc([4.0, 1.0], [2.0, 1.0]) == [pytest.approx(2.0)]


def test_zero_data_gives_zero_errors_and_undefined_rates():
    config = StudyConfig(scenario="zero", levels=(1, 2), **SHORT_RUN)
    table = run_spatial_study(config, case=_zero_scenario())
    assert [row.errors.combined_l2 for row in table.rows] == [0.0, 0.0]
    assert len(table.eoc) == 1 and math.isnan(table.eoc[0])


def test_spatial_study_table():
    config = StudyConfig(scenario="pure", levels=(1, 2), **SHORT_RUN)
    table = run_spatial_study(config)
    hierarchy = build_hierarchy(scenario("pure").seed, 2)
    assert table.kind == StudyKind.SPATIAL
    assert [row.level for row in table.rows] == [1, 2]
    first, second = table.rows
    assert first.n_dofs == hierarchy.levels[1].n_vertices
    assert first.h == hierarchy.levels[1].h
    assert (first.tau, second.tau) == (0.0625, 0.03125)
    assert all(row.errors.combined_l2 > 0.0 for row in table.rows)
    assert all(row.wall_seconds == 0.0 for row in table.rows)
    assert len(table.eoc) == 1


def test_spatial_study_is_deterministic(tmp_path):
    config = StudyConfig(scenario="sdamp", levels=(1, 2), **SHORT_RUN)
    write_csv(run_spatial_study(config), tmp_path / "first.csv")
    write_csv(run_spatial_study(config), tmp_path / "second.csv")
    assert (tmp_path / "first.csv").read_bytes() == (tmp_path / "second.csv").read_bytes()


def test_parallel_levels_match_serial_run():
    serial = run_spatial_study(StudyConfig(scenario="adv-surface", levels=(1, 2), **SHORT_RUN))
    parallel = run_spatial_study(StudyConfig(scenario="adv-surface", levels=(1, 2), max_workers=2, **SHORT_RUN))
    for one, other in zip(serial.rows, parallel.rows):
        assert other.errors.err_l2_bulk == pytest.approx(one.errors.err_l2_bulk, rel=1e-10)
        assert other.errors.err_l2_surf == pytest.approx(one.errors.err_l2_surf, rel=1e-10)
    assert serial.eoc == pytest.approx(parallel.eoc, rel=1e-8)


def test_acoustic_exact_comparison_with_lifted_metric():
    config = StudyConfig(scenario="acoustic", levels=(1, 2), T=0.05, record_wall_time=False,
                         metric=ErrorMetric.LIFTED_QUADRATURE)
    table = run_spatial_study(config)
    assert [row.tau for row in table.rows] == [0.025, 0.0125]
    for row in table.rows:
        assert row.errors.metric == ErrorMetric.LIFTED_QUADRATURE
        assert row.errors.err_h1_bulk is not None and row.errors.err_h1_surf is not None
        assert 0.0 < row.errors.combined_l2 < 1.0


def test_exact_comparison_needs_an_exact_solution():
    with pytest.raises(ConfigError):
        ConvergenceStudy(StudyConfig(scenario="pure", comparison=ComparisonMode.EXACT))


def test_coefficient_overrides_are_checked():
    with pytest.raises(ConfigError):
        ConvergenceStudy(StudyConfig(scenario="pure", overrides={"gamma": 1.0}))
    study = ConvergenceStudy(StudyConfig(scenario="pure", overrides={"kappa": 0.5}))
    assert study.case.spec.kappa == 0.5


def test_temporal_study_table():
    config = StudyConfig(scenario="pure", level=1, halvings=2, **SHORT_RUN)
    table = run_temporal_study(config)
    assert table.kind == StudyKind.TEMPORAL
    assert [row.tau for row in table.rows] == [0.0625, 0.03125, 0.015625]
    assert len({row.h for row in table.rows}) == 1
    assert len(table.eoc) == 2


@pytest.mark.parametrize("taus", [[0.125, 0.125], [0.125, 0.25], [0.3, 0.15], [0.125]])
def test_temporal_study_rejects_bad_steps(taus):
    config = StudyConfig(scenario="pure", level=1, taus=taus, T=1.0)
    with pytest.raises(ConfigError):
        run_temporal_study(config)


def test_single_solve_with_energy_observer():
    config = StudyConfig(scenario="pure", level=1, T=0.125, tau0=0.0625, energy_observer=True,
                         record_wall_time=False)
    record, solution = solve_scenario(config)
    assert record.errors is None
    assert solution.trajectory.steps == 2
    assert record.energy_drift <= 1e-9


# rates on coarse levels

def test_smooth_data_spatial_rate():
    case = Scenario(
        name="smooth", description="quadratic initial displacement",
        spec=ProblemSpec(u0=lambda x: x[:, 0] * x[:, 1], u1=lambda x: np.zeros(len(x))),
        curve=unit_circle(), T=0.25, tau0=0.0625,
    )
    config = StudyConfig(scenario="smooth", levels=(1, 3), reference_gap=2, record_wall_time=False,
                         solver=SolverSettings(ordering="COLAMD"))
    table = run_spatial_study(config, case=case)
    assert 1.7 <= table.eoc[-1] <= 2.4


def test_midpoint_temporal_rate_on_a_coarse_mesh():
    config = StudyConfig(scenario="pure", level=1, T=0.25, tau0=2.0 ** -6, halvings=2, reference_gap=2,
                         record_wall_time=False)
    table = run_temporal_study(config)
    for rate in table.eoc:
        assert 1.8 <= rate <= 2.2


# reporting

def test_csv_round_trip(tmp_path):
    table = _synthetic_table()
    path = write_csv(table, tmp_path / "study.csv")
    header = path.read_text().splitlines()[0]
    assert header.split(",") == CSV_COLUMNS

    loaded = load_table(path)
    assert loaded.kind == StudyKind.SPATIAL
    pd.testing.assert_frame_equal(table_to_frame(loaded), table_to_frame(table))
    assert loaded.rows[0].errors.err_h1_surf is None
    write_csv(loaded, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_csv_round_trip_keeps_the_surface_weight(tmp_path):
    table = _synthetic_table(surface_weight=0.5, metric=ErrorMetric.LIFTED_QUADRATURE, t=0.2)
    loaded = load_table(write_csv(table, tmp_path / "study.csv"))
    for before, after in zip(table.rows, loaded.rows):
        assert after.errors.surface_weight == 0.5
        assert after.errors.metric == ErrorMetric.LIFTED_QUADRATURE
        assert after.errors.t == 0.2
        assert after.errors.combined_l2 == before.errors.combined_l2
    assert loaded.rows[0].errors.combined_l2 != math.hypot(1e-2, 3e-3)


def test_emit_outputs_writes_csv_and_svg(tmp_path):
    table = _synthetic_table()
    first = emit_outputs(table, tmp_path / "a", ["err_l2_bulk", "err_h1_bulk"])
    second = emit_outputs(table, tmp_path / "b", ["err_l2_bulk", "err_h1_bulk"])
    svg = first["svg"].read_text()
    for gid in ("norm-err_l2_bulk", "norm-err_h1_bulk", "slope-1", "slope-1.5", "slope-2"):
        assert f'id="{gid}"' in svg
    assert "norm-err_l2_surf" not in svg
    assert first["svg"].read_bytes() == second["svg"].read_bytes()
    assert len(first["csv"].read_text().splitlines()) == 4


def test_table_requires_decreasing_steps():
    rows = _synthetic_table().rows
    with pytest.raises(ValueError):
        ConvergenceTable(kind=StudyKind.SPATIAL, scenario="pure", rows=rows[::-1], eoc=[2.0, 2.0])
    with pytest.raises(ValueError):
        ConvergenceTable(kind=StudyKind.SPATIAL, scenario="pure", rows=rows, eoc=[2.0])


# configuration

def test_study_configuration_file(tmp_path):
    path = _write_ini(tmp_path / "study.ini", f"""
        [problem]
        scenario = pure
        kappa = 0.5

        [mesh]
        levels = 1..2

        [time]
        T = 0.25
        tau0 = 0.0625
        rk_stages = 2

        [study]
        norms = err_l2_bulk, err_h1_bulk
        reference_gap = 1
        record_wall_time = false

        [solver]
        mode = iterative
        tol = 1e-10

        [output]
        directory = {tmp_path / "out"}
    """)
    config = load_study_config(path)
    assert config.scenario == "pure"
    assert config.overrides == {"kappa": 0.5}
    assert config.levels == (1, 2)
    assert (config.T, config.tau0, config.rk_stages) == (0.25, 0.0625, 2)
    assert config.norms == ["err_l2_bulk", "err_h1_bulk"]
    assert config.reference_gap == 1 and config.record_wall_time is False
    assert config.solver.mode == SolverMode.ITERATIVE_GENERAL
    assert config.solver.tol == 1e-10
    assert config.output_dir == str(tmp_path / "out")


@pytest.mark.parametrize("body", [
    "[mesh]\nlevels = 1..2\n",
    "[problem]\nscenario = pure\n[mesh]\ndepth = 3\n",
    "[problem]\nscenario = pure\n[plot]\nformat = svg\n",
    "[problem]\nscenario = pure\nkappa = large\n",
    "[problem]\nscenario = pure\n[mesh]\nlevels = two\n",
])
def test_invalid_configuration_files(tmp_path, body):
    path = _write_ini(tmp_path / "bad.ini", body)
    with pytest.raises(ConfigError):
        load_study_config(path)


def test_missing_configuration_file(tmp_path):
    with pytest.raises(ConfigError):
        load_study_config(tmp_path / "missing.ini")


def test_level_ranges_and_solver_names():
    assert parse_level_range("2..5") == (2, 5)
    assert parse_level_range("3") == (3, 3)
    assert solver_mode("direct") == SolverMode.DIRECT
    assert solver_mode("iterative") == SolverMode.ITERATIVE_GENERAL
    assert solver_mode("iterative-spd") == SolverMode.ITERATIVE_SPD
    with pytest.raises(ConfigError):
        solver_mode("multigrid")


def test_environment_template(tmp_path):
    path = tmp_path / ".env"
    assert create_env_file(path)
    assert not create_env_file(path)
    assert "BSWAVE_SOLVER=direct" in path.read_text()
    assert set(load_environment()) == {"LOG_LEVEL", "BSWAVE_OUTPUT_DIR", "BSWAVE_SOLVER"}


# command line

def test_cli_mesh(tmp_path):
    path = tmp_path / "level2.mesh"
    assert run_study.main(["mesh", "--levels", "2", "--out", str(path)]) == run_study.EXIT_OK
    assert read_mesh(path).n_vertices == build_hierarchy(6, 2).levels[2].n_vertices


def test_cli_spatial_study(tmp_path):
    config = _write_ini(tmp_path / "study.ini", """
        [problem]
        scenario = pure

        [time]
        T = 0.25
        tau0 = 0.0625

        [study]
        reference_gap = 1
        record_wall_time = false
    """)
    out = tmp_path / "results"
    argv = ["--rk-stages", "2", "study-spatial", "--scenario", "pure", "--levels", "1..2",
            "--out", str(out), "--config", str(config)]
    assert run_study.main(argv) == run_study.EXIT_OK
    table = load_table(out / "study.csv")
    assert [row.level for row in table.rows] == [1, 2]
    assert (out / "study.svg").exists()


def test_cli_solve(tmp_path):
    out = tmp_path / "solve"
    config = _write_ini(tmp_path / "solve.ini", f"""
        [problem]
        scenario = pure

        [mesh]
        level = 1

        [time]
        T = 0.125
        tau0 = 0.0625

        [study]
        energy_observer = true

        [output]
        directory = {out}
    """)
    assert run_study.main(["solve", "--config", str(config)]) == run_study.EXIT_OK
    assert (out / "solve.csv").exists()
    assert (out / "energy.csv").read_text().startswith("step,t,energy")


def test_cli_configuration_errors(tmp_path):
    out = str(tmp_path / "results")
    assert run_study.main(["study-spatial", "--scenario", "nope", "--out", out]) == run_study.EXIT_CONFIG
    assert run_study.main(["study-spatial", "--scenario", "pure", "--levels", "3..1", "--out", out]) \
        == run_study.EXIT_CONFIG
    assert run_study.main(["solve", "--config", str(tmp_path / "missing.ini")]) == run_study.EXIT_CONFIG


def test_cli_numerical_failure(tmp_path, monkeypatch):
    def fail(config):
        raise SingularMatrix("stage matrix is singular")

    monkeypatch.setattr(run_study, "run_spatial_study", fail)
    argv = ["study-spatial", "--scenario", "pure", "--out", str(tmp_path)]
    assert run_study.main(argv) == run_study.EXIT_NUMERICAL
