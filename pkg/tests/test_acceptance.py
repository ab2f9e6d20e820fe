"""Full-size convergence studies on the unit disc; run with ``pytest -m acceptance``."""

import pytest

from models import SolverSettings, StudyConfig
from study_workflow import run_spatial_study, run_temporal_study

pytestmark = pytest.mark.acceptance


def _spatial(name, **values):
    config = StudyConfig(scenario=name, levels=(2, 5), record_wall_time=False,
                         solver=SolverSettings(ordering="COLAMD"), **values)
    return run_spatial_study(config)


@pytest.fixture(scope="module")
def pure_table():
    return _spatial("pure")


def test_pure_second_order_rate(pure_table):
    assert len(pure_table.eoc) == 3
    for rate in pure_table.eoc[-2:]:
        assert 1.8 <= rate <= 2.2


def test_bulk_advection_loses_half_an_order(pure_table):
    table = _spatial("adv-bulk")
    assert 1.3 <= table.eoc[-1] <= 1.8
    assert pure_table.eoc[-1] - table.eoc[-1] >= 0.2


def test_surface_advection_keeps_second_order():
    assert 1.8 <= _spatial("adv-surface").eoc[-1] <= 2.2


def test_strong_damping_rates():
    assert 1.7 <= _spatial("sdamp").eoc[-1] <= 2.2
    assert 1.8 <= _spatial("sdamp-matched").eoc[-1] <= 2.2


def test_acoustic_rate_against_exact_solution():
    table = _spatial("acoustic")
    assert 1.3 <= table.eoc[-1] <= 1.75


def test_implicit_midpoint_temporal_rate():
    config = StudyConfig(scenario="pure", level=3, halvings=4, rk_stages=1, record_wall_time=False)
    table = run_temporal_study(config)
    assert [row.tau for row in table.rows][0] == 2.0 ** -5
    for rate in table.eoc[:3]:
        assert 1.8 <= rate <= 2.2
