import numpy as np
import pytest

from adrtour.leg import InfeasibleLeg, LegParameters
from adrtour.mission import (COAST, ENCOUNTER, IMPULSE, MissionPlan, evaluate_mission,
                             export_radius_time_trace, read_trace, write_trace)
from adrtour.orbital import Body

BODIES = (Body(0, 7000.0, 0.0), Body(1, 7300.0, 1.0), Body(2, 7150.0, 4.0))
LEGS = (LegParameters(7100.0, 1.2, 0.4, 7250.0, 0.8, 0.45),
        LegParameters(7250.0, 2.0, 0.5, 7180.0, 1.5, 0.5))
EPOCHS = (40000.0, 90000.0)


@pytest.fixture(scope="module")
def evaluation():
    return evaluate_mission(MissionPlan(BODIES, (1, 2), EPOCHS, LEGS, horizon=90000.0))


def test_plan_validation():
    with pytest.raises(ValueError):
        MissionPlan(BODIES, (1,), EPOCHS, LEGS)
    with pytest.raises(ValueError):
        MissionPlan(BODIES, (1, 1), EPOCHS, LEGS)
    with pytest.raises(ValueError):
        MissionPlan(BODIES, (1, 3), EPOCHS, LEGS)
    with pytest.raises(ValueError):
        MissionPlan(BODIES, (1, 2), (90000.0, 40000.0), LEGS)
    with pytest.raises(ValueError):
        MissionPlan(BODIES, (1, 2), EPOCHS, LEGS, horizon=80000.0)
    assert MissionPlan(BODIES, (2, 1), EPOCHS, LEGS).ids == [2, 1]


def test_total_is_sum_of_breakdown(evaluation):
    assert evaluation.breakdown.shape == (2, 3)
    assert evaluation.dv_total == sum(float(x) for row in evaluation.breakdown for x in row)
    assert evaluation.trajectory.dv_total == pytest.approx(evaluation.dv_total, rel=1e-12)
    assert len(evaluation.trajectory.arcs) == 6
    assert len(evaluation.trajectory.impulses) == 8


def test_residuals_are_tiny(evaluation):
    dr, dv = evaluation.trajectory.residuals()
    assert dr < 1e-6 and dv < 1e-9


def test_infeasible_leg_is_indexed():
    bad = (LEGS[0], LegParameters(7250.0, 30.0, 0.9, 7180.0, 30.0, 0.9))
    with pytest.raises(InfeasibleLeg) as err:
        evaluate_mission(MissionPlan(BODIES, (1, 2), EPOCHS, bad))
    assert err.value.leg == 1


def test_trace_shape_and_flags(evaluation):
    tr = export_radius_time_trace(evaluation.trajectory, points_per_arc=20)
    assert tr.shape == (6 * 19 + 1, 3)
    assert np.all(np.diff(tr[:, 0]) > 0)
    assert tr[0, 0] == 0.0 and tr[0, 2] == IMPULSE
    assert tr[-1, 0] == EPOCHS[-1] and tr[-1, 2] == ENCOUNTER
    flags = tr[:, 2]
    assert set(np.unique(flags)) == {COAST, IMPULSE, ENCOUNTER}
    # the intermediate encounter is flagged exactly once, at its epoch
    assert tr[flags == ENCOUNTER, 0].tolist() == [EPOCHS[0], EPOCHS[1]]
    # encounter radii are the targets' circular radii
    assert tr[flags == ENCOUNTER, 1] == pytest.approx([7300.0, 7150.0], abs=1e-6)
    with pytest.raises(ValueError):
        export_radius_time_trace(evaluation.trajectory, points_per_arc=1)


def test_trace_file_round_trip(evaluation, tmp_path):
    tr = export_radius_time_trace(evaluation.trajectory, points_per_arc=5)
    path = tmp_path / "trace.csv"
    write_trace(path, tr)
    assert path.read_text().splitlines()[0] == "t_seconds,r_km,event_flag"
    assert np.array_equal(read_trace(path), tr)
