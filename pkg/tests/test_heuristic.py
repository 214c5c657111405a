import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adrtour.heuristic import (PENALTY, CacheMismatch, Kind, NoRoot, Variant, build_cost_matrix,
                               build_cost_tensor3, build_cost_tensor4, estimate_batch,
                               leg_cost_estimate, load_tensor, rendezvous_residual, save_tensor,
                               solve_waiting_radius, wait_time)
from adrtour.orbital import MU_EARTH, Body, hohmann
from adrtour.tour import TourProblem

from conftest import random_problem


@settings(max_examples=200, deadline=None)
@given(st.floats(6600, 9000), st.floats(6600, 9000), st.floats(0, 2 * math.pi),
       st.floats(0, 2 * math.pi))
def test_wait_time_reaches_hohmann_phase(r1, r2, th1, th2):
    if abs(r1 - r2) < 1.0:
        return
    tw = wait_time(th1, th2, r1, r2)
    w1, w2 = math.sqrt(MU_EARTH / r1**3), math.sqrt(MU_EARTH / r2**3)
    synodic = 2 * math.pi / abs(w1 - w2)
    assert 0 <= tw < synodic
    _, tof = hohmann(r1, r2)
    # after the wait, the target leads by pi - w2 * tof
    lead = (th2 + w2 * tw) - (th1 + w1 * tw)
    err = (lead - (math.pi - w2 * tof) + math.pi) % (2 * math.pi) - math.pi
    assert abs(err) < 1e-7


def test_wait_time_rejects_equal_radii():
    with pytest.raises(ValueError):
        wait_time(0.0, 1.0, 7000.0, 7000.0)


def test_hohmann_floor_grid():
    """Wherever coast + Hohmann fits in the window, the estimate is the Hohmann cost."""
    rng = np.random.default_rng(3)
    pairs = rng.uniform(6600, 9000, (50, 2))
    phases = np.linspace(0, 2 * np.pi, 50, endpoint=False)
    r1, ph = np.meshgrid(pairs[:, 0], phases, indexing="ij")
    r2 = np.broadcast_to(pairs[:, 1][:, None], r1.shape)
    tw = wait_time(0.0, ph, r1, r2)
    dv_h, tof = hohmann(r1, r2)
    # windows from barely enough to generous: all satisfy the availability condition
    slack = rng.uniform(0.0, 2e4, r1.shape)
    dv, kind, *_ = estimate_batch(r1, 0.0, r2, ph, tw + tof + slack)
    assert np.all(np.abs(dv - dv_h) <= 1e-12 * dv_h)
    assert np.all(np.isin(kind, [Kind.DIRECT_HOHMANN, Kind.WAIT_THEN_HOHMANN]))
    # windows that are too short cost at least the Hohmann transfer
    short, *_ = estimate_batch(r1, 0.0, r2, ph, 0.5 * (tw + tof))
    assert np.all(short >= dv_h * (1 - 1e-12))


@settings(max_examples=100, deadline=None)
@given(st.floats(6600, 9000), st.floats(6600, 9000), st.floats(0, 2 * math.pi),
       st.floats(0, 2 * math.pi), st.floats(2e4, 3e5))
def test_double_hohmann_closes_phase(r1, r2, th1, th2, t_max):
    dv, kind, tw, r3, k = estimate_batch(r1, th1, r2, th2, t_max)
    if int(kind) != Kind.DOUBLE_HOHMANN:
        return
    res = rendezvous_residual(r3, (th2 - th1) % (2 * math.pi), t_max, r1, r2, int(k))
    assert abs(math.remainder(float(res), 2 * math.pi)) < 1e-8
    # two Hohmann transfers through r3
    assert float(dv) == pytest.approx(hohmann(r1, r3)[0] + hohmann(r3, r2)[0], rel=1e-9)


def test_waiting_radius_rejects_bad_revolutions():
    with pytest.raises(ValueError):
        solve_waiting_radius(1.0, 1e5, 7000.0, 7200.0, 2)
    with pytest.raises(NoRoot):
        # a few seconds cannot fit two transfers
        solve_waiting_radius(1.0, 10.0, 7000.0, 7200.0, 0)


def test_scalar_and_batch_agree():
    dep, arr = Body(1, 7000.0, 0.2), Body(2, 7350.0, 2.9)
    for t_arr in (2e4, 6e4, 1.5e5):
        dv, sol = leg_cost_estimate(dep, arr, 1000.0, 1000.0 + t_arr)
        b, *_ = estimate_batch(dep.radius, dep.angle(1000.0), arr.radius, arr.angle(1000.0), t_arr)
        assert dv == float(b)
        assert sol.dv == dv
    with pytest.raises(ValueError):
        leg_cost_estimate(dep, arr, 10.0, 5.0)


def test_tensor_shapes_and_diagonal():
    prob = random_problem(4, 2, 1.0, seed=1)
    m2 = build_cost_matrix(prob)
    t3 = build_cost_tensor3(prob)
    t4 = build_cost_tensor4(prob)
    assert m2.values.shape == (5, 4)
    assert t3.values.shape == (5, 4, 4)
    assert t4.values.shape == (5, 4, 8, 6) and t4.M == 6
    for t in (m2, t3, t4):
        for j in range(4):
            assert np.all(t.values[j + 1, j] == PENALTY)
        assert not t.values.flags.writeable


def test_tensor_entries_match_scalar_estimate():
    prob = random_problem(3, 2, 1.0, seed=5)
    t4 = build_cost_tensor4(prob, M=3)
    dt = t4.dt_grid
    for dep, arr, h, m in [(0, 1, 0, 1), (2, 0, 3, 2), (3, 1, 5, 3)]:
        a, b = prob.bodies[dep], prob.bodies[arr + 1]
        ref, _ = leg_cost_estimate(a, b, h * dt, (h + m) * dt)
        assert t4.values[dep, arr, h, m - 1] == pytest.approx(ref, rel=1e-12)
    t3 = build_cost_tensor3(prob)
    ref, _ = leg_cost_estimate(prob.bodies[1], prob.bodies[3], t3.dt_grid, 2 * t3.dt_grid)
    assert t3.values[1, 2, 1] == pytest.approx(ref, rel=1e-12)


def test_cache_round_trip_and_mismatch(tmp_path):
    prob = random_problem(3, 2, 1.0, seed=2)
    t4 = build_cost_tensor4(prob)
    path = tmp_path / "t.npz"
    save_tensor(path, t4, prob)
    back = load_tensor(path, prob, Variant.TENSOR4D, t4.M)
    assert np.array_equal(back.values, t4.values) and back.M == t4.M
    with pytest.raises(CacheMismatch):
        load_tensor(path, TourProblem(prob.bodies, prob.horizon * 2, 2))
    with pytest.raises(CacheMismatch):
        load_tensor(path, TourProblem(prob.bodies[:-1], prob.horizon, 2))
    with pytest.raises(CacheMismatch):
        load_tensor(path, prob, Variant.TENSOR3D)
    with pytest.raises(CacheMismatch):
        load_tensor(path, prob, Variant.TENSOR4D, M=2)
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a cache")
    with pytest.raises(CacheMismatch):
        load_tensor(bad, prob)
