import json

import numpy as np
import pytest

from adrtour.heuristic import CacheMismatch, Variant
from adrtour.pipeline import (ConfigError, RunConfig, StageError, TargetsError, Tour,
                              build_tensor, bundled_config_path, chain_seeds, decode_tour,
                              emit_report, ingest_targets, inner_epochs, load_problem, new_report,
                              read_leg_table, run_outer, run_pipeline, stage_seeds, write_targets)
from adrtour.mission import read_trace

TINY = dict(n_targets=3, horizon_days=1.5, sa_restarts=2, sa_plateau=20, de_islands=2,
            de_free_islands=2, de_fixed_evals=1500, de_free_evals=3000, trace_points=8)


@pytest.fixture(scope="module")
def tiny_report():
    return run_pipeline(RunConfig(**TINY))


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


# targets ------------------------------------------------------------------

def test_bundled_targets(bodies):
    assert bodies[0].id == 0 and bodies[0].radius == 7000.0 and bodies[0].theta0 == 0.0
    assert len(bodies) >= 21
    assert len({b.id for b in bodies}) == len(bodies)


def test_targets_round_trip(tmp_path, bodies):
    p = tmp_path / "t.csv"
    write_targets(p, bodies)
    back = ingest_targets(p)
    assert [(b.id, b.radius) for b in back] == [(b.id, b.radius) for b in bodies]
    assert np.allclose([b.theta0 for b in back], [b.theta0 for b in bodies], atol=1e-15)


@pytest.mark.parametrize("text, where", [
    ("", "empty"),
    ("id,radius,theta\n0,7000,0\n", ":1:"),
    ("id,radius_km,theta0_deg\n0,7000,0\n1,7100\n", ":3:"),
    ("id,radius_km,theta0_deg\n0,7000,0\n1,abc,3\n", ":3:"),
    ("id,radius_km,theta0_deg\n0,7000,0\n# note\n1,7100,3\n1,7200,4\n", ":5: duplicate"),
    ("id,radius_km,theta0_deg\n0,7000,0\n1,-5,3\n", ":3: invalid"),
    ("id,radius_km,theta0_deg\n1,7100,3\n", "chaser"),
    ("id,radius_km,theta0_deg\n", "no target"),
])
def test_targets_errors_name_the_line(tmp_path, text, where):
    with pytest.raises(TargetsError, match=where):
        ingest_targets(write(tmp_path, "t.csv", text))


def test_missing_targets_file(tmp_path):
    with pytest.raises(TargetsError):
        ingest_targets(tmp_path / "nope.csv")


# configuration ------------------------------------------------------------

def test_config_parse_and_round_trip():
    cfg = RunConfig.from_text("# comment\nn_targets = 5\nde_fixed_evals = 10_000  # per leg\n"
                              "horizon_days=2.5\nformulation = time-free\n")
    assert cfg.n_targets == 5 and cfg.de_fixed_evals == 10_000 and cfg.horizon_days == 2.5
    assert cfg.variant is Variant.MATRIX2D
    assert RunConfig.from_text(cfg.to_text()) == cfg


@pytest.mark.parametrize("text, match", [
    ("n_target = 5\n", ":1: unknown key"),
    ("seed = 1\nseed = 2\n", ":2: duplicate key"),
    ("\nn_targets = five\n", ":2: bad value"),
    ("n_targets\n", ":1: expected"),
    ("divisions = 0\n", "divisions"),
    ("formulation = time-free\ndivisions = 2\n", "divisions = 1"),
    ("formulation = magic\n", "unknown formulation"),
    ("sa_alpha = 1.5\n", "sa_alpha"),
    ("workers = 0\n", "workers"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_text(text)


def test_config_file_paths(tmp_path):
    p = write(tmp_path, "a.cfg", "targets = mine.csv\n")
    assert RunConfig.load(p).targets == str(tmp_path / "mine.csv")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.cfg")
    with pytest.raises(ConfigError):
        bundled_config_path("99x9")


def test_bundled_configs_parse():
    for name in ("10x1", "10x2", "10x3", "20x1", "20x2", "20x3"):
        cfg = RunConfig.load(bundled_config_path(name))
        N, D = map(int, name.split("x"))
        assert (cfg.n_targets, cfg.divisions) == (N, D)
        assert cfg.variant is (Variant.TENSOR3D if D == 1 else Variant.TENSOR4D)
        assert cfg.cap == 3 * D


def test_derived_settings():
    cfg = RunConfig(divisions=2, workers=3)
    assert cfg.cap == 6
    assert cfg.de_config(5, 1000, 4).workers == 3
    assert cfg.sa_config(1).plateau is None


def test_n_targets_beyond_table():
    with pytest.raises(ConfigError):
        load_problem(RunConfig(n_targets=500))


# seeds --------------------------------------------------------------------

def test_seeds_are_stable_and_distinct():
    a, b = stage_seeds(1), stage_seeds(1)
    assert a == b and len(set(a.values())) == 4
    assert stage_seeds(2) != a
    assert chain_seeds(7, 5) == chain_seeds(7, 5)
    assert chain_seeds(7, 5)[:3] == chain_seeds(7, 3)


# stages -------------------------------------------------------------------

def test_tensor_cache_reuse_and_mismatch(tmp_path):
    cache = tmp_path / "c.npz"
    cfg = RunConfig(n_targets=3, divisions=2, horizon_days=1.0, tensor_cache=str(cache))
    prob = load_problem(cfg)
    t1 = build_tensor(prob, cfg)
    assert cache.exists()
    t2 = build_tensor(prob, cfg)
    assert np.array_equal(t1.values, t2.values)
    other = RunConfig(n_targets=3, divisions=2, horizon_days=2.0, tensor_cache=str(cache))
    with pytest.raises(CacheMismatch):
        build_tensor(load_problem(other), other)


def test_decode_tour_variants():
    for form, D in (("time-free", 1), ("time-uniform", 1), ("time-discrete", 2)):
        cfg = RunConfig(n_targets=3, divisions=D, horizon_days=1.0, formulation=form)
        prob = load_problem(cfg)
        tensor = build_tensor(prob, cfg)
        enc = np.arange(1, 3 * D + 1)
        tour = decode_tour(enc, tensor, prob)
        assert sorted(tour.sequence) == [1, 2, 3]
        assert len(tour.epochs) == 3 and tour.epochs[-1] <= prob.horizon + 1e-9
        assert np.all(np.array(tour.leg_dv) >= 0)
        assert inner_epochs(tour, prob.horizon)[-1] == prob.horizon


def test_tour_json_round_trip_and_hash():
    cfg = RunConfig(n_targets=3, horizon_days=1.0)
    prob = load_problem(cfg)
    tour = Tour((2, 3, 1), (1.0, 2.0, 3.0), (0.1, 0.2, 0.3))
    data = json.loads(json.dumps(tour.to_json(prob)))
    assert Tour.from_json(data, prob) == tour
    other = load_problem(RunConfig(n_targets=4, horizon_days=1.0))
    with pytest.raises(ConfigError):
        Tour.from_json(data, other)


def test_pipeline_costs_are_ordered(tiny_report):
    c = tiny_report.costs
    assert set(c) == {"sa", "time_fixed", "time_free"}
    assert c["time_free"] <= c["time_fixed"] + 1e-12
    assert set(tiny_report.wall_clock) == {"tensor", "tour", "time_fixed", "time_free"}
    for stage in ("time_fixed", "time_free"):
        res = tiny_report.residuals[stage]
        assert res["position_km"] < 1e-6 and res["velocity_kms"] < 1e-9
        plan = tiny_report.plans[stage]
        assert plan.epochs_s[-1] == pytest.approx(1.5 * 86400.0)
        assert len(plan.legs) == 3 and all(len(p) == 6 for p in plan.legs)
    assert len(tiny_report.sa["chain_costs"]) == 2
    assert tiny_report.sa["chain_costs"][tiny_report.sa["best_chain"]] == pytest.approx(c["sa"])


def test_replay_is_bit_exact(tiny_report):
    again = run_pipeline(RunConfig(**TINY))
    assert json.dumps(again.replay_view(), sort_keys=True) == \
        json.dumps(tiny_report.replay_view(), sort_keys=True)
    for stage, trace in tiny_report.traces.items():
        assert np.array_equal(trace, again.traces[stage])


def test_emit_report(tmp_path, tiny_report):
    paths = emit_report(tiny_report, tmp_path)
    names = {p.name for p in paths}
    assert {"report.json", "legs_sa.csv", "legs_time_fixed.csv", "legs_time_free.csv",
            "trace_time_fixed.csv", "trace_time_free.csv"} <= names
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["schema_version"] == 1 and "traces" not in data
    assert data["plans"]["time_free"]["total"] == tiny_report.costs["time_free"]
    rows, total = read_leg_table(tmp_path / "legs_time_free.csv")
    assert len(rows) == 3
    assert total == tiny_report.costs["time_free"]
    assert [int(r["id"]) for r in rows] == tiny_report.plans["time_free"].ids
    trace = read_trace(tmp_path / "trace_time_free.csv")
    assert np.all(np.diff(trace[:, 0]) > 0)


def test_stage_failure_keeps_partial_report(monkeypatch):
    import adrtour.pipeline as pl

    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(pl, "solve_time_free", boom)
    with pytest.raises(StageError) as err:
        run_pipeline(RunConfig(**TINY))
    rep = err.value.report
    assert err.value.stage == "time_free"
    assert "time_fixed" in rep.costs and "time_free" not in rep.costs
    assert "solver exploded" in rep.error


def test_outer_only(tmp_path):
    cfg = RunConfig(**TINY)
    prob = load_problem(cfg)
    rep = new_report(cfg, prob)
    tensor, tour = run_outer(cfg, prob, rep)
    assert tensor.variant is Variant.TENSOR3D
    assert rep.costs["sa"] == pytest.approx(sum(tour.leg_dv))
