"""End-to-end runs: targets and configuration in, staged report out.

Stages run in a fixed order: cost tensor, simulated annealing restarts,
time-fixed refinement, time-free refinement. Every random stream is derived
from the single master seed, so a run replays exactly.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .de import DEConfig
from .heuristic import (CostTensor, Variant, build_cost_matrix, build_cost_tensor3,
                        build_cost_tensor4, default_duration_cap, load_tensor, problem_hash,
                        save_tensor)
from .inner import (InnerProblem, InnerResult, Mode, as_time_free, heuristic_epochs,
                    solve_time_fixed, solve_time_free)
from .leg import RADIUS_MARGIN, leg_bounds
from .mission import MissionPlan, evaluate_mission, export_radius_time_trace, write_trace
from .orbital import DAY, MU_EARTH, Body
from .tour import SAConfig, TourProblem, anneal, decode, time_discrete_legs

SCHEMA_VERSION = 1
TARGETS_HEADER = ("id", "radius_km", "theta0_deg")


class TargetsError(ValueError):
    """Malformed targets table."""


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class StageError(RuntimeError):
    """A pipeline stage failed; ``report`` holds the stages completed so far."""

    def __init__(self, stage: str, cause: Exception, report: "RunReport"):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.report = report


# ---------------------------------------------------------------------------
# targets


def bundled_targets_path() -> Path:
    return Path(str(resources.files("adrtour") / "data" / "targets.csv"))


def ingest_targets(path) -> list[Body]:
    """Read ``id,radius_km,theta0_deg`` rows after a header line.

    Body 0 must be the chaser. Ids must be unique; errors name the line.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as err:
        raise TargetsError(f"{path}: {err.strerror}") from err
    rows = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows:
        raise TargetsError(f"{path}: empty targets file")
    lineno, header = rows[0]
    if tuple(c.strip() for c in header.split(",")) != TARGETS_HEADER:
        raise TargetsError(f"{path}:{lineno}: expected header {','.join(TARGETS_HEADER)}")
    bodies, seen = [], set()
    for lineno, ln in rows[1:]:
        cols = [c.strip() for c in ln.split(",")]
        if len(cols) != 3:
            raise TargetsError(f"{path}:{lineno}: expected 3 columns, got {len(cols)}")
        try:
            bid, radius, theta = int(cols[0]), float(cols[1]), float(cols[2])
        except ValueError as err:
            raise TargetsError(f"{path}:{lineno}: {err}") from None
        if bid in seen:
            raise TargetsError(f"{path}:{lineno}: duplicate id {bid}")
        if not (radius > 0 and math.isfinite(theta)):
            raise TargetsError(f"{path}:{lineno}: invalid orbit ({radius}, {theta})")
        seen.add(bid)
        bodies.append(Body.from_degrees(bid, radius, theta))
    if not bodies:
        raise TargetsError(f"{path}: no target rows")
    if bodies[0].id != 0:
        raise TargetsError(f"{path}: the first row must be the chaser (id 0)")
    return bodies


def write_targets(path, bodies) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TARGETS_HEADER)
        for b in bodies:
            w.writerow([b.id, repr(b.radius), repr(math.degrees(b.theta0))])


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Every knob of a run. See the README for the file format."""

    targets: str = "bundled"
    n_targets: int = 10
    divisions: int = 1
    horizon_days: float = 4.7222
    duration_cap: int = 0  # 0: three grid units per division
    formulation: str = "auto"  # auto, time-free, time-uniform, time-discrete
    sa_restarts: int = 25
    sa_T0: float = 10.0
    sa_TF: float = 1e-6
    sa_alpha: float = 0.95
    sa_plateau: int = 0  # 0: one sweep of the permutation
    sa_max_iters: int = 0  # 0: run the full cooling schedule
    de_islands: int = 16
    de_pop_size: int = 0  # 0: max(30, 5 dim)
    de_fixed_evals: int = 50_000  # per leg
    de_free_evals: int = 200_000
    de_free_islands: int = 4
    de_migration_period: int = 50
    de_migrants: int = 2
    de_epidemic_threshold: float = 1e-3
    de_epidemic_spare: int = 3
    de_max_epidemics: int = 5
    de_epidemic_gap: int = 100
    epoch_grid: int = 64
    radius_margin: float = RADIUS_MARGIN
    seed: int = 1
    output_dir: str = "adrtour-out"
    workers: int = 1
    trace_points: int = 200
    tensor_cache: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n_targets < 1:
            raise ConfigError("n_targets must be at least 1")
        if self.divisions < 1:
            raise ConfigError("divisions must be at least 1")
        if self.sa_restarts < 1:
            raise ConfigError("sa_restarts must be at least 1")
        if not self.horizon_days > 0:
            raise ConfigError("horizon_days must be positive")
        if self.formulation not in ("auto", "time-free", "time-uniform", "time-discrete"):
            raise ConfigError(f"unknown formulation {self.formulation!r}")
        if self.formulation in ("time-free", "time-uniform") and self.divisions != 1:
            raise ConfigError(f"{self.formulation} needs divisions = 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.duration_cap < 0 or self.sa_plateau < 0 or self.sa_max_iters < 0:
            raise ConfigError("caps and counts must be nonnegative")
        if not 0 < self.sa_alpha < 1 or not self.sa_T0 > self.sa_TF > 0:
            raise ConfigError("need 0 < sa_alpha < 1 and sa_T0 > sa_TF > 0")

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            try:
                values[key] = {"int": _int, "float": float, "str": str}[kinds[key]](val)
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: bad value for {key}: {val!r}") from None
        try:
            return cls(**values)
        except ConfigError as err:
            raise ConfigError(f"{source}: {err}") from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as err:
            raise ConfigError(f"{path}: {err.strerror}") from err
        cfg = cls.from_text(text, str(path))
        # relative paths in a config file are relative to that file
        if cfg.targets != "bundled" and not Path(cfg.targets).is_absolute():
            cfg.targets = str(path.parent / cfg.targets)
        return cfg

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    # derived settings

    @property
    def horizon(self) -> float:
        return self.horizon_days * DAY

    @property
    def variant(self) -> Variant:
        form = self.formulation
        if form == "auto":
            form = "time-uniform" if self.divisions == 1 else "time-discrete"
        return {"time-free": Variant.MATRIX2D, "time-uniform": Variant.TENSOR3D,
                "time-discrete": Variant.TENSOR4D}[form]

    @property
    def cap(self) -> int:
        return self.duration_cap or default_duration_cap(self.divisions)

    def sa_config(self, seed: int) -> SAConfig:
        return SAConfig(T0=self.sa_T0, TF=self.sa_TF, alpha=self.sa_alpha,
                        plateau=self.sa_plateau or None, max_iters=self.sa_max_iters or None,
                        seed=seed)

    def de_config(self, seed: int, evals: int, islands: int) -> DEConfig:
        return DEConfig(n_islands=islands, pop_size=self.de_pop_size or None, max_evals=evals,
                        migration_period=self.de_migration_period, n_migrants=self.de_migrants,
                        epidemic_threshold=self.de_epidemic_threshold,
                        epidemic_spare=self.de_epidemic_spare,
                        max_epidemics=self.de_max_epidemics, epidemic_gap=self.de_epidemic_gap,
                        seed=seed, workers=self.workers)


def _int(text: str) -> int:
    return int(text.replace("_", ""))


def bundled_config_path(name: str) -> Path:
    """One of the reproduction configs shipped with the package (e.g. ``"10x3"``)."""
    path = Path(str(resources.files("adrtour") / "configs" / f"{name}.cfg"))
    if not path.exists():
        raise ConfigError(f"no bundled config named {name!r}")
    return path


# ---------------------------------------------------------------------------
# seeds and hashes


STAGES = ("tensor", "tour", "time_fixed", "time_free")


def stage_seeds(master: int) -> dict[str, int]:
    """Independent integer seeds for every stage, expanded from the master seed."""
    kids = np.random.SeedSequence(master).spawn(len(STAGES))
    return {name: int(k.generate_state(1)[0]) for name, k in zip(STAGES, kids)}


def chain_seeds(seed: int, n: int) -> list[int]:
    return [int(k.generate_state(1)[0]) for k in np.random.SeedSequence(seed).spawn(n)]


def digest(obj) -> str:
    if isinstance(obj, np.ndarray):
        payload = np.ascontiguousarray(obj).tobytes() + str(obj.shape).encode()
    else:
        payload = json.dumps(obj, sort_keys=True, default=float).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


# ---------------------------------------------------------------------------
# report


@dataclass
class StagePlan:
    ids: list[int]
    epochs_s: list[float]
    leg_dv: list[float]
    legs: list[list[float]] = field(default_factory=list)  # six parameters per leg

    @property
    def total(self) -> float:
        return float(math.fsum(self.leg_dv))


@dataclass
class RunReport:
    config: dict
    seeds: dict
    targets_hash: str
    costs: dict = field(default_factory=dict)  # stage -> total delta-v
    plans: dict = field(default_factory=dict)  # stage -> StagePlan
    input_hashes: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)
    sa: dict = field(default_factory=dict)  # chain costs, operator statistics, tour encoding
    traces: dict = field(default_factory=dict)  # stage -> (t, r, flag) array
    residuals: dict = field(default_factory=dict)
    error: str | None = None
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "traces"}
        out["plans"] = {k: asdict(p) | {"total": p.total} for k, p in self.plans.items()}
        return out

    def replay_view(self) -> dict:
        """The report without wall-clock timings, for bit-exact replay comparisons."""
        out = self.to_json()
        out.pop("wall_clock")
        return out


def emit_report(report: RunReport, out_dir, formats=("json", "csv", "trace")) -> list[Path]:
    """Write the structured report, per-stage leg tables and radius-time traces."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        path = out_dir / "report.json"
        path.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
        written.append(path)
    if "csv" in formats:
        for stage, plan in report.plans.items():
            path = out_dir / f"legs_{stage}.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["leg", "id", "t_day", "dv_kms"])
                for k, (i, t, dv) in enumerate(zip(plan.ids, plan.epochs_s, plan.leg_dv), 1):
                    w.writerow([k, i, f"{t / DAY:.6f}", repr(float(dv))])
                w.writerow(["total", "", "", repr(plan.total)])
            written.append(path)
    if "trace" in formats:
        for stage, trace in report.traces.items():
            path = out_dir / f"trace_{stage}.csv"
            write_trace(path, trace)
            written.append(path)
    return written


def read_leg_table(path) -> tuple[list[dict], float]:
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    total = float(rows[-1]["dv_kms"])
    return rows[:-1], total


# ---------------------------------------------------------------------------
# stages


def load_problem(config: RunConfig) -> TourProblem:
    path = bundled_targets_path() if config.targets == "bundled" else Path(config.targets)
    bodies = ingest_targets(path)
    if config.n_targets > len(bodies) - 1:
        raise ConfigError(f"n_targets={config.n_targets} but only {len(bodies) - 1} targets in {path}")
    # targets 1..N of the table
    return TourProblem(tuple(bodies[:config.n_targets + 1]), config.horizon, config.divisions,
                       MU_EARTH)


def build_tensor(problem: TourProblem, config: RunConfig) -> CostTensor:
    variant = config.variant
    cache = Path(config.tensor_cache) if config.tensor_cache else None
    if cache is not None and cache.exists():
        return load_tensor(cache, problem, variant, config.cap if variant is Variant.TENSOR4D else None)
    if variant is Variant.MATRIX2D:
        tensor = build_cost_matrix(problem)
    elif variant is Variant.TENSOR3D:
        tensor = build_cost_tensor3(problem)
    else:
        tensor = build_cost_tensor4(problem, config.cap)
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        save_tensor(cache, tensor, problem)
    return tensor


def _initial(variant: Variant, N: int, D: int, rng) -> np.ndarray:
    n = N * D if variant is Variant.TENSOR4D else N
    return rng.permutation(np.arange(1, n + 1))


def _chain(args):
    tensor, variant, N, D, sa_cfg = args
    rng = np.random.default_rng(sa_cfg.seed)
    x0 = _initial(variant, N, D, rng)
    res = anneal(tensor, x0, sa_cfg, rng)
    return res.best, res.best_cost, res.history.proposed, res.history.improved


def run_sa(problem: TourProblem, tensor: CostTensor, config: RunConfig, seed: int):
    """Best of ``sa_restarts`` independent chains; returns (best encoding, cost, stats)."""
    N, D = problem.n_targets, problem.divisions
    jobs = [(tensor, tensor.variant, N, D, config.sa_config(s))
            for s in chain_seeds(seed, config.sa_restarts)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_chain, jobs))
    else:
        results = [_chain(j) for j in jobs]
    costs = [float(r[1]) for r in results]
    best = int(np.argmin(costs))
    proposed = {m: sum(r[2][m] for r in results) for m in results[0][2]}
    improved = {m: sum(r[3][m] for r in results) for m in results[0][3]}
    freq = {m: (improved[m] / proposed[m] if proposed[m] else 0.0) for m in proposed}
    stats = {"chain_costs": costs, "best_chain": best, "operator_improvement": freq,
             "encoding": [int(v) for v in results[best][0]]}
    return results[best][0], costs[best], stats


@dataclass(frozen=True)
class Tour:
    """Decoded outer-level result handed to the inner level."""

    sequence: tuple[int, ...]  # indices into the problem bodies
    epochs: tuple[float, ...]  # seconds
    leg_dv: tuple[float, ...]  # heuristic estimate per leg

    def to_json(self, problem: TourProblem) -> dict:
        return {"schema_version": SCHEMA_VERSION, "targets_hash": problem_hash(problem),
                "horizon_s": problem.horizon, "ids": problem.body_ids(self.sequence),
                "epochs_s": list(self.epochs), "leg_dv": list(self.leg_dv)}

    @classmethod
    def from_json(cls, data: dict, problem: TourProblem) -> "Tour":
        if data.get("targets_hash") != problem_hash(problem):
            raise ConfigError("tour file was produced for a different target set")
        index = {b.id: k for k, b in enumerate(problem.bodies)}
        try:
            seq = tuple(index[i] for i in data["ids"])
        except KeyError as err:
            raise ConfigError(f"tour file names unknown target {err}") from None
        return cls(seq, tuple(map(float, data["epochs_s"])), tuple(map(float, data["leg_dv"])))


def decode_tour(encoding, tensor: CostTensor, problem: TourProblem) -> Tour:
    N, D, T_M = problem.n_targets, problem.divisions, problem.horizon
    enc = np.asarray(encoding)
    if tensor.variant is Variant.TENSOR4D:
        d = decode(enc, N, D, T_M)
        legs = time_discrete_legs(enc, tensor)
        return Tour(tuple(int(v) for v in d.sequence), tuple(map(float, d.epochs)),
                    tuple(map(float, legs)))
    epochs = np.arange(1, N + 1) * (T_M / N)
    prev = np.concatenate([[0], enc[:-1]])
    if tensor.variant is Variant.TENSOR3D:
        legs = tensor.values[prev, enc - 1, np.arange(N)]
    else:
        legs = tensor.values[prev, enc - 1]
    return Tour(tuple(int(v) for v in enc), tuple(map(float, epochs)), tuple(map(float, legs)))


def inner_epochs(tour: Tour, horizon: float) -> tuple[float, ...]:
    """Nominal epochs for the inner level: the last encounter moves to the horizon."""
    return tour.epochs[:-1] + (horizon,)


def _plan_record(problem, result: InnerResult) -> StagePlan:
    ids = problem.body_ids(result.problem.sequence)
    return StagePlan(ids, [float(t) for t in result.epochs], [float(v) for v in result.leg_dv],
                     [[float(v) for v in p.as_array()] for p in result.legs])


def _finish_stage(report, problem, stage, result: InnerResult, config: RunConfig):
    plan = MissionPlan(problem.bodies, result.problem.sequence, result.epochs, result.legs,
                       mu=problem.mu)
    ev = evaluate_mission(plan)
    report.plans[stage] = _plan_record(problem, result)
    report.costs[stage] = report.plans[stage].total
    dr, dv = ev.trajectory.residuals()
    report.residuals[stage] = {"position_km": dr, "velocity_kms": dv}
    report.traces[stage] = export_radius_time_trace(ev.trajectory, config.trace_points)


def run_refinement(problem: TourProblem, tour: Tour, config: RunConfig, seeds: dict,
                   report: RunReport) -> RunReport:
    """Time-fixed then time-free inner level on a decoded tour."""
    epochs = inner_epochs(tour, problem.horizon)
    box = leg_bounds([b.radius for b in problem.bodies], margin=config.radius_margin)
    tour_hash = digest({"sequence": list(tour.sequence), "epochs": list(epochs)})
    fixed_problem = InnerProblem(Mode.TIME_FIXED, problem.bodies, tour.sequence, epochs, box,
                                 problem.mu)
    with _stage(report, "time_fixed"):
        report.input_hashes["time_fixed"] = tour_hash
        cfg = config.de_config(seeds["time_fixed"], config.de_fixed_evals, config.de_islands)
        fixed = solve_time_fixed(fixed_problem, cfg)
        _finish_stage(report, problem, "time_fixed", fixed, config)
    with _stage(report, "time_free"):
        report.input_hashes["time_free"] = tour_hash
        free_problem = InnerProblem(Mode.TIME_FREE, problem.bodies, tour.sequence, epochs, box,
                                    problem.mu)
        seed_fixed, seed_free = chain_seeds(seeds["time_free"], 2)
        cands = [as_time_free(fixed)]
        t_h, _ = heuristic_epochs(free_problem, config.epoch_grid)
        if not np.allclose(t_h, fixed.epochs):
            cfg = config.de_config(seed_fixed, config.de_fixed_evals, config.de_islands)
            cands.append(as_time_free(solve_time_fixed(fixed_problem, cfg, epochs=t_h)))
        cfg = config.de_config(seed_free, config.de_free_evals, config.de_free_islands)
        free = solve_time_free(free_problem, cfg, seeds=cands)
        _finish_stage(report, problem, "time_free", free, config)
    return report


class _stage:
    """Times a stage and converts failures into :class:`StageError`."""

    def __init__(self, report: RunReport, name: str):
        self.report, self.name = report, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.report.wall_clock[self.name] = time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, StageError):
            self.report.error = f"{self.name}: {exc}"
            raise StageError(self.name, exc, self.report) from exc
        return False


def new_report(config: RunConfig, problem: TourProblem) -> RunReport:
    return RunReport(asdict(config), stage_seeds(config.seed), problem_hash(problem))


def run_outer(config: RunConfig, problem: TourProblem, report: RunReport) -> tuple[CostTensor, Tour]:
    seeds = report.seeds
    with _stage(report, "tensor"):
        report.input_hashes["tensor"] = digest({
            "targets": report.targets_hash, "N": problem.n_targets, "D": problem.divisions,
            "T_M": problem.horizon, "M": config.cap, "variant": config.variant.value})
        tensor = build_tensor(problem, config)
    with _stage(report, "tour"):
        report.input_hashes["tour"] = digest(tensor.values)
        enc, cost, stats = run_sa(problem, tensor, config, seeds["tour"])
        tour = decode_tour(enc, tensor, problem)
        report.sa = stats
        report.plans["sa"] = StagePlan(problem.body_ids(tour.sequence), list(tour.epochs),
                                       list(tour.leg_dv))
        report.costs["sa"] = report.plans["sa"].total
    return tensor, tour


def run_pipeline(config: RunConfig) -> RunReport:
    """Tensor, annealing restarts, then both refinement modes on the winning tour."""
    problem = load_problem(config)
    report = new_report(config, problem)
    _, tour = run_outer(config, problem, report)
    run_refinement(problem, tour, config, report.seeds, report)
    return report
