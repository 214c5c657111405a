"""Mission-level model: a complete plan, its trajectory and its cost."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .leg import Arc, Impulse, InfeasibleLeg, LegEvaluation, LegParameters, evaluate_leg
from .orbital import MU_EARTH, Body, circular_state, propagate_kepler

TRACE_POINTS = 200
COAST, IMPULSE, ENCOUNTER = 0, 1, 2


@dataclass(frozen=True)
class MissionPlan:
    """Visiting order, encounter epochs and the six parameters of every leg.

    ``bodies[0]`` is the chaser; ``sequence`` indexes ``bodies``. When
    ``horizon`` is given the last encounter must fall on it.
    """

    bodies: tuple[Body, ...]
    sequence: tuple[int, ...]
    epochs: tuple[float, ...]
    legs: tuple[LegParameters, ...]
    horizon: float | None = None
    mu: float = MU_EARTH

    def __post_init__(self):
        for name in ("bodies", "sequence", "epochs", "legs"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "sequence", tuple(int(k) for k in self.sequence))
        object.__setattr__(self, "epochs", tuple(float(t) for t in self.epochs))
        n = len(self.sequence)
        if n == 0 or len(self.epochs) != n or len(self.legs) != n:
            raise ValueError("sequence, epochs and legs must have the same nonzero length")
        if len(set(self.sequence)) != n or not all(0 < k < len(self.bodies) for k in self.sequence):
            raise ValueError("sequence must list distinct target indices")
        if np.any(np.diff((0.0,) + self.epochs) <= 0):
            raise ValueError("epochs must be strictly increasing and positive")
        if self.horizon is not None and not np.isclose(self.epochs[-1], self.horizon,
                                                       rtol=0, atol=1e-6):
            raise ValueError("the last encounter must fall on the horizon")

    @property
    def ids(self) -> list[int]:
        return [self.bodies[k].id for k in self.sequence]


@dataclass(frozen=True)
class Trajectory:
    arcs: tuple[Arc, ...]
    impulses: tuple[Impulse, ...]
    encounters: tuple[tuple[float, Body], ...]  # (epoch, body) rendezvous points
    mu: float = MU_EARTH

    @property
    def dv_total(self) -> float:
        return float(sum(i.magnitude for i in self.impulses))

    def residuals(self) -> tuple[float, float]:
        """Worst position and velocity mismatch at arc joints and encounters.

        Every arc is propagated from its own initial state; its end must meet
        the next arc's start (position) or, at an encounter, the target's
        circular state after the rendezvous impulse.
        """
        by_epoch = {round(i.epoch, 6): [] for i in self.impulses}
        for i in self.impulses:
            by_epoch[round(i.epoch, 6)].append(i)
        dr = dv = 0.0
        enc = {round(t, 6): b for t, b in self.encounters}
        for k, arc in enumerate(self.arcs):
            end = propagate_kepler(arc.state, arc.duration, self.mu)
            key = round(arc.t_end, 6)
            if key in enc:
                target = circular_state(enc[key], arc.t_end, self.mu)
                # the arrival impulse is the first one recorded at that epoch
                kick = by_epoch[key][0].dv
                dr = max(dr, float(np.hypot(*(end.position - target.position))))
                dv = max(dv, float(np.hypot(*(end.velocity + kick - target.velocity))))
            if k + 1 < len(self.arcs):
                nxt = self.arcs[k + 1]
                dr = max(dr, float(np.hypot(*(end.position - nxt.position))))
        return dr, dv


@dataclass
class MissionEvaluation:
    dv_total: float
    legs: list[LegEvaluation]
    trajectory: Trajectory
    breakdown: np.ndarray = field(init=False)  # (N, 3): dv_a, dv_b, dv_c per leg

    def __post_init__(self):
        self.breakdown = np.array([[g.dv_a, g.dv_b, g.dv_c] for g in self.legs])

    @property
    def leg_dv(self) -> np.ndarray:
        return self.breakdown.sum(axis=1)


def evaluate_mission(plan: MissionPlan) -> MissionEvaluation:
    """Evaluate every leg of the plan; raises :class:`InfeasibleLeg` with its index."""
    mu = plan.mu
    t_prev = 0.0
    dep = plan.bodies[0]
    legs = []
    for k, (idx, t, params) in enumerate(zip(plan.sequence, plan.epochs, plan.legs)):
        arr = plan.bodies[idx]
        try:
            legs.append(evaluate_leg(circular_state(dep, t_prev, mu), arr, t_prev, t, params, mu))
        except InfeasibleLeg as err:
            raise InfeasibleLeg(str(err), leg=k) from None
        dep, t_prev = arr, t
    arcs = tuple(a for g in legs for a in g.arcs)
    impulses = tuple(i for g in legs for i in g.impulses)
    encounters = tuple((t, plan.bodies[idx]) for idx, t in zip(plan.sequence, plan.epochs))
    traj = Trajectory(arcs, impulses, encounters, mu)
    # sum leg by leg so the total is exactly the sum of the reported breakdown
    total = 0.0
    for g in legs:
        total += g.dv_a + g.dv_b + g.dv_c
    return MissionEvaluation(total, legs, traj)


def export_radius_time_trace(trajectory: Trajectory, points_per_arc: int = TRACE_POINTS) -> np.ndarray:
    """Samples ``(t, r, flag)`` uniform in time along every arc.

    Each arc contributes ``points_per_arc`` samples starting at its first
    impulse (flag 1, or 2 when it is a rendezvous epoch); the final
    encounter closes the series.
    """
    if points_per_arc < 2:
        raise ValueError("need at least two points per arc")
    enc = {round(t, 6) for t, _ in trajectory.encounters}
    rows = []
    for arc in trajectory.arcs:
        ts = np.linspace(arc.t_start, arc.t_end, points_per_arc)[:-1]
        for j, t in enumerate(ts):
            s = propagate_kepler(arc.state, t - arc.t_start, trajectory.mu)
            flag = COAST if j else (ENCOUNTER if round(arc.t_start, 6) in enc else IMPULSE)
            rows.append((t, s.radius, flag))
    last = trajectory.arcs[-1]
    end = propagate_kepler(last.state, last.duration, trajectory.mu)
    rows.append((last.t_end, end.radius, ENCOUNTER))
    # the chaser starts on its own orbit: the first departure is not a rendezvous
    if rows and rows[0][0] == 0.0 and 0.0 not in enc:
        rows[0] = (rows[0][0], rows[0][1], IMPULSE)
    return np.array(rows)


def write_trace(path, trace: np.ndarray) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_seconds", "r_km", "event_flag"])
        for t, r, f in trace:
            w.writerow([repr(float(t)), repr(float(r)), int(f)])


def read_trace(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data
