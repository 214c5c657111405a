"""Inner level: refine a fixed visiting order into four-impulse legs.

Two modes:

* ``TIME_FIXED`` keeps the encounter epochs and solves one 6-variable
  problem per leg (the total is separable),
* ``TIME_FREE`` optimizes all leg parameters together with the epochs
  ``t_1 .. t_{N-1}``, each kept in the half-way interval around its nominal
  value; ``t_N`` stays fixed.

Time-free runs start from time-fixed solutions: one at the nominal epochs
and one at epochs chosen by a dynamic program over the phasing heuristic.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .de import DEConfig, de_optimize
from .heuristic import PENALTY, estimate_batch
from .leg import OUT_SIZE, LegParameters, leg_batch, leg_bounds, leg_kernel
from .orbital import MU_EARTH, Body

N_PARAMS = 6


class Mode(enum.Enum):
    TIME_FIXED = "time-fixed"
    TIME_FREE = "time-free"


@njit(cache=True, error_model="numpy", nogil=True)
def mission_batch(radius, theta0, omega, epochs, X, free, mu):
    """Total delta-v of each row of ``X``.

    ``radius``/``theta0``/``omega`` describe the visited bodies in order,
    chaser first (length N + 1). ``epochs`` holds ``t_0 .. t_N``; with
    ``free`` the last N - 1 genes of a row replace ``t_1 .. t_{N-1}``.
    """
    n_legs = radius.size - 1
    f = np.empty(X.shape[0])
    buf = np.empty(OUT_SIZE)
    t = epochs.copy()
    for i in range(X.shape[0]):
        x = X[i]
        if free:
            for k in range(1, n_legs):
                t[k] = x[N_PARAMS * n_legs + k - 1]
        total = 0.0
        for k in range(n_legs):
            t0, t1 = t[k], t[k + 1]
            total += leg_kernel(radius[k], theta0[k] + omega[k] * t0,
                                radius[k + 1], theta0[k + 1] + omega[k + 1] * t1,
                                t0, t1, x[N_PARAMS * k:N_PARAMS * (k + 1)], mu, buf)
        f[i] = total
    return f


@dataclass(frozen=True)
class InnerProblem:
    """A visiting order with nominal encounter epochs.

    ``sequence`` holds indices into ``bodies`` (``bodies[0]`` is the chaser);
    ``epochs`` are the nominal ``t_1 .. t_N`` in seconds.
    """

    mode: Mode
    bodies: tuple[Body, ...]
    sequence: tuple[int, ...]
    epochs: tuple[float, ...]
    leg_box: np.ndarray = None
    mu: float = MU_EARTH

    def __post_init__(self):
        object.__setattr__(self, "bodies", tuple(self.bodies))
        object.__setattr__(self, "sequence", tuple(int(s) for s in self.sequence))
        object.__setattr__(self, "epochs", tuple(float(t) for t in self.epochs))
        if len(self.sequence) != len(self.epochs) or not self.sequence:
            raise ValueError("need one nominal epoch per visited target")
        if len(set(self.sequence)) != len(self.sequence) or 0 in self.sequence:
            raise ValueError("sequence must list distinct target indices")
        t = np.array((0.0,) + self.epochs)
        if np.any(np.diff(t) <= 0):
            raise ValueError("nominal epochs must be strictly increasing and positive")
        if self.leg_box is None:
            box = leg_bounds([b.radius for b in self.bodies])
        else:
            box = np.asarray(self.leg_box, dtype=float)
        object.__setattr__(self, "leg_box", box)

    @property
    def n_legs(self) -> int:
        return len(self.sequence)

    @property
    def dim(self) -> int:
        extra = self.n_legs - 1 if self.mode is Mode.TIME_FREE else 0
        return N_PARAMS * self.n_legs + extra

    def visited(self) -> list[Body]:
        return [self.bodies[0]] + [self.bodies[k] for k in self.sequence]

    def epoch_bounds(self) -> np.ndarray:
        """Intervals for ``t_1 .. t_{N-1}``: half-way to the neighbouring nominal epochs."""
        t = np.array((0.0,) + self.epochs)
        k = np.arange(1, self.n_legs)
        return np.column_stack([t[k] - 0.5 * (t[k] - t[k - 1]), t[k] + 0.5 * (t[k + 1] - t[k])])

    def bounds(self) -> np.ndarray:
        box = np.tile(self.leg_box, (self.n_legs, 1))
        if self.mode is Mode.TIME_FREE:
            box = np.vstack([box, self.epoch_bounds()])
        return box

    def arrays(self):
        vis = self.visited()
        r = np.array([b.radius for b in vis])
        th = np.array([b.theta0 for b in vis])
        w = np.sqrt(self.mu / r**3)
        return r, th, w

    def objective(self):
        """Batch objective over rows of decision vectors."""
        r, th, w = self.arrays()
        t = np.array((0.0,) + self.epochs)
        free = self.mode is Mode.TIME_FREE
        mu = self.mu
        return lambda X: mission_batch(r, th, w, t, np.ascontiguousarray(X, dtype=float), free, mu)

    def split(self, x) -> tuple[list[LegParameters], np.ndarray]:
        """Leg parameters and epochs ``t_1 .. t_N`` encoded by ``x``."""
        x = np.asarray(x, dtype=float)
        legs = [LegParameters.from_array(x[N_PARAMS * k:N_PARAMS * (k + 1)])
                for k in range(self.n_legs)]
        t = np.array(self.epochs)
        if self.mode is Mode.TIME_FREE:
            t[:-1] = x[N_PARAMS * self.n_legs:]
        return legs, t


@dataclass
class InnerResult:
    problem: InnerProblem
    x: np.ndarray
    dv: float
    legs: list[LegParameters]
    epochs: np.ndarray
    leg_dv: np.ndarray
    evaluations: int
    history: list = field(default_factory=list)


def _leg_dv(problem: InnerProblem, legs, epochs) -> np.ndarray:
    r, th, w = problem.arrays()
    t = np.concatenate([[0.0], epochs])
    buf = np.empty(OUT_SIZE)
    out = np.empty(problem.n_legs)
    for k, p in enumerate(legs):
        out[k] = leg_kernel(r[k], th[k] + w[k] * t[k], r[k + 1], th[k + 1] + w[k + 1] * t[k + 1],
                            t[k], t[k + 1], p.as_array(), problem.mu, buf)
    return out


def _spawn(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def solve_time_fixed(problem: InnerProblem, config: DEConfig, epochs=None) -> InnerResult:
    """Independent 6-variable DE runs, one per leg."""
    epochs = np.array(problem.epochs if epochs is None else epochs, dtype=float)
    fixed = InnerProblem(Mode.TIME_FIXED, problem.bodies, problem.sequence, tuple(epochs),
                         problem.leg_box, problem.mu)
    r, th, w = fixed.arrays()
    t = np.concatenate([[0.0], epochs])
    seeds = _spawn(config.seed, fixed.n_legs)
    genes, evals, hist = [], 0, []
    for k in range(fixed.n_legs):
        one = np.array([r[k], r[k + 1]])
        ph = np.array([th[k] + w[k] * t[k], th[k + 1] + w[k + 1] * t[k + 1]])
        obj = _leg_objective(one, ph, t[k], t[k + 1], problem.mu)
        cfg = _with_seed(config, seeds[k])
        x, _, h = de_optimize(obj, fixed.leg_box, cfg, vectorized=True)
        genes.append(x)
        evals += h.evaluations
        hist.append(h)
    x = np.concatenate(genes)
    legs, ep = fixed.split(x)
    leg_dv = _leg_dv(fixed, legs, ep)
    return InnerResult(fixed, x, float(leg_dv.sum()), legs, ep, leg_dv, evals, hist)


def _leg_objective(r, phi, t0, t1, mu):
    return lambda X: leg_batch(r[0], phi[0], r[1], phi[1], t0, t1,
                               np.ascontiguousarray(X, dtype=float), mu)


def _with_seed(config: DEConfig, seed: int) -> DEConfig:
    return replace(config, seed=seed)


def heuristic_epochs(problem: InnerProblem, n_grid: int = 64) -> tuple[np.ndarray, float]:
    """Epochs inside :meth:`InnerProblem.epoch_bounds` minimizing the heuristic total.

    Dynamic program over ``n_grid`` candidate epochs per interval (the nominal
    epoch is always a candidate). Returns ``(t_1 .. t_N, estimated total)``.
    """
    vis = problem.visited()
    bounds = problem.epoch_bounds()
    cands = [np.unique(np.append(np.linspace(lo, hi, n_grid), nom))
             for (lo, hi), nom in zip(bounds, problem.epochs[:-1])]
    cands.append(np.array([problem.epochs[-1]]))
    mu = problem.mu
    prev_t = np.array([0.0])
    cost = np.array([0.0])
    back = []
    for k in range(problem.n_legs):
        a, b = vis[k], vis[k + 1]
        td = prev_t[:, None]
        ta = cands[k][None, :]
        dur = ta - td
        dv, *_ = estimate_batch(a.radius, a.theta0 + a.mean_motion(mu) * td, b.radius,
                                b.theta0 + b.mean_motion(mu) * td, np.maximum(dur, 0.0), mu)
        total = cost[:, None] + np.where(dur > 0, dv, PENALTY)
        back.append(np.argmin(total, axis=0))
        cost = total[back[-1], np.arange(total.shape[1])]
        prev_t = cands[k]
    j = int(np.argmin(cost))
    best = float(cost[j])
    out = np.empty(problem.n_legs)
    for k in range(problem.n_legs - 1, -1, -1):
        out[k] = cands[k][j]
        j = int(back[k][j])
    return out, best


def solve_time_free(problem: InnerProblem, config: DEConfig, fixed_config: DEConfig | None = None,
                    seeds: list | None = None, n_jitter: int = 8) -> InnerResult:
    """Joint DE over leg parameters and epochs.

    ``seeds`` are full time-free decision vectors injected into the initial
    populations along with ``n_jitter`` perturbed copies of the best one.
    """
    if problem.mode is not Mode.TIME_FREE:
        problem = InnerProblem(Mode.TIME_FREE, problem.bodies, problem.sequence, problem.epochs,
                               problem.leg_box, problem.mu)
    box = problem.bounds()
    obj = problem.objective()
    init = None
    if seeds:
        S = np.clip(np.atleast_2d(np.asarray(seeds, dtype=float)), box[:, 0], box[:, 1])
        f = obj(S)
        S = S[np.argsort(f, kind="stable")]
        rng = np.random.default_rng(config.seed)
        span = box[:, 1] - box[:, 0]
        jitter = S[0] + rng.normal(scale=0.01, size=(n_jitter, len(box))) * span
        init = np.vstack([S, np.clip(jitter, box[:, 0], box[:, 1])])
    x, f, h = de_optimize(obj, box, config, vectorized=True, initial=init)
    legs, ep = problem.split(x)
    leg_dv = _leg_dv(problem, legs, ep)
    return InnerResult(problem, x, float(leg_dv.sum()), legs, ep, leg_dv, h.evaluations, [h])


def as_time_free(result: InnerResult) -> np.ndarray:
    """Time-free decision vector equivalent to a time-fixed solution."""
    return np.concatenate([result.x[:N_PARAMS * len(result.legs)], result.epochs[:-1]])


def solve_inner(problem: InnerProblem, config: DEConfig, fixed_config: DEConfig | None = None,
                time_fixed: InnerResult | None = None) -> InnerResult:
    """Refine the tour in the problem's mode.

    In time-free mode the search is seeded with the time-fixed solution at
    the nominal epochs (``time_fixed`` when given, solved otherwise) and with
    a time-fixed solution at the heuristic-optimal epochs.
    """
    fixed_config = fixed_config or config
    if problem.mode is Mode.TIME_FIXED:
        return solve_time_fixed(problem, fixed_config)
    if time_fixed is None:
        time_fixed = solve_time_fixed(problem, fixed_config)
    seeds = [as_time_free(time_fixed)]
    t_h, _ = heuristic_epochs(problem)
    if not np.allclose(t_h, time_fixed.epochs):
        alt = solve_time_fixed(problem, _with_seed(fixed_config, _spawn(fixed_config.seed, 1)[0] + 1),
                               epochs=t_h)
        seeds.append(as_time_free(alt))
    result = solve_time_free(problem, config, seeds=seeds)
    result.evaluations += time_fixed.evaluations
    return result
