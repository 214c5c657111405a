"""Outer level: permutation-encoded tours solved by simulated annealing.

Three formulations share the machinery here:

* time-free: the visiting order ``p`` (a permutation of ``1..N``) priced
  with a 2D matrix,
* time-uniform: ``p`` priced with a 3D tensor, encounter k at ``k T_M / N``,
* time-discrete: an augmented permutation of ``1..N*D`` where values above
  ``N`` are blanks; positions of the non-blank entries are the encounter
  grid indices.

Permutations are 1-based integer arrays throughout, matching the target ids.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .heuristic import CostTensor, Variant
from .orbital import MU_EARTH, Body

MOVES = ("insert", "swap", "reverse", "scramble")


class SizeGuard(ValueError):
    """Instance too large for exhaustive enumeration."""


@dataclass(frozen=True)
class TourProblem:
    """Chaser plus ``N`` targets, mission horizon ``T_M`` and grid divisions ``D``.

    ``bodies[0]`` is the chaser; ``bodies[k]`` is the target encoded as ``k``.
    """

    bodies: tuple[Body, ...]
    horizon: float
    divisions: int = 1
    mu: float = MU_EARTH

    def __post_init__(self):
        object.__setattr__(self, "bodies", tuple(self.bodies))
        if len(self.bodies) < 2:
            raise ValueError("need a chaser and at least one target")
        if self.divisions < 1:
            raise ValueError("divisions must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def n_targets(self) -> int:
        return len(self.bodies) - 1

    @property
    def n_slots(self) -> int:
        return self.n_targets * self.divisions

    @property
    def grid_step(self) -> float:
        return self.horizon / self.n_slots

    def grid(self) -> np.ndarray:
        """Epochs ``tau_0 .. tau_{N D}``."""
        return np.arange(self.n_slots + 1) * self.grid_step

    def body_ids(self, p) -> list[int]:
        return [self.bodies[int(k)].id for k in p]


@dataclass(frozen=True)
class DecodedTour:
    sequence: np.ndarray  # target indices 1..N in visiting order
    slots: np.ndarray  # grid index of each encounter
    epochs: np.ndarray  # seconds


def check_permutation(pi, n: int | None = None) -> None:
    pi = np.asarray(pi)
    n = len(pi) if n is None else n
    if len(pi) != n or not np.array_equal(np.sort(pi), np.arange(1, n + 1)):
        raise ValueError(f"not a permutation of 1..{n}: {pi}")


def decode(pi, N: int, D: int, T_M: float) -> DecodedTour:
    """Split an augmented permutation into visiting order and encounter epochs."""
    pi = np.asarray(pi)
    h = np.flatnonzero(pi <= N) + 1
    return DecodedTour(pi[h - 1].copy(), h, h * (T_M / (N * D)))


def encode(sequence, slots, N: int, D: int) -> np.ndarray:
    """Inverse of :func:`decode`, blanks filled in ascending order."""
    pi = np.zeros(N * D, dtype=np.int64)
    slots = np.asarray(slots)
    pi[slots - 1] = sequence
    blank = np.ones(N * D, dtype=bool)
    blank[slots - 1] = False
    pi[blank] = np.arange(N + 1, N * D + 1)
    return pi


def embed_uniform(p, D: int = 1) -> np.ndarray:
    """Time-discrete encoding of a uniform tour (encounter k on slot k*D)."""
    N = len(p)
    return encode(np.asarray(p), np.arange(1, N + 1) * D, N, D)


# ---------------------------------------------------------------------------
# tour costs


@njit(cache=True)
def _time_free_kernel(p, values):
    total = 0.0
    prev = 0
    for v in p:
        total += values[prev, v - 1]
        prev = v
    return total


@njit(cache=True)
def _time_uniform_kernel(p, values):
    total = 0.0
    prev = 0
    for k in range(p.size):
        total += values[prev, p[k] - 1, k]
        prev = p[k]
    return total


@njit(cache=True)
def _time_discrete_kernel(pi, values, M, out):
    n_tgt = values.shape[1]
    prev = 0
    h_prev = 0
    leg = 0
    total = 0.0
    for idx in range(pi.size):
        v = pi[idx]
        if v <= n_tgt:
            h = idx + 1
            m = min(h - h_prev, M)
            c = values[prev, v - 1, h_prev, m - 1]
            if leg < out.size:
                out[leg] = c
            total += c
            leg += 1
            prev = v
            h_prev = h
    return total


_NO_LEGS = np.empty(0)


def tour_cost_time_free(p, cost: CostTensor) -> float:
    """Sum of time-free leg costs, starting from the chaser."""
    return _time_free_kernel(np.asarray(p, dtype=np.int64), cost.values)


def tour_cost_time_uniform(p, cost: CostTensor) -> float:
    return _time_uniform_kernel(np.asarray(p, dtype=np.int64), cost.values)


def time_discrete_legs(pi, cost: CostTensor) -> np.ndarray:
    """Per-leg costs of an augmented permutation, durations clamped at ``M``."""
    out = np.empty(cost.values.shape[1])
    _time_discrete_kernel(np.asarray(pi, dtype=np.int64), cost.values, cost.M, out)
    return out


def tour_cost_time_discrete(pi, cost: CostTensor) -> float:
    return _time_discrete_kernel(np.asarray(pi, dtype=np.int64), cost.values, cost.M, _NO_LEGS)


def cost_function(cost: CostTensor) -> Callable[[np.ndarray], float]:
    """The tour cost matching the tensor variant."""
    fn = {
        Variant.MATRIX2D: tour_cost_time_free,
        Variant.TENSOR3D: tour_cost_time_uniform,
        Variant.TENSOR4D: tour_cost_time_discrete,
    }[cost.variant]
    return lambda pi: fn(pi, cost)


# ---------------------------------------------------------------------------
# neighbour moves


def _draw_pair(n: int, rng: np.random.Generator) -> tuple[int, int]:
    if n < 2:
        return 0, 0
    i = int(rng.integers(n))
    j = int(rng.integers(n - 1))
    return i, j + (j >= i)


def apply_move(pi: np.ndarray, move: str, i: int, j: int, rng: np.random.Generator) -> np.ndarray:
    """Return a perturbed copy of ``pi`` with the move acting on positions i, j.

    ``insert`` moves the element at ``i`` to position ``j``; ``reverse`` and
    ``scramble`` act on the inclusive span between the two positions.
    """
    out = pi.copy()
    if move == "swap":
        out[i], out[j] = pi[j], pi[i]
    elif move == "insert":
        if i < j:
            out[i:j] = pi[i + 1:j + 1]
        else:
            out[j + 1:i + 1] = pi[j:i]
        out[j] = pi[i]
    elif move == "reverse":
        lo, hi = min(i, j), max(i, j) + 1
        out[lo:hi] = pi[lo:hi][::-1]
    elif move == "scramble":
        lo, hi = min(i, j), max(i, j) + 1
        out[lo:hi] = rng.permutation(pi[lo:hi])
    else:
        raise ValueError(f"unknown move {move!r}")
    return out


def neighbor(pi, move: str, rng: np.random.Generator, i: int | None = None,
             j: int | None = None) -> np.ndarray:
    """Random neighbour of ``pi`` under one of :data:`MOVES`.

    Positions are drawn uniformly (distinct) unless ``i`` and ``j`` are given.
    """
    pi = np.asarray(pi)
    if i is None or j is None:
        i, j = _draw_pair(len(pi), rng)
    return apply_move(pi, move, i, j, rng)


# ---------------------------------------------------------------------------
# simulated annealing


@dataclass
class SAConfig:
    T0: float = 10.0
    TF: float = 1e-6
    alpha: float = 0.95
    plateau: int | None = None  # steps per temperature, defaults to len(pi)
    max_iters: int | None = None
    seed: int | None = None
    move_weights: Sequence[float] = (1.0, 1.0, 1.0, 1.0)
    normalize: bool = True  # scale energies by the initial cost

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if not self.T0 > self.TF > 0:
            raise ValueError("need T0 > TF > 0")
        if self.plateau is not None and self.plateau < 1:
            raise ValueError("plateau must be >= 1")
        if len(self.move_weights) != len(MOVES) or min(self.move_weights) < 0:
            raise ValueError("move_weights needs four nonnegative entries")


@dataclass
class SAHistory:
    """State at the end of every temperature level, plus move statistics."""

    temperature: np.ndarray
    current: np.ndarray
    best: np.ndarray
    proposed: dict[str, int] = field(default_factory=dict)
    improved: dict[str, int] = field(default_factory=dict)

    def improvement_frequency(self) -> dict[str, float]:
        """Share of proposals of each move that improved on the current state."""
        return {m: self.improved[m] / self.proposed[m] if self.proposed[m] else 0.0 for m in MOVES}


@dataclass
class SAResult:
    best: np.ndarray
    best_cost: float
    history: SAHistory


def _schedule(config: SAConfig, n: int) -> tuple[int, int, int]:
    plateau = config.plateau or n
    n_levels = math.floor(math.log(config.TF / config.T0) / math.log(config.alpha)) + 1
    n_iter = n_levels * plateau
    if config.max_iters is not None:
        n_iter = min(n_iter, config.max_iters)
    return plateau, -(-n_iter // plateau), n_iter


def anneal(cost, initial, config: SAConfig, rng: np.random.Generator | None = None) -> SAResult:
    """Metropolis annealing with a geometric cooling schedule.

    ``cost`` is a :class:`CostTensor` (compiled fast path) or any callable
    mapping a permutation to its cost.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    x = np.array(initial, dtype=np.int64, copy=True)
    plateau, n_levels, n_iter = _schedule(config, len(x))
    weights = np.asarray(config.move_weights, dtype=float)
    cum = np.cumsum(weights / weights.sum())
    temps = config.T0 * config.alpha ** np.arange(n_levels)
    cur_trace = np.empty(n_levels)
    best_trace = np.empty(n_levels)
    proposed = np.zeros(len(MOVES), dtype=np.int64)
    improved = np.zeros(len(MOVES), dtype=np.int64)
    if isinstance(cost, CostTensor):
        kind = {Variant.MATRIX2D: 0, Variant.TENSOR3D: 1, Variant.TENSOR4D: 2}[cost.variant]
        seed = int(rng.integers(2**63 - 1))
        values = cost.values.reshape(cost.values.shape + (1,) * (4 - cost.values.ndim))
        best, best_f = _anneal_kernel(x, values, kind, cost.M, temps, plateau, n_iter, cum,
                                      config.normalize, seed, cur_trace, best_trace, proposed,
                                      improved)
    else:
        best, best_f = _anneal_python(cost, x, temps, plateau, n_iter, cum, config.normalize, rng,
                                      cur_trace, best_trace, proposed, improved)
    history = SAHistory(temps, cur_trace, best_trace, dict(zip(MOVES, proposed.tolist())),
                        dict(zip(MOVES, improved.tolist())))
    return SAResult(best, float(best_f), history)


def _anneal_python(cost_fn, x, temps, plateau, n_iter, cum, normalize, rng, cur_trace, best_trace,
                   proposed, improved):
    f = cost_fn(x)
    best, best_f = x.copy(), f
    scale = abs(f) if normalize and f != 0 else 1.0
    n = len(x)
    for k in range(n_iter):
        m = int(np.searchsorted(cum, rng.random(), side="right"))
        m = min(m, len(MOVES) - 1)
        i, j = _draw_pair(n, rng)
        y = apply_move(x, MOVES[m], i, j, rng) if n > 1 else x.copy()
        fy = cost_fn(y)
        delta = (fy - f) / scale
        proposed[m] += 1
        if delta < 0:
            improved[m] += 1
        if delta <= 0 or rng.random() < math.exp(-delta / temps[k // plateau]):
            x, f = y, fy
            if f < best_f:
                best, best_f = x.copy(), f
        if (k + 1) % plateau == 0 or k + 1 == n_iter:
            cur_trace[k // plateau] = f
            best_trace[k // plateau] = best_f
    return best, best_f


@njit(cache=True)
def _tensor_cost(x, values, kind, M):
    # values is always 4-D here; lower-rank variants carry singleton axes
    if kind == 2:
        return _time_discrete_kernel(x, values, M, np.empty(0))
    total = 0.0
    prev = 0
    for k in range(x.size):
        total += values[prev, x[k] - 1, k if kind == 1 else 0, 0]
        prev = x[k]
    return total


@njit(cache=True)
def _move_inplace(x, y, m, i, j):
    n = x.size
    for k in range(n):
        y[k] = x[k]
    if m == 1:  # swap
        y[i], y[j] = x[j], x[i]
    elif m == 0:  # insert
        if i < j:
            for k in range(i, j):
                y[k] = x[k + 1]
        else:
            for k in range(j + 1, i + 1):
                y[k] = x[k - 1]
        y[j] = x[i]
    else:
        lo, hi = min(i, j), max(i, j)
        if m == 2:  # reverse
            for k in range(lo, hi + 1):
                y[k] = x[hi - (k - lo)]
        else:  # scramble, Fisher-Yates on the span
            for k in range(hi, lo, -1):
                r = lo + np.random.randint(0, k - lo + 1)
                y[k], y[r] = y[r], y[k]


@njit(cache=True)
def _anneal_kernel(x, values, kind, M, temps, plateau, n_iter, cum, normalize, seed, cur_trace,
                   best_trace, proposed, improved):
    np.random.seed(seed % 4294967296)
    n = x.size
    f = _tensor_cost(x, values, kind, M)
    best = x.copy()
    best_f = f
    scale = abs(f) if normalize and f != 0 else 1.0
    y = x.copy()
    for k in range(n_iter):
        u = np.random.random()
        m = 0
        while m < 3 and u >= cum[m]:
            m += 1
        if n > 1:
            i = np.random.randint(0, n)
            j = np.random.randint(0, n - 1)
            if j >= i:
                j += 1
            _move_inplace(x, y, m, i, j)
        else:
            y[:] = x
        fy = _tensor_cost(y, values, kind, M)
        delta = (fy - f) / scale
        proposed[m] += 1
        if delta < 0:
            improved[m] += 1
        if delta <= 0 or np.random.random() < np.exp(-delta / temps[k // plateau]):
            x, y = y, x
            f = fy
            if f < best_f:
                best[:] = x
                best_f = f
        if (k + 1) % plateau == 0 or k + 1 == n_iter:
            cur_trace[k // plateau] = f
            best_trace[k // plateau] = best_f
    return best, best_f


# ---------------------------------------------------------------------------
# exhaustive oracle


def brute_force_tour(cost_fn: Callable[[np.ndarray], float], N: int, D: int | None = None):
    """Exact optimum by enumeration.

    With ``D is None`` the search space is the permutations of ``1..N``
    (time-free/uniform, N <= 8). Otherwise it is every distinct decoded
    time-discrete tour, represented by its canonical encoding (N*D <= 10).
    """
    if D is None:
        if N > 8:
            raise SizeGuard(f"N={N} exceeds the enumeration limit of 8")
        candidates = (np.array(p) for p in itertools.permutations(range(1, N + 1)))
    else:
        if N * D > 10:
            raise SizeGuard(f"N*D={N * D} exceeds the enumeration limit of 10")
        candidates = (
            encode(np.array(p), np.array(slots), N, D)
            for slots in itertools.combinations(range(1, N * D + 1), N)
            for p in itertools.permutations(range(1, N + 1))
        )
    best, best_f = None, math.inf
    for pi in candidates:
        f = cost_fn(pi)
        if f < best_f:
            best, best_f = pi, f
    return best, best_f
