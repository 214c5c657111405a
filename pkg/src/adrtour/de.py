"""Self-adaptive differential evolution on an archipelago of islands.

Each island runs jDE (every individual carries its own F and Cr) with a
fixed mutation strategy and binomial crossover. Islands exchange their best
individuals along a ring at a fixed period, the direction of the exchange
alternating between events. When an island loses diversity, an epidemic
re-seeds it uniformly while sparing its best individuals.

Objectives take a 2D array of candidates and return their costs when
``vectorized=True`` (the fast path used by the trajectory problems), or a
single vector otherwise.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import pdist

STRATEGIES = ("rand/1/bin", "best/1/bin", "target-to-best/1/bin", "best/2/bin")
_N_DONORS = {"rand/1/bin": 3, "best/1/bin": 2, "target-to-best/1/bin": 2, "best/2/bin": 4}
MIN_POPULATION = 5

F_INIT, CR_INIT = 0.5, 0.9


@dataclass
class DEConfig:
    n_islands: int = 16
    pop_size: int | None = None  # per island, max(30, 5 * dim) when None
    generations: int | None = None
    max_evals: int | None = None  # total budget, converted to generations
    migration_period: int = 50
    n_migrants: int = 2
    tau1: float = 0.1
    tau2: float = 0.1
    F_min: float = 0.1
    F_max: float = 1.0
    epidemic_threshold: float = 1e-3
    epidemic_spare: int = 3
    max_epidemics: int = 5
    epidemic_gap: int = 100
    strategies: Sequence[str] | None = None
    seed: int | None = None
    workers: int = 1  # threads stepping islands; results do not depend on it

    def __post_init__(self):
        if self.n_islands < 1:
            raise ValueError("need at least one island")
        if self.pop_size is not None and self.pop_size < MIN_POPULATION:
            raise ValueError(f"pop_size must be at least {MIN_POPULATION}")
        if self.generations is None and self.max_evals is None:
            raise ValueError("set generations or max_evals")
        if self.strategies is not None:
            bad = set(self.strategies) - set(STRATEGIES)
            if bad:
                raise ValueError(f"unknown strategies {sorted(bad)}")
        if not 0 <= self.tau1 <= 1 or not 0 <= self.tau2 <= 1:
            raise ValueError("tau1 and tau2 are probabilities")
        if not 0 < self.F_min <= self.F_max:
            raise ValueError("need 0 < F_min <= F_max")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    def population_size(self, dim: int) -> int:
        return self.pop_size or max(30, 5 * dim)

    def island_strategies(self) -> list[str]:
        """Strategy of each island.

        The default follows a radial layout: the ring alternates the
        explorative schemes (rand/1, target-to-best/1) with the greedy ones
        (best/1, best/2), so every greedy island neighbours an explorative one.
        """
        if self.strategies is not None:
            s = list(self.strategies)
            return [s[i % len(s)] for i in range(self.n_islands)]
        order = (STRATEGIES[0], STRATEGIES[1], STRATEGIES[2], STRATEGIES[3])
        return [order[i % 4] for i in range(self.n_islands)]


@dataclass(frozen=True)
class Individual:
    genes: np.ndarray
    F: float
    Cr: float
    fitness: float


@dataclass
class Island:
    strategy: str
    population: np.ndarray
    fitness: np.ndarray
    F: np.ndarray
    Cr: np.ndarray
    rng: np.random.Generator
    neighbors: tuple[int, ...] = ()
    epidemics: int = 0
    last_epidemic: int = -(10**9)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.fitness))

    def best(self) -> Individual:
        i = self.best_index
        return Individual(self.population[i].copy(), float(self.F[i]), float(self.Cr[i]),
                          float(self.fitness[i]))

    def individuals(self) -> list[Individual]:
        return [Individual(self.population[i].copy(), float(self.F[i]), float(self.Cr[i]),
                           float(self.fitness[i])) for i in range(len(self.fitness))]


@dataclass
class DEHistory:
    best: np.ndarray  # global best fitness after each generation
    evaluations: int
    epidemics: list[tuple[int, int]] = field(default_factory=list)  # (generation, island)
    migrations: int = 0


# ---------------------------------------------------------------------------
# operators


def draw_donors(n: int, k: int, rng: np.random.Generator, targets=None) -> np.ndarray:
    """``k`` mutually distinct donor indices per target, never the target itself."""
    targets = np.arange(n) if targets is None else np.atleast_1d(targets)
    if n < k + 1:
        raise ValueError(f"population of {n} is too small for {k} donors")
    keys = rng.random((len(targets), n))
    keys[np.arange(len(targets)), targets] = np.inf
    return np.argpartition(keys, k - 1, axis=1)[:, :k]


def _mutants(strategy: str, X: np.ndarray, targets: np.ndarray, best: int,
             donors: np.ndarray, F: np.ndarray) -> np.ndarray:
    F = np.asarray(F, dtype=float)[:, None]
    d = [X[donors[:, j]] for j in range(donors.shape[1])]
    if strategy == "rand/1/bin":
        return d[0] + F * (d[1] - d[2])
    xb = X[best][None, :]
    if strategy == "best/1/bin":
        return xb + F * (d[0] - d[1])
    if strategy == "target-to-best/1/bin":
        xi = X[targets]
        return xi + F * (xb - xi) + F * (d[0] - d[1])
    if strategy == "best/2/bin":
        return xb + F * (d[0] - d[1]) + F * (d[2] - d[3])
    raise ValueError(f"unknown strategy {strategy!r}")


def mutate(strategy: str, population, target_index: int, F: float, rng: np.random.Generator,
           fitness=None) -> np.ndarray:
    """Mutant vector for one target (before crossover).

    The best member is taken from ``fitness`` when given, otherwise the first
    row is assumed to be the best.
    """
    X = np.asarray(population, dtype=float)
    if len(X) < MIN_POPULATION:
        raise ValueError(f"population must have at least {MIN_POPULATION} members")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    best = 0 if fitness is None else int(np.argmin(fitness))
    donors = draw_donors(len(X), _N_DONORS[strategy], rng, [target_index])
    return _mutants(strategy, X, np.array([target_index]), best, donors, [F])[0]


def jde_update(F, Cr, rng: np.random.Generator, tau1: float = 0.1, tau2: float = 0.1,
               F_min: float = 0.1, F_max: float = 1.0):
    """Self-adapted (F', Cr') for a trial; works on scalars or arrays."""
    F = np.asarray(F, dtype=float)
    Cr = np.asarray(Cr, dtype=float)
    u = rng.random((4,) + F.shape)
    F_new = np.where(u[0] < tau1, F_min + u[1] * (F_max - F_min), F)
    Cr_new = np.where(u[2] < tau2, u[3], Cr)
    if F_new.ndim == 0:
        return float(F_new), float(Cr_new)
    return F_new, Cr_new


def crossover(X, V, Cr, rng: np.random.Generator) -> np.ndarray:
    """Binomial crossover; each trial takes at least one gene from its mutant."""
    n, dim = X.shape
    mask = rng.random((n, dim)) < np.asarray(Cr)[:, None]
    mask[np.arange(n), rng.integers(dim, size=n)] = True
    return np.where(mask, V, X)


def repair(U, lo, hi) -> np.ndarray:
    """Reflect out-of-bounds genes back into the box, then clip."""
    U = np.where(U < lo, 2 * lo - U, U)
    U = np.where(U > hi, 2 * hi - U, U)
    return np.clip(U, lo, hi)


def diversity(population, lo, hi) -> float:
    """Mean pairwise distance in the unit-scaled box, divided by its diagonal."""
    X = (np.asarray(population) - lo) / (hi - lo)
    if len(X) < 2:
        return 0.0
    return float(pdist(X).mean() / math.sqrt(X.shape[1]))


def epidemic_check(island: Island, lo, hi, spare_count: int, threshold: float,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Re-seed a collapsed island in place; returns the indices that were reset.

    The caller evaluates the reset individuals.
    """
    rng = island.rng if rng is None else rng
    if diversity(island.population, lo, hi) >= threshold:
        return np.empty(0, dtype=int)
    order = np.argsort(island.fitness, kind="stable")
    reset = np.sort(order[spare_count:])
    island.population[reset] = lo + rng.random((len(reset), len(lo))) * (hi - lo)
    island.fitness[reset] = np.inf
    island.F[reset] = F_INIT
    island.Cr[reset] = CR_INIT
    return reset


def ring_neighbors(n: int) -> list[tuple[int, ...]]:
    """(backward, forward) neighbours on a ring of ``n`` islands."""
    if n == 1:
        return [()]
    if n == 2:
        return [(1,), (0,)]
    return [((i - 1) % n, (i + 1) % n) for i in range(n)]


def migrate(islands: list[Island], n_b: int, tide: str = "forward") -> None:
    """Synchronous elite exchange along the ring.

    With the forward tide island ``i`` sends its ``n_b`` best to its last
    neighbour (``i + 1`` on a ring), with the backward tide to its first. The
    migrants overwrite the receiver's ``n_b`` worst individuals.
    """
    if n_b <= 0 or len(islands) < 2:
        return
    if tide not in ("forward", "backward"):
        raise ValueError("tide is 'forward' or 'backward'")
    packets = []
    for src, isl in enumerate(islands):
        if not isl.neighbors:
            continue
        dst = isl.neighbors[-1] if tide == "forward" else isl.neighbors[0]
        best = np.argsort(isl.fitness, kind="stable")[:n_b]
        packets.append((dst, isl.population[best].copy(), isl.fitness[best].copy(),
                        isl.F[best].copy(), isl.Cr[best].copy()))
    for dst, X, f, F, Cr in packets:
        isl = islands[dst]
        worst = np.argsort(isl.fitness, kind="stable")[::-1][:len(f)]
        isl.population[worst] = X
        isl.fitness[worst] = f
        isl.F[worst] = F
        isl.Cr[worst] = Cr


# ---------------------------------------------------------------------------
# driver


def _evaluate(objective, X, vectorized: bool) -> np.ndarray:
    if len(X) == 0:
        return np.empty(0)
    if vectorized:
        return np.asarray(objective(X), dtype=float).reshape(len(X))
    return np.array([float(objective(x)) for x in X])


def _init_islands(objective, lo, hi, config: DEConfig, vectorized: bool, initial):
    dim = len(lo)
    n = config.population_size(dim)
    strategies = config.island_strategies()
    ss = np.random.SeedSequence(config.seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(config.n_islands)]
    neigh = ring_neighbors(config.n_islands)
    initial = None if initial is None else np.atleast_2d(np.asarray(initial, dtype=float))
    islands = []
    for k in range(config.n_islands):
        rng = rngs[k]
        X = lo + rng.random((n, dim)) * (hi - lo)
        if initial is not None:
            m = min(len(initial), n)
            X[:m] = np.clip(initial[:m], lo, hi)
        islands.append(Island(strategies[k], X, _evaluate(objective, X, vectorized),
                              np.full(n, F_INIT), np.full(n, CR_INIT), rng, neigh[k]))
    return islands


def _generation(isl: Island, objective, lo, hi, config: DEConfig, vectorized: bool) -> int:
    n = len(isl.fitness)
    rng = isl.rng
    F, Cr = jde_update(isl.F, isl.Cr, rng, config.tau1, config.tau2, config.F_min, config.F_max)
    targets = np.arange(n)
    donors = draw_donors(n, _N_DONORS[isl.strategy], rng)
    V = _mutants(isl.strategy, isl.population, targets, isl.best_index, donors, F)
    U = repair(crossover(isl.population, V, Cr, rng), lo, hi)
    fU = _evaluate(objective, U, vectorized)
    win = fU <= isl.fitness
    isl.population[win] = U[win]
    isl.fitness[win] = fU[win]
    isl.F[win] = F[win]
    isl.Cr[win] = Cr[win]
    return n


def de_optimize(objective: Callable, bounds, config: DEConfig, vectorized: bool = False,
                initial=None, callback: Callable | None = None):
    """Minimize ``objective`` over the box ``bounds`` (shape ``(dim, 2)``).

    ``initial`` rows are injected at the front of every island's random
    initial population. Returns ``(best_genes, best_fitness, history)``.
    """
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2 or not np.all(np.isfinite(bounds)):
        raise ValueError("bounds must be a finite (dim, 2) array")
    if np.any(bounds[:, 1] < bounds[:, 0]):
        raise ValueError("lower bound above upper bound")
    lo, hi = bounds[:, 0], bounds[:, 1]
    # a zero-width box would break the diversity scaling; give it a tiny span
    hi = np.where(hi > lo, hi, lo + 1e-300)
    islands = _init_islands(objective, lo, hi, config, vectorized, initial)
    n = config.population_size(len(lo))
    per_gen = n * len(islands)
    evals = per_gen
    budget = math.inf if config.max_evals is None else config.max_evals
    max_gen = config.generations if config.generations is not None else math.inf

    history = DEHistory(np.empty(0), evals)
    trace = []
    best_so_far = min(float(isl.fitness.min()) for isl in islands)
    tide = "forward"
    g = 0
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    step = lambda isl: _generation(isl, objective, lo, hi, config, vectorized)  # noqa: E731
    try:
        while g < max_gen and evals + per_gen <= budget:
            # islands only touch their own state and generator, so stepping
            # them concurrently gives the same result as stepping in order
            evals += sum(pool.map(step, islands) if pool else map(step, islands))
            for k, isl in enumerate(islands):
                if (isl.epidemics < config.max_epidemics
                        and g - isl.last_epidemic >= config.epidemic_gap
                        and evals + n <= budget):
                    reset = epidemic_check(isl, lo, hi, config.epidemic_spare,
                                           config.epidemic_threshold)
                    if len(reset):
                        isl.fitness[reset] = _evaluate(objective, isl.population[reset], vectorized)
                        evals += len(reset)
                        isl.epidemics += 1
                        isl.last_epidemic = g
                        history.epidemics.append((g, k))
            if config.migration_period and (g + 1) % config.migration_period == 0:
                migrate(islands, config.n_migrants, tide)
                tide = "backward" if tide == "forward" else "forward"
                history.migrations += 1
            best_so_far = min(best_so_far, min(float(isl.fitness.min()) for isl in islands))
            trace.append(best_so_far)
            if callback is not None:
                callback(g, islands)
            g += 1
    finally:
        if pool:
            pool.shutdown()
    history.best = np.array(trace)
    history.evaluations = evals
    k = int(np.argmin([isl.fitness.min() for isl in islands]))
    best = islands[k].best()
    return best.genes, best.fitness, history
