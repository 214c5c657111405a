"""Self-checks against independent references, run by ``adrtour oracle``.

Each check compares a solver with something it does not share code with:
Kepler propagation, closed-form Hohmann, exhaustive enumeration or a
function whose minimum is known.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .de import DEConfig, de_optimize
from .heuristic import (Kind, build_cost_tensor3, build_cost_tensor4, leg_cost_estimate,
                        rendezvous_residual)
from .lambert import lambert_candidates
from .leg import LegParameters, evaluate_leg_bodies, y_arc
from .orbital import MU_EARTH, Body, StateVector, hohmann, propagate_kepler
from .tour import SAConfig, TourProblem, anneal, brute_force_tour, cost_function


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def _positions(rng, n):
    r1 = rng.uniform(6600, 9000, n)
    r2 = rng.uniform(6600, 9000, n)
    a1 = rng.uniform(0, 2 * np.pi, n)
    a2 = a1 + rng.uniform(0.1, 2 * np.pi - 0.1, n)
    return (np.stack([r1 * np.cos(a1), r1 * np.sin(a1)], 1),
            np.stack([r2 * np.cos(a2), r2 * np.sin(a2)], 1))


def check_lambert(rng, n=200, tol=1e-6) -> Check:
    """Every Lambert candidate, propagated over its time of flight, hits the target."""
    p1, p2 = _positions(rng, n)
    worst, count = 0.0, 0
    for a, b in zip(p1, p2):
        dt = rng.uniform(1500, 40000)
        for sol in lambert_candidates(a, b, dt, int(rng.integers(0, 3))):
            end = propagate_kepler(StateVector(a, sol.v_dep), dt)
            worst = max(worst, float(np.hypot(*(end.position - b))),
                        1e3 * float(np.hypot(*(end.velocity - sol.v_arr))))
            count += 1
    return Check("lambert round trip", worst < tol and count > 0,
                 f"{count} solutions, worst miss {worst:.2e} km")


def check_y_arc(rng, n=200, tol=1e-6) -> Check:
    """A y-parameterized arc reaches its endpoint after the reported flight time."""
    p1, p2 = _positions(rng, n)
    worst = 0.0
    for a, b in zip(p1, p2):
        arc = y_arc(a, b, rng.uniform(0.1, 0.9), int(rng.integers(0, 2)))
        end = propagate_kepler(StateVector(a, arc.v_dep), arc.dt)
        worst = max(worst, float(np.hypot(*(end.position - b))))
    return Check("y-arc round trip", worst < tol, f"worst miss {worst:.2e} km")


def check_hohmann(rng, n=50, tol=1e-9) -> Check:
    """A leg that only needs a coast and a Hohmann transfer costs the closed-form delta-v."""
    worst = 0.0
    for _ in range(n):
        r1, r2 = rng.uniform(6600, 9000, 2)
        dv_ref, tof = hohmann(r1, r2)
        w1, w2 = math.sqrt(MU_EARTH / r1**3), math.sqrt(MU_EARTH / r2**3)
        wait = rng.uniform(100, 1000)
        # after coasting for ``wait`` the target sits at the Hohmann phase angle
        arr = Body(2, r2, math.pi - w2 * tof + (w1 - w2) * wait)
        dv, sol = leg_cost_estimate(Body(1, r1, 0.0), arr, 0.0, wait + tof + 1.0)
        ok = sol.kind is Kind.WAIT_THEN_HOHMANN and abs(sol.t_wait - wait) < 1e-6
        worst = max(worst, abs(dv - dv_ref) if ok else math.inf)
    return Check("heuristic matches Hohmann", worst < tol, f"worst error {worst:.2e} km/s")


def check_waiting_orbit(rng, n=200, tol=1e-8) -> Check:
    """Waiting-orbit solutions close the phase equation."""
    from .heuristic import estimate_batch

    r1 = rng.uniform(6600, 9000, n)
    r2 = rng.uniform(6600, 9000, n)
    th1 = rng.uniform(0, 2 * np.pi, n)
    th2 = rng.uniform(0, 2 * np.pi, n)
    t = rng.uniform(3e4, 2e5, n)
    dv, kind, _, r3, k = estimate_batch(r1, th1, r2, th2, t)
    sel = kind == int(Kind.DOUBLE_HOHMANN)
    res = rendezvous_residual(r3[sel], np.mod(th2[sel] - th1[sel], 2 * np.pi), t[sel], r1[sel],
                              r2[sel], k[sel].astype(int))
    res = np.abs(np.angle(np.exp(1j * res)))  # residual modulo full turns
    worst = float(res.max()) if res.size else 0.0
    return Check("waiting orbit closes the phase", bool(worst < tol and sel.any()),
                 f"{int(sel.sum())} waiting-orbit legs, worst residual {worst:.2e} rad")


def check_leg_continuity(rng, n=50, tol=1e-6) -> Check:
    """Propagating each arc of a four-impulse leg lands on the next impulse point."""
    worst = 0.0
    done = 0
    for _ in range(n):
        dep = Body(1, rng.uniform(6800, 8000), rng.uniform(0, 2 * np.pi))
        arr = Body(2, rng.uniform(6800, 8000), rng.uniform(0, 2 * np.pi))
        p = LegParameters(rng.uniform(6800, 8000), rng.uniform(0.3, 3), rng.uniform(0.2, 0.8),
                          rng.uniform(6800, 8000), rng.uniform(0.3, 3), rng.uniform(0.2, 0.8))
        try:
            leg = evaluate_leg_bodies(dep, arr, 0.0, 86400.0, p)
        except ValueError:
            continue
        for arc, nxt in zip(leg.arcs, leg.arcs[1:]):
            end = propagate_kepler(arc.state, arc.duration)
            worst = max(worst, float(np.hypot(*(end.position - nxt.position))))
        done += 1
    return Check("leg arcs join", worst < tol and done > 0, f"{done} legs, worst gap {worst:.2e} km")


def _small_problem(N, D, T_days):
    rng = np.random.default_rng(11)
    bodies = [Body(0, 7000.0, 0.0)] + [
        Body(k, float(rng.uniform(6900, 7400)), float(rng.uniform(0, 2 * np.pi)))
        for k in range(1, N + 1)]
    return TourProblem(bodies, T_days * 86400.0, D)


def check_sa_uniform() -> Check:
    """Annealing finds the enumerated optimum of a 6-target time-uniform tour."""
    tensor = build_cost_tensor3(_small_problem(6, 1, 3.0))
    _, opt = brute_force_tour(cost_function(tensor), 6)
    res = anneal(tensor, np.arange(1, 7), SAConfig(plateau=200, seed=0))
    return Check("annealing reaches the time-uniform optimum", abs(res.best_cost - opt) < 1e-12,
                 f"annealed {res.best_cost:.6f}, optimum {opt:.6f}")


def check_sa_discrete() -> Check:
    """Annealing finds the enumerated optimum of a small time-discrete tour."""
    tensor = build_cost_tensor4(_small_problem(3, 3, 1.5))
    _, opt = brute_force_tour(cost_function(tensor), 3, 3)
    res = anneal(tensor, np.arange(1, 10), SAConfig(plateau=300, seed=0))
    return Check("annealing reaches the time-discrete optimum", abs(res.best_cost - opt) < 1e-12,
                 f"annealed {res.best_cost:.6f}, optimum {opt:.6f}")


def check_de(tol=1e-8) -> Check:
    """Differential evolution drives a shifted sphere to its minimum."""
    shift = np.linspace(-2, 2, 6)
    _, f, _ = de_optimize(lambda X: ((X - shift) ** 2).sum(1), [[-5, 5]] * 6,
                          DEConfig(n_islands=4, max_evals=40_000, seed=0), vectorized=True)
    return Check("differential evolution on a sphere", f < tol, f"minimum {f:.2e}")


def run_all(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    return [check_lambert(rng), check_y_arc(rng), check_hohmann(rng), check_waiting_orbit(rng),
            check_leg_continuity(rng), check_sa_uniform(), check_sa_discrete(), check_de()]
