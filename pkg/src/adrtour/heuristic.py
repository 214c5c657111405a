"""Analytic leg-cost estimate: Hohmann with phasing, or a double Hohmann via
a circular waiting orbit, plus the cost-tensor builders for the tour solver.

The batch kernel ``estimate_batch`` works on broadcastable arrays and is
shared by the scalar API and by every tensor builder, so a tensor entry
agrees with the corresponding direct call to rounding.
"""
from __future__ import annotations

import enum
import hashlib
import math
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .orbital import MU_EARTH, TWO_PI, Body, hohmann

PENALTY = 1.0e3  # km/s, marks an infeasible or invalid leg
RESIDUAL_TOL = 1e-10  # rad
CACHE_FORMAT_VERSION = 1


class CacheMismatch(ValueError):
    """A tensor cache file does not belong to the requested problem."""


class NoRoot(ValueError):
    """No waiting-orbit radius satisfies the rendezvous equation in the bracket."""


class Kind(enum.IntEnum):
    DIRECT_HOHMANN = 0
    WAIT_THEN_HOHMANN = 1
    DOUBLE_HOHMANN = 2
    INFEASIBLE = 3


@dataclass(frozen=True)
class PhasingSolution:
    kind: Kind
    dv: float
    t_wait: float = 0.0
    r3: float = math.nan
    k_rev: int = 0


# (side, k_rev): side 0 = inner waiting orbit, 1 = outer
CANDIDATES = ((0, 0), (0, 1), (1, 0), (1, -1))


def _wrap(angle):
    return np.mod(angle, TWO_PI)


def wait_time(theta1, theta2, r1, r2, mu: float = MU_EARTH):
    """Coast on the departure orbit until the Hohmann phase angle is reached.

    ``theta1``/``theta2`` are the departure and arrival angles at the start of
    the coast. The result lies in ``[0, synodic period)``.
    """
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    if np.any(r1 == r2):
        raise ValueError("wait time is undefined for equal radii")
    return _wait_time(np.asarray(theta1, float), np.asarray(theta2, float), r1, r2, mu)[()]


def _wait_time(theta1, theta2, r1, r2, mu):
    w1 = np.sqrt(mu / r1**3)
    w2 = np.sqrt(mu / r2**3)
    t_h = np.pi * np.sqrt((0.5 * (r1 + r2)) ** 3 / mu)
    # phase error with respect to gamma* = pi - w2 * T_H12
    err = theta2 - theta1 - np.pi + w2 * t_h
    inner = r1 < r2
    # the inner body gains phase, so the error shrinks for r1 < r2 and grows otherwise
    lead = np.where(inner, _wrap(err), _wrap(-err))
    return lead / np.abs(w1 - w2)


def _phase_gain(r3, r1, r2, t_max, w2, k_rev, mu):
    """Right-hand side of the rendezvous equation for a waiting radius r3."""
    t13 = np.pi * np.sqrt((0.5 * (r1 + r3)) ** 3 / mu)
    t23 = np.pi * np.sqrt((0.5 * (r2 + r3)) ** 3 / mu)
    w3 = np.sqrt(mu / r3**3)
    return (t_max - t13 - t23) * w3 - t_max * w2 + 2.0 * (1.0 - k_rev) * np.pi


def _coast_time(r3, r1, r2, t_max, mu):
    return t_max - np.pi * np.sqrt((0.5 * (r1 + r3)) ** 3 / mu) - np.pi * np.sqrt(
        (0.5 * (r2 + r3)) ** 3 / mu
    )


def _bisect(fun, lo, hi, iters=80):
    """Vectorized bisection for a function decreasing on [lo, hi].

    Returns the final bracket; ``fun(lo) > 0 >= fun(hi)`` is preserved.
    """
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pos = fun(mid) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return lo, hi


def _waiting_radius(dtheta0, t_max, r1, r2, k_rev, side, mu):
    """Vectorized root of the rendezvous equation; NaN where no root exists.

    The phase gained on the waiting orbit decreases monotonically with its
    radius, so the residual has at most one sign change per bracket.
    """
    rmin = np.minimum(r1, r2)
    rmax = np.maximum(r1, r2)
    if side == 0:
        lo, hi = 0.5 * rmin, rmin.copy()
    else:
        lo, hi = rmax.copy(), 2.0 * rmax
    # the coast on the waiting orbit must last a nonnegative time
    coast = lambda r: _coast_time(r, r1, r2, t_max, mu)  # noqa: E731
    ok = coast(lo) >= 0
    cut = ok & (coast(hi) < 0)
    if np.any(cut):
        hi = np.where(cut, _bisect(coast, lo, hi)[0], hi)
    w2 = np.sqrt(mu / r2**3)
    resid = lambda r: dtheta0 - _phase_gain(r, r1, r2, t_max, w2, k_rev, mu)  # noqa: E731
    g_lo, g_hi = resid(lo), resid(hi)
    # residual increases with r3: need g_lo <= 0 <= g_hi
    ok &= (g_lo <= 0) & (g_hi >= 0)
    lo, hi = _bisect(lambda r: -resid(r), lo, hi)
    return np.where(ok, 0.5 * (lo + hi), np.nan)


def solve_waiting_radius(dtheta0: float, t_max: float, r1: float, r2: float, k_rev: int,
                         side: str | None = None, mu: float = MU_EARTH) -> float:
    """Radius of the circular waiting orbit that closes the rendezvous.

    ``side`` selects the inner (below both radii) or outer (above both)
    bracket; by default k_rev = 1 is inner, k_rev = -1 outer and k_rev = 0
    tries inner first.
    """
    if k_rev not in (-1, 0, 1):
        raise ValueError("k_rev must be -1, 0 or 1")
    sides = {"inner": [0], "outer": [1], None: {1: [0], 0: [0, 1], -1: [1]}[k_rev]}[side]
    args = [np.asarray(v, dtype=float) for v in (dtheta0, t_max, r1, r2)]
    for s in sides:
        r3 = float(_waiting_radius(*args, k_rev, s, mu))
        if not math.isnan(r3):
            return r3
    raise NoRoot(f"no waiting orbit for k_rev={k_rev}")


def rendezvous_residual(r3, dtheta0, t_max, r1, r2, k_rev, mu: float = MU_EARTH):
    w2 = np.sqrt(mu / np.asarray(r2, float) ** 3)
    return dtheta0 - _phase_gain(r3, r1, r2, t_max, w2, k_rev, mu)


def estimate_batch(r1, theta1, r2, theta2, t_max, mu: float = MU_EARTH):
    """Heuristic leg cost on broadcast arrays.

    ``theta1``/``theta2`` are the departure and arrival body angles at the
    departure epoch, ``t_max`` the time available. Returns
    ``(dv, kind, t_wait, r3, k_rev)`` arrays.
    """
    r1, theta1, r2, theta2, t_max = np.broadcast_arrays(
        *[np.asarray(v, dtype=float) for v in (r1, theta1, r2, theta2, t_max)]
    )
    shape = r1.shape
    r1, theta1, r2, theta2, t_max = (v.reshape(-1) for v in (r1, theta1, r2, theta2, t_max))
    dv_h, t_h = hohmann(r1, r2, mu)
    dv_h = np.asarray(dv_h, dtype=float)
    t_h = np.asarray(t_h, dtype=float)

    same = r1 == r2
    dtheta0 = _wrap(theta2 - theta1)
    r2_safe = np.where(same, r2 * (1 + 1e-9), r2)
    t_wait = np.where(same, np.inf, _wait_time(theta1, theta2, r1, r2_safe, mu))
    # co-orbital and already in phase: nothing to do
    phased = same & ((dtheta0 < 1e-12) | (TWO_PI - dtheta0 < 1e-12))
    t_wait = np.where(phased, 0.0, t_wait)
    hohmann_ok = (t_wait + np.where(phased, 0.0, t_h) <= t_max) & (t_max > 0)

    dv = np.where(hohmann_ok, np.where(phased, 0.0, dv_h), np.inf)
    kind = np.where(hohmann_ok, np.where(t_wait == 0, Kind.DIRECT_HOHMANN, Kind.WAIT_THEN_HOHMANN),
                    Kind.INFEASIBLE).astype(np.int8)
    r3_best = np.full(r1.shape, np.nan)
    k_best = np.zeros(r1.shape, dtype=np.int8)

    todo = ~hohmann_ok
    if np.any(todo):
        idx = np.nonzero(todo)
        a = [v[idx] for v in (dtheta0, t_max, r1, r2)]
        best = np.full(a[0].shape, np.inf)
        best_r3 = np.full(a[0].shape, np.nan)
        best_k = np.zeros(a[0].shape, dtype=np.int8)
        for side, k in CANDIDATES:
            r3 = _waiting_radius(*a, k, side, mu)
            found = ~np.isnan(r3)
            r3f = np.where(found, r3, a[2])
            cost = hohmann(a[2], r3f, mu)[0] + hohmann(r3f, a[3], mu)[0]
            cost = np.where(found, cost, np.inf)
            better = cost < best
            best = np.where(better, cost, best)
            best_r3 = np.where(better, r3, best_r3)
            best_k = np.where(better, k, best_k)
        dv[idx] = best
        kind[idx] = np.where(np.isfinite(best), Kind.DOUBLE_HOHMANN, Kind.INFEASIBLE)
        r3_best[idx] = best_r3
        k_best[idx] = best_k
        t_wait = np.where(todo, 0.0, t_wait)

    dv = np.where(np.isfinite(dv), dv, PENALTY)
    return tuple(v.reshape(shape) for v in (dv, kind, t_wait, r3_best, k_best))


def leg_cost_estimate(dep: Body, arr: Body, t_dep: float, t_arr: float,
                      mu: float = MU_EARTH) -> tuple[float, PhasingSolution]:
    """Heuristic delta-v of a leg departing ``dep`` at ``t_dep`` and meeting ``arr`` at ``t_arr``."""
    if not t_arr > t_dep:
        raise ValueError("arrival must follow departure")
    dv, kind, t_wait, r3, k = estimate_batch(
        dep.radius, dep.angle(t_dep, mu), arr.radius, arr.angle(t_dep, mu), t_arr - t_dep, mu
    )
    sol = PhasingSolution(Kind(int(kind)), float(dv), float(t_wait), float(r3), int(k))
    return sol.dv, sol


# ---------------------------------------------------------------------------
# cost tensors


class Variant(enum.Enum):
    MATRIX2D = "matrix2d"
    TENSOR3D = "tensor3d"
    TENSOR4D = "tensor4d"


@dataclass(frozen=True)
class CostTensor:
    """Precomputed leg costs.

    Axes are ``(dep, arr)`` for MATRIX2D, ``(dep, arr, slot)`` for TENSOR3D
    (slot k departs at ``k * dt_grid``) and ``(dep, arr, h, m - 1)`` for
    TENSOR4D (departure at grid epoch ``h * dt_grid``, duration ``m * dt_grid``
    with ``m = 1..M``). ``dep`` counts the chaser as 0, ``arr`` index j is
    target ``j + 1``. Invalid entries hold ``PENALTY``.
    """

    variant: Variant
    values: np.ndarray
    dt_grid: float = math.nan
    M: int = 0

    def __post_init__(self):
        self.values.setflags(write=False)


def default_duration_cap(D: int) -> int:
    return 3 * D


def _body_arrays(bodies):
    r = np.array([b.radius for b in bodies], dtype=float)
    th = np.array([b.theta0 for b in bodies], dtype=float)
    return r, th


def _invalidate_self(values):
    n_tgt = values.shape[1]
    for j in range(n_tgt):
        values[j + 1, j, ...] = PENALTY
    return values


def build_cost_matrix(problem) -> CostTensor:
    """Time-free Hohmann costs, chaser row included."""
    r, _ = _body_arrays(problem.bodies)
    dv, _ = hohmann(r[:, None], r[None, 1:], problem.mu)
    return CostTensor(Variant.MATRIX2D, _invalidate_self(np.array(dv, dtype=float)))


def _grid_estimates(problem, t_dep, t_len):
    """Estimates for every (dep, arr) pair over broadcast departure epochs/durations."""
    mu = problem.mu
    r, th0 = _body_arrays(problem.bodies)
    w = np.sqrt(mu / r**3)
    t_dep = np.asarray(t_dep, dtype=float)
    extra = t_dep.ndim
    sl = (slice(None),) + (None,) * (extra + 1)
    sl2 = (None, slice(None)) + (None,) * extra
    theta = th0[:, None] + w[:, None] * t_dep.reshape(1, -1)
    theta = theta.reshape((len(r),) + t_dep.shape)
    dv, *_ = estimate_batch(
        r[sl], theta[:, None, ...], r[1:][sl2], theta[1:][None, ...], t_len, mu
    )
    return dv


def build_cost_tensor3(problem) -> CostTensor:
    """Uniform-slot costs: slot k departs at ``k * T_M / N`` and lasts ``T_M / N``."""
    n = problem.n_targets
    dt = problem.horizon / n
    t_dep = np.arange(n) * dt
    dv = _grid_estimates(problem, t_dep, dt)
    return CostTensor(Variant.TENSOR3D, _invalidate_self(np.array(dv)), dt_grid=dt)


def build_cost_tensor4(problem, M: int | None = None) -> CostTensor:
    """Time-discrete costs on the grid ``tau_h = h * T_M / (N D)``.

    Durations are capped at ``M`` grid units; the tour cost clamps longer
    transfers to the ``m = M`` entry.
    """
    n_grid = problem.n_targets * problem.divisions
    M = default_duration_cap(problem.divisions) if M is None else int(M)
    if M < 1:
        raise ValueError("duration cap must be at least 1")
    dt = problem.horizon / n_grid
    t_dep = np.arange(n_grid) * dt
    m = np.arange(1, M + 1) * dt
    t_dep_b, t_len = np.broadcast_arrays(t_dep[:, None], m[None, :])
    dv = _grid_estimates(problem, np.ascontiguousarray(t_dep_b), t_len)
    return CostTensor(Variant.TENSOR4D, _invalidate_self(np.array(dv)), dt_grid=dt, M=M)


# ---------------------------------------------------------------------------
# cache file


def problem_hash(problem) -> str:
    rows = ";".join(f"{b.id},{b.radius!r},{b.theta0!r}" for b in problem.bodies)
    return hashlib.sha256(rows.encode()).hexdigest()[:16]


def save_tensor(path, tensor: CostTensor, problem) -> None:
    """Write a tensor cache (``.npz``) with a validation header."""
    header = dict(
        version=CACHE_FORMAT_VERSION, variant=tensor.variant.value, N=problem.n_targets,
        D=problem.divisions, M=tensor.M, T_M=problem.horizon, mu=problem.mu,
        targets_hash=problem_hash(problem), dt_grid=tensor.dt_grid,
    )
    with open(path, "wb") as fh:
        np.savez(fh, values=np.ascontiguousarray(tensor.values).ravel(),
                 shape=np.array(tensor.values.shape), **{k: np.array(v) for k, v in header.items()})


def load_tensor(path, problem, variant: Variant | None = None, M: int | None = None) -> CostTensor:
    """Load a tensor cache, refusing it if it was built for another problem."""
    try:
        with np.load(Path(path), allow_pickle=False) as z:
            return _read_cache(z, problem, variant, M)
    except CacheMismatch:
        raise
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as err:
        raise CacheMismatch(f"unreadable tensor cache {path}: {err}") from err


def _read_cache(z, problem, variant, M) -> CostTensor:
    if int(z["version"]) != CACHE_FORMAT_VERSION:
        raise CacheMismatch("unsupported tensor cache version")
    checks = {
        "targets_hash": problem_hash(problem), "N": problem.n_targets,
        "D": problem.divisions, "T_M": problem.horizon, "mu": problem.mu,
    }
    for key, want in checks.items():
        got = z[key].item()
        if got != want:
            raise CacheMismatch(f"tensor cache mismatch on {key}: {got!r} != {want!r}")
    var = Variant(str(z["variant"]))
    if variant is not None and var != variant:
        raise CacheMismatch(f"tensor cache holds {var.value}, wanted {variant.value}")
    if M is not None and var is Variant.TENSOR4D and int(z["M"]) != M:
        raise CacheMismatch("tensor cache built with a different duration cap")
    values = z["values"].reshape(tuple(z["shape"]))
    return CostTensor(var, values.copy(), dt_grid=float(z["dt_grid"]), M=int(z["M"]))
