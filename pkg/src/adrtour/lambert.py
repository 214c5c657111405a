"""Planar prograde multi-revolution Lambert solver (Izzo's formulation).

Solutions are indexed by a signed integer ``L``: ``|L|`` is the number of
complete revolutions and the sign selects the branch (positive = right,
i.e. the solution with ``x`` above the minimum-time point). ``L = 0`` is the
unique direct transfer.

The numeric core is a set of numba kernels so the leg evaluator can call it
in tight loops; :func:`lambert_solve` and :func:`lambert_candidates` are the
Python-facing wrappers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .orbital import MU_EARTH

N_MAX = 50
X_TOL = 1e-12
MAX_ITER = 60

OK, NO_SOLUTION, DEGENERATE = 0, 1, 2


class LambertError(ValueError):
    pass


class NoSolution(LambertError):
    """The time of flight is too short for the requested revolutions."""


class DegenerateGeometry(LambertError):
    """Endpoints are aligned so the transfer plane/sense is ambiguous."""


@dataclass(frozen=True)
class LambertResult:
    v_dep: np.ndarray
    v_arr: np.ndarray
    L: int

    @property
    def revolutions(self) -> int:
        return abs(self.L)


@njit(cache=True, error_model="numpy")
def _hypergeometric_f(z, tol):
    sj = 1.0
    cj = 1.0
    err = 1.0
    j = 0
    while err > tol and j < 1000:
        cj1 = cj * (3.0 + j) * (1.0 + j) / (2.5 + j) * z / (j + 1.0)
        sj += cj1
        err = abs(cj1)
        cj = cj1
        j += 1
    return sj


@njit(cache=True, error_model="numpy")
def _x2tof_lagrange(x, n, lam):
    a = 1.0 / (1.0 - x * x)
    if a > 0.0:
        alfa = 2.0 * math.acos(x)
        beta = 2.0 * math.asin(math.sqrt(lam * lam / a))
        if lam < 0.0:
            beta = -beta
        return a * math.sqrt(a) * ((alfa - math.sin(alfa)) - (beta - math.sin(beta)) + 2.0 * math.pi * n) / 2.0
    alfa = 2.0 * math.acosh(x)
    beta = 2.0 * math.asinh(math.sqrt(-lam * lam / a))
    if lam < 0.0:
        beta = -beta
    return -a * math.sqrt(-a) * ((beta - math.sinh(beta)) - (alfa - math.sinh(alfa))) / 2.0


@njit(cache=True, error_model="numpy")
def x2tof(x, n, lam):
    """Non-dimensional time of flight as a function of the Lambert variable x."""
    battin = 0.01
    lagrange = 0.2
    dist = abs(x - 1.0)
    if lagrange > dist > battin:
        return _x2tof_lagrange(x, n, lam)
    k = lam * lam
    e = x * x - 1.0
    rho = abs(e)
    z = math.sqrt(1.0 + k * e)
    if dist < battin:
        eta = z - lam * x
        s1 = 0.5 * (1.0 - lam - x * eta)
        q = 4.0 / 3.0 * _hypergeometric_f(s1, 1e-11)
        return (eta**3 * q + 4.0 * lam * eta) / 2.0 + n * math.pi / rho**1.5
    y = math.sqrt(rho)
    g = x * z - lam * e
    if e < 0.0:
        d = n * math.pi + math.acos(g)
    else:
        f = y * (z - lam * x)
        d = math.log(f + g)
    return (x - lam * z - d / y) / e


@njit(cache=True, error_model="numpy")
def _derivatives(x, t, lam):
    l2 = lam * lam
    l3 = l2 * lam
    umx2 = 1.0 - x * x
    y = math.sqrt(1.0 - l2 * umx2)
    y2 = y * y
    y3 = y2 * y
    d1 = 1.0 / umx2 * (3.0 * t * x - 2.0 + 2.0 * l3 * x / y)
    d2 = 1.0 / umx2 * (3.0 * t + 5.0 * x * d1 + 2.0 * (1.0 - l2) * l3 / y3)
    d3 = 1.0 / umx2 * (7.0 * x * d2 + 8.0 * d1 - 6.0 * (1.0 - l2) * l2 * l3 * x / y3 / y2)
    return d1, d2, d3


@njit(cache=True, error_model="numpy")
def _householder(t_target, x0, n, lam, tol, maxiter):
    x = x0
    for _ in range(maxiter):
        t = x2tof(x, n, lam)
        d1, d2, d3 = _derivatives(x, t, lam)
        delta = t - t_target
        d12 = d1 * d1
        x_new = x - delta * (d12 - delta * d2 / 2.0) / (d1 * (d12 - delta * d2) + d3 * delta * delta / 6.0)
        if not (x_new > -1.0):
            return x_new, False
        if abs(x_new - x) < tol:
            return x_new, True
        x = x_new
    return x, False


@njit(cache=True, error_model="numpy")
def _min_time(n, lam):
    """(x, T) at the minimum of the n-revolution time-of-flight curve."""
    x_old = 0.0
    t_min = x2tof(0.0, n, lam)
    for _ in range(40):
        d1, d2, d3 = _derivatives(x_old, t_min, lam)
        if d1 == 0.0:
            break
        x_new = x_old - d1 * d2 / (d2 * d2 - d1 * d3 / 2.0)
        x_new = min(max(x_new, -0.999999), 0.999999)
        if abs(x_old - x_new) < 1e-13:
            x_old = x_new
            break
        x_old = x_new
        t_min = x2tof(x_old, n, lam)
    return x_old, x2tof(x_old, n, lam)


@njit(cache=True, error_model="numpy")
def _bisect_x(t_target, lo, hi, n, lam, increasing):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        above = x2tof(mid, n, lam) > t_target
        if above == increasing:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


@njit(cache=True, error_model="numpy")
def solve_x(t, n, branch, lam):
    """Root of ``x2tof(x) = t``; returns (x, status)."""
    if n == 0:
        t00 = math.acos(lam) + lam * math.sqrt(1.0 - lam * lam)
        t1 = 2.0 / 3.0 * (1.0 - lam**3)
        if t >= t00:
            x0 = -(t - t00) / (t - t00 + 4.0)
        elif t <= t1:
            x0 = t1 * (t1 - t) / (2.0 / 5.0 * (1.0 - lam**5) * t) + 1.0
        else:
            x0 = (t / t00) ** (0.69314718055994531 / math.log(t1 / t00)) - 1.0
        x, ok = _householder(t, x0, 0, lam, X_TOL, MAX_ITER)
        if ok:
            return x, OK
        # time of flight decreases monotonically in x for the direct transfer
        hi = 1.0
        while x2tof(hi, 0, lam) > t:
            hi = 2.0 * hi + 1.0
            if hi > 1e8:
                return 0.0, NO_SOLUTION
        return _bisect_x(t, -1.0 + 1e-15, hi, 0, lam, False), OK
    x_min, t_min = _min_time(n, lam)
    if t < t_min:
        return 0.0, NO_SOLUTION
    if branch < 0:
        tmp = ((n * math.pi + math.pi) / (8.0 * t)) ** (2.0 / 3.0)
    else:
        tmp = ((8.0 * t) / (n * math.pi)) ** (2.0 / 3.0)
    x0 = (tmp - 1.0) / (tmp + 1.0)
    x, ok = _householder(t, x0, n, lam, X_TOL, MAX_ITER)
    on_branch = (x < x_min) if branch < 0 else (x > x_min)
    if ok and on_branch and x < 1.0:
        return x, OK
    if branch < 0:
        return _bisect_x(t, -1.0 + 1e-15, x_min, n, lam, False), OK
    return _bisect_x(t, x_min, 1.0 - 1e-15, n, lam, True), OK


@njit(cache=True, error_model="numpy")
def lambert_kernel(r1x, r1y, r2x, r2y, tof, n, branch, mu):
    """Velocities (v1x, v1y, v2x, v2y) and a status code."""
    r1 = math.hypot(r1x, r1y)
    r2 = math.hypot(r2x, r2y)
    cross = r1x * r2y - r1y * r2x
    dot = r1x * r2x + r1y * r2y
    c = math.hypot(r2x - r1x, r2y - r1y)
    if (abs(cross) <= 1e-10 * r1 * r2 and dot > 0.0) or c == 0.0 or r1 == 0.0 or r2 == 0.0:
        return DEGENERATE, 0.0, 0.0, 0.0, 0.0
    s = 0.5 * (r1 + r2 + c)
    lam2 = max(1.0 - c / s, 0.0)
    lam = math.sqrt(lam2)
    if cross < 0.0:
        lam = -lam
    t = math.sqrt(2.0 * mu / s**3) * tof
    x, status = solve_x(t, n, branch, lam)
    if status != OK:
        return status, 0.0, 0.0, 0.0, 0.0
    gamma = math.sqrt(mu * s / 2.0)
    rho = (r1 - r2) / c
    sigma = math.sqrt(max(1.0 - rho * rho, 0.0))
    y = math.sqrt(1.0 - lam2 + lam2 * x * x)
    vr1 = gamma * ((lam * y - x) - rho * (lam * y + x)) / r1
    vr2 = -gamma * ((lam * y - x) + rho * (lam * y + x)) / r2
    vt = gamma * sigma * (y + lam * x)
    vt1 = vt / r1
    vt2 = vt / r2
    # prograde tangential unit vectors are the radial ones rotated by +90 deg
    ux1, uy1 = r1x / r1, r1y / r1
    ux2, uy2 = r2x / r2, r2y / r2
    return (OK, vr1 * ux1 - vt1 * uy1, vr1 * uy1 + vt1 * ux1,
            vr2 * ux2 - vt2 * uy2, vr2 * uy2 + vt2 * ux2)


def lambert_solve(r_dep, r_arr, dt: float, L: int, mu: float = MU_EARTH,
                  n_max: int = N_MAX) -> LambertResult:
    """Solve the boundary-value problem for solution index ``L``."""
    if abs(L) > n_max:
        raise NoSolution(f"|L|={abs(L)} exceeds n_max={n_max}")
    if not dt > 0:
        raise ValueError("time of flight must be positive")
    (x1, y1), (x2, y2) = np.asarray(r_dep, float), np.asarray(r_arr, float)
    status, *v = lambert_kernel(x1, y1, x2, y2, float(dt), abs(int(L)), 1 if L >= 0 else -1, mu)
    if status == DEGENERATE:
        raise DegenerateGeometry("transfer angle is a multiple of 2 pi")
    if status == NO_SOLUTION:
        raise NoSolution(f"time of flight too short for {abs(L)} revolutions")
    return LambertResult(np.array(v[:2]), np.array(v[2:]), int(L))


def lambert_candidates(r_dep, r_arr, dt: float, target_revs: int,
                       mu: float = MU_EARTH, n_max: int = N_MAX) -> list[LambertResult]:
    """Both branches for target_revs - 1, target_revs and target_revs + 1 revolutions.

    Revolution counts below zero are dropped, the direct transfer has a
    single solution, and infeasible counts are skipped silently.
    """
    if target_revs < 0:
        raise ValueError("target_revs must be nonnegative")
    out = []
    for n in range(max(target_revs - 1, 0), target_revs + 2):
        for sign in ((1,) if n == 0 else (1, -1)):
            try:
                out.append(lambert_solve(r_dep, r_arr, dt, sign * n, mu, n_max))
            except NoSolution:
                continue
    return out
