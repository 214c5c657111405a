"""Four-impulse rendezvous legs.

A leg from body ``k`` to body ``k+1`` is split into three ballistic arcs:

* arc a leaves the departure orbit and reaches the interior point
  ``(r13, phi_dep + dtheta13)`` along a y-parameterized conic,
* arc b is a multi-revolution Lambert arc between the two interior points,
* arc c reaches the arrival body from ``(r23, phi_arr - dtheta23)``, again as
  a y-arc.

The six continuous parameters ``(r13, dtheta13, y_a, r23, dtheta23, y_c)``
plus the two encounter epochs fully determine the leg. Impulses happen at the
departure, at both interior points and at the arrival.

All numerics live in :func:`leg_kernel`, which writes into a flat output
buffer; the dataclasses below are thin views on that buffer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .heuristic import PENALTY
from .lambert import N_MAX, OK, lambert_kernel
from .orbital import MU_EARTH, TWO_PI, Body, StateVector, circular_state

Y_MIN, Y_MAX = 0.02, 0.98
RADIUS_MARGIN = 200.0  # km around the target radii
DTHETA_MAX = 2.0 * TWO_PI

# status codes written by the kernels
LEG_OK, BAD_PARAMS, NO_INTERIOR_TIME, NO_LAMBERT = 0, 1, 2, 3

# leg_kernel output layout
(O_STATUS, O_DVA, O_DVB, O_DVC, O_T13, O_T23, O_L,
 O_P1, O_P13, O_P23, O_P2) = 0, 1, 2, 3, 4, 5, 6, 7, 9, 11, 13
# velocities: before/after each of the four impulses
O_V0M, O_V0P, O_V13M, O_V13P, O_V23M, O_V23P, O_V1M, O_V1P = 15, 17, 19, 21, 23, 25, 27, 29
OUT_SIZE = 31


class InfeasibleLeg(ValueError):
    """The leg parameters do not produce a valid four-impulse transfer."""

    def __init__(self, message: str, leg: int | None = None):
        super().__init__(message if leg is None else f"leg {leg}: {message}")
        self.leg = leg


@njit(cache=True, error_model="numpy")
def _conic_velocity(x, y, r, p, a, e, nu, mu):
    """Velocity at (x, y) on the conic (p, a, e), true anomaly nu."""
    vt = math.sqrt(mu * p) / r
    vr = math.sqrt(mu / p) * e * math.sin(nu)
    # on near-radial conics vr dominates and inherits the rounding of nu;
    # the energy form is well conditioned there
    vr2 = mu * (2.0 / r - 1.0 / a) - vt * vt
    if vr2 > vt * vt:
        vr = math.copysign(math.sqrt(vr2), vr)
    return (vr * x - vt * y) / r, (vr * y + vt * x) / r


@njit(cache=True, error_model="numpy")
def y_arc_kernel(x1, y1, x2, y2, y, revs, mu):
    """Conic from (x1, y1) to (x2, y2) spanning the prograde angle between them.

    Returns ``(ok, v1x, v1y, v2x, v2y, dt, a, e, omega)``. ``revs`` complete
    revolutions of the arc's own conic are added before arrival.
    """
    bad = (False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    if not (0.0 < y < 1.0):
        return bad
    r1 = math.hypot(x1, y1)
    r2 = math.hypot(x2, y2)
    dx = x2 - x1
    dy = y2 - y1
    c = math.hypot(dx, dy)
    th1 = math.atan2(y1, x1)
    th2 = math.atan2(y2, x2)
    span = (th2 - th1) % TWO_PI
    if c == 0.0 or span < 1e-12 or TWO_PI - span < 1e-12:
        return bad
    # r1 - r2 from the exact coordinate differences; the difference of the two
    # norms loses digits that (c1 + c2) then magnifies for long conics
    dr = -(dx * (x1 + x2) + dy * (y1 + y2)) / (r1 + r2)
    a_m = 0.25 * (r1 + r2 + c)
    a = a_m / (4.0 * y * (1.0 - y))
    c1 = 2.0 * a - r1
    c2 = 2.0 * a - r2
    # empty focus: intersection of the circles |F* - P1| = c1 and |F* - P2| = c2,
    # written in Heron form so the offset from the chord stays accurate near y = 1/2
    excess = a_m * (1.0 - 2.0 * y) ** 2 / (y * (1.0 - y))  # c1 + c2 - c
    heron = (c + dr) * excess * (c - dr) * (c1 + c2 + c)
    h = 0.5 * math.sqrt(max(heron, 0.0)) / c
    d = (c * c - dr * (c1 + c2)) / (2.0 * c)
    ux, uy = dx / c, dy / c
    # semi-latus rectum of the two conics from the half angles of the chord
    # form, sin^2(alpha/2) = 4 y (1 - y) and sin^2(beta/2) = that * (s - c) / s;
    # p = a (1 - e^2) from the focus cancels badly as e -> 1
    s = 2.0 * a_m
    s_alpha = 4.0 * y * (1.0 - y)
    sa, ca = math.sqrt(s_alpha), abs(1.0 - 2.0 * y)
    sb = math.sqrt(s_alpha * (s - c) / s)
    cb = math.sqrt((1.0 - 2.0 * y) ** 2 + s_alpha * c / s)
    q = a * (c - dr) * (c + dr) / (c * c)  # 4 a (s - r1) (s - r2) / c^2
    plus = sa * cb + ca * sb
    p_plus = q * plus * plus
    p_minus = q * (s_alpha * c / s / plus) ** 2
    best_dt = -1.0
    out = bad
    for sgn in (1.0, -1.0):
        fx = x1 + d * ux - sgn * h * uy
        fy = y1 + d * uy + sgn * h * ux
        # semi-major axis re-derived from the focal distances, so the conic
        # goes through both endpoints to rounding precision
        a_f = 0.25 * (r1 + r2 + math.hypot(x1 - fx, y1 - fy) + math.hypot(x2 - fx, y2 - fy))
        ex, ey = -fx / (2.0 * a_f), -fy / (2.0 * a_f)
        e = math.hypot(ex, ey)
        if e >= 1.0:
            continue
        om = math.atan2(ey, ex) if e > 0.0 else 0.0
        p_geo = a_f * (1.0 - e * e)
        p = p_plus if abs(p_plus - p_geo) < abs(p_minus - p_geo) else p_minus
        nu1 = th1 - om
        nu2 = th2 - om
        se = math.sqrt(p / a_f)
        E1 = math.atan2(se * math.sin(nu1), e + math.cos(nu1))
        E2 = math.atan2(se * math.sin(nu2), e + math.cos(nu2))
        dm = ((E2 - e * math.sin(E2)) - (E1 - e * math.sin(E1))) % TWO_PI
        dt = (dm + TWO_PI * revs) / math.sqrt(mu / a_f**3)
        v1x, v1y = _conic_velocity(x1, y1, r1, p, a_f, e, nu1, mu)
        v2x, v2y = _conic_velocity(x2, y2, r2, p, a_f, e, nu2, mu)
        cand = (True, v1x, v1y, v2x, v2y, dt, a, e, om)
        if h == 0.0:
            return cand
        # fast family (shorter flight) for y < 1/2, slow family otherwise
        if best_dt < 0.0 or (y < 0.5) == (dt < best_dt):
            best_dt = dt
            out = cand
    return out


@njit(cache=True, error_model="numpy")
def leg_kernel(r_dep, phi_dep, r_arr, phi_arr, t_dep, t_arr, x, mu, out):
    """Evaluate one leg; returns the total delta-v or ``PENALTY``.

    ``phi_dep`` and ``phi_arr`` are the body angles at ``t_dep`` and ``t_arr``.
    ``x`` holds ``(r13, dtheta13, y_a, r23, dtheta23, y_c)``.
    """
    out[:] = 0.0
    r13, d13, ya, r23, d23, yc = x[0], x[1], x[2], x[3], x[4], x[5]
    if not (t_arr > t_dep and r13 > 0.0 and r23 > 0.0 and d13 >= 0.0 and d23 >= 0.0):
        out[O_STATUS] = BAD_PARAMS
        return PENALTY
    p1x, p1y = r_dep * math.cos(phi_dep), r_dep * math.sin(phi_dep)
    p2x, p2y = r_arr * math.cos(phi_arr), r_arr * math.sin(phi_arr)
    a13 = phi_dep + d13
    a23 = phi_arr - d23
    q1x, q1y = r13 * math.cos(a13), r13 * math.sin(a13)
    q2x, q2y = r23 * math.cos(a23), r23 * math.sin(a23)

    ok_a, va1x, va1y, va2x, va2y, dta, _, _, _ = y_arc_kernel(
        p1x, p1y, q1x, q1y, ya, math.floor(d13 / TWO_PI), mu)
    ok_c, vc1x, vc1y, vc2x, vc2y, dtc, _, _, _ = y_arc_kernel(
        q2x, q2y, p2x, p2y, yc, math.floor(d23 / TWO_PI), mu)
    if not (ok_a and ok_c):
        out[O_STATUS] = BAD_PARAMS
        return PENALTY
    t13 = t_dep + dta
    t23 = t_arr - dtc
    out[O_T13] = t13
    out[O_T23] = t23
    tb = t23 - t13
    if not tb > 0.0:
        out[O_STATUS] = NO_INTERIOR_TIME
        return PENALTY

    period = TWO_PI * math.sqrt(r_arr**3 / mu)
    target = int(tb // period)
    best = math.inf
    bvx1 = bvy1 = bvx2 = bvy2 = 0.0
    best_L = 0
    for n in range(max(target - 1, 0), min(target + 1, N_MAX) + 1):
        for branch in (1, -1):
            if n == 0 and branch == -1:
                continue
            st, w1x, w1y, w2x, w2y = lambert_kernel(q1x, q1y, q2x, q2y, tb, n, branch, mu)
            if st != OK:
                continue
            dvb = math.hypot(w1x - va2x, w1y - va2y) + math.hypot(vc1x - w2x, vc1y - w2y)
            if dvb < best:
                best = dvb
                bvx1, bvy1, bvx2, bvy2 = w1x, w1y, w2x, w2y
                best_L = n * branch
    if best == math.inf:
        out[O_STATUS] = NO_LAMBERT
        return PENALTY

    vd = math.sqrt(mu / r_dep)
    va = math.sqrt(mu / r_arr)
    v0x, v0y = -vd * math.sin(phi_dep), vd * math.cos(phi_dep)
    v1x, v1y = -va * math.sin(phi_arr), va * math.cos(phi_arr)
    dva = math.hypot(va1x - v0x, va1y - v0y)
    dvc = math.hypot(v1x - vc2x, v1y - vc2y)

    total = dva + best + dvc
    if not math.isfinite(total):
        out[O_STATUS] = BAD_PARAMS
        return PENALTY
    out[O_STATUS] = LEG_OK
    out[O_DVA] = dva
    out[O_DVB] = best
    out[O_DVC] = dvc
    out[O_L] = best_L
    vals = (p1x, p1y, q1x, q1y, q2x, q2y, p2x, p2y,
            v0x, v0y, va1x, va1y, va2x, va2y, bvx1, bvy1,
            bvx2, bvy2, vc1x, vc1y, vc2x, vc2y, v1x, v1y)
    for i in range(24):
        out[O_P1 + i] = vals[i]
    return total


@njit(cache=True, error_model="numpy", nogil=True)
def leg_batch(r_dep, phi_dep, r_arr, phi_arr, t_dep, t_arr, X, mu):
    """Leg costs for each row of ``X`` (shape ``(n, 6)``)."""
    f = np.empty(X.shape[0])
    buf = np.empty(OUT_SIZE)
    for i in range(X.shape[0]):
        f[i] = leg_kernel(r_dep, phi_dep, r_arr, phi_arr, t_dep, t_arr, X[i], mu, buf)
    return f


# ---------------------------------------------------------------------------
# Python-facing API


@dataclass(frozen=True)
class YArcResult:
    v_dep: np.ndarray
    v_arr: np.ndarray
    dt: float
    a: float
    e: float
    omega: float


def minimum_energy_sma(r_from, r_to) -> float:
    r_from = np.asarray(r_from, float)
    r_to = np.asarray(r_to, float)
    c = float(np.hypot(*(r_to - r_from)))
    return 0.25 * (float(np.hypot(*r_from)) + float(np.hypot(*r_to)) + c)


def y_arc(r_from, r_to, y: float, revs: int = 0, mu: float = MU_EARTH) -> YArcResult:
    """Conic arc between two positions with ``a = a_m / (4 y (1 - y))``.

    ``y < 1/2`` picks the fast member of the pair of conics sharing that
    semi-major axis, ``y > 1/2`` the slow one.
    """
    if not 0.0 < y < 1.0:
        raise ValueError(f"y must lie in (0, 1), got {y}")
    if revs < 0:
        raise ValueError("revs must be nonnegative")
    (x1, y1), (x2, y2) = np.asarray(r_from, float), np.asarray(r_to, float)
    ok, *v, dt, a, e, om = y_arc_kernel(x1, y1, x2, y2, float(y), int(revs), mu)
    if not ok:
        raise ValueError("endpoints must be distinct and not aligned with the focus")
    return YArcResult(np.array(v[:2]), np.array(v[2:]), dt, a, e, om)


@dataclass(frozen=True)
class LegParameters:
    r13: float
    dtheta13: float
    y_a: float
    r23: float
    dtheta23: float
    y_c: float

    def as_array(self) -> np.ndarray:
        return np.array([self.r13, self.dtheta13, self.y_a, self.r23, self.dtheta23, self.y_c])

    @classmethod
    def from_array(cls, x) -> "LegParameters":
        return cls(*(float(v) for v in x))


def leg_bounds(radii, y_min: float = Y_MIN, y_max: float = Y_MAX,
               margin: float = RADIUS_MARGIN) -> np.ndarray:
    """Default ``(6, 2)`` box for :class:`LegParameters` given the body radii."""
    lo, hi = min(radii) - margin, max(radii) + margin
    return np.array([[lo, hi], [0.0, DTHETA_MAX], [y_min, y_max]] * 2)


@dataclass(frozen=True)
class Arc:
    """Ballistic arc starting from ``position``/``velocity`` at ``t_start``."""

    t_start: float
    t_end: float
    position: np.ndarray
    velocity: np.ndarray

    @property
    def state(self) -> StateVector:
        return StateVector(self.position, self.velocity, self.t_start)

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class Impulse:
    epoch: float
    position: np.ndarray
    dv: np.ndarray

    @property
    def magnitude(self) -> float:
        return float(np.hypot(*self.dv))


@dataclass(frozen=True)
class LegEvaluation:
    dv_a: float
    dv_b: float
    dv_c: float
    epochs: tuple[float, float, float, float]  # t_k, t_k+1/3, t_k+2/3, t_k+1
    arcs: tuple[Arc, Arc, Arc]
    impulses: tuple[Impulse, Impulse, Impulse, Impulse]
    lambert_index: int

    @property
    def dv(self) -> float:
        return self.dv_a + self.dv_b + self.dv_c


_MESSAGES = {
    BAD_PARAMS: "invalid leg parameters",
    NO_INTERIOR_TIME: "no time left for the central arc",
    NO_LAMBERT: "no Lambert candidate for the central arc",
}


def _vec(out, i):
    return np.array(out[i:i + 2])


def evaluate_leg(dep_state: StateVector, arr_body: Body, t_dep: float, t_arr: float,
                 params: LegParameters, mu: float = MU_EARTH) -> LegEvaluation:
    """Four-impulse leg from ``dep_state`` (a circular state) to ``arr_body`` at ``t_arr``."""
    out = np.empty(OUT_SIZE)
    phi_dep = math.atan2(dep_state.position[1], dep_state.position[0])
    phi_arr = arr_body.angle(t_arr, mu)
    leg_kernel(dep_state.radius, phi_dep, arr_body.radius, phi_arr, float(t_dep), float(t_arr),
               params.as_array(), mu, out)
    status = int(out[O_STATUS])
    if status != LEG_OK:
        raise InfeasibleLeg(_MESSAGES[status])
    return _leg_from_buffer(out, float(t_dep), float(t_arr))


def _leg_from_buffer(out, t_dep, t_arr) -> LegEvaluation:
    t13, t23 = out[O_T13], out[O_T23]
    p = [_vec(out, i) for i in (O_P1, O_P13, O_P23, O_P2)]
    vm = [_vec(out, i) for i in (O_V0M, O_V13M, O_V23M, O_V1M)]
    vp = [_vec(out, i) for i in (O_V0P, O_V13P, O_V23P, O_V1P)]
    epochs = (t_dep, t13, t23, t_arr)
    arcs = tuple(Arc(epochs[i], epochs[i + 1], p[i], vp[i]) for i in range(3))
    impulses = tuple(Impulse(epochs[i], p[i], vp[i] - vm[i]) for i in range(4))
    return LegEvaluation(out[O_DVA], out[O_DVB], out[O_DVC], epochs, arcs, impulses,
                         int(out[O_L]))


def evaluate_leg_bodies(dep_body: Body, arr_body: Body, t_dep: float, t_arr: float,
                        params: LegParameters, mu: float = MU_EARTH) -> LegEvaluation:
    return evaluate_leg(circular_state(dep_body, t_dep, mu), arr_body, t_dep, t_arr, params, mu)


def leg_cost(dep_body: Body, arr_body: Body, t_dep: float, t_arr: float, x,
             mu: float = MU_EARTH) -> float:
    """Total delta-v of a leg, ``PENALTY`` when infeasible."""
    out = np.empty(OUT_SIZE)
    return leg_kernel(dep_body.radius, dep_body.angle(t_dep, mu), arr_body.radius,
                      arr_body.angle(t_arr, mu), float(t_dep), float(t_arr),
                      np.asarray(x, float), mu, out)
