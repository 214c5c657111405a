"""Two-body primitives for coplanar circular and elliptic orbits.

Everything here is planar: positions and velocities are 2-vectors in the
common orbital plane, angles are in radians and measured counter-clockwise
(prograde).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MU_EARTH = 398600.4418  # km^3/s^2
TWO_PI = 2.0 * math.pi
DAY = 86400.0


@dataclass(frozen=True)
class Constants:
    mu: float = MU_EARTH

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"gravitational parameter must be positive, got {self.mu}")


@dataclass(frozen=True)
class Body:
    """A body on a circular orbit. ``id == 0`` is the chaser."""

    id: int
    radius: float
    theta0: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"body {self.id}: radius must be positive, got {self.radius}")
        object.__setattr__(self, "theta0", float(self.theta0) % TWO_PI)

    @classmethod
    def from_degrees(cls, id: int, radius: float, theta0_deg: float) -> "Body":
        return cls(int(id), float(radius), math.radians(theta0_deg))

    def mean_motion(self, mu: float = MU_EARTH) -> float:
        return math.sqrt(mu / self.radius**3)

    def period(self, mu: float = MU_EARTH) -> float:
        return TWO_PI / self.mean_motion(mu)

    def angle(self, t: float, mu: float = MU_EARTH) -> float:
        """Right ascension at time ``t`` (not wrapped)."""
        return self.theta0 + self.mean_motion(mu) * t


@dataclass(frozen=True)
class StateVector:
    position: np.ndarray
    velocity: np.ndarray
    epoch: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(2)
        vel = np.asarray(self.velocity, dtype=float).reshape(2)
        if not np.hypot(*pos) > 0:
            raise ValueError("position must be nonzero")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", vel)

    @property
    def radius(self) -> float:
        return float(np.hypot(*self.position))


def circular_state(body: Body, t: float, mu: float = MU_EARTH) -> StateVector:
    if t < 0:
        raise ValueError("t must be nonnegative")
    theta = body.angle(t, mu)
    c, s = math.cos(theta), math.sin(theta)
    v = math.sqrt(mu / body.radius)
    return StateVector((body.radius * c, body.radius * s), (-v * s, v * c), t)


def specific_energy(state: StateVector, mu: float = MU_EARTH) -> float:
    return 0.5 * float(state.velocity @ state.velocity) - mu / state.radius


def angular_momentum(state: StateVector) -> float:
    (x, y), (vx, vy) = state.position, state.velocity
    return x * vy - y * vx


def solve_kepler(mean_anomaly: float, e: float, tol: float = 1e-12, maxiter: int = 50) -> float:
    """Eccentric anomaly for an elliptic orbit, Newton with a bisection safeguard."""
    m = mean_anomaly % TWO_PI
    lo, hi = 0.0, TWO_PI  # E - e sin E is increasing, so the root is bracketed here
    E = m + e * math.sin(m) if e < 0.8 else math.pi
    for _ in range(maxiter):
        f = E - e * math.sin(E) - m
        if f == 0.0:
            return E
        if f > 0:
            hi = E
        else:
            lo = E
        E_new = E - f / (1.0 - e * math.cos(E))
        if not lo < E_new < hi:
            # Newton left the bracket: bisect and keep iterating
            E = 0.5 * (lo + hi)
            continue
        if abs(E_new - E) < tol:
            return E_new
        E = E_new
    return E


def elements(state: StateVector, mu: float = MU_EARTH) -> tuple[float, float, float, float]:
    """(a, e, argument of pericenter, true anomaly) of a bound planar state."""
    energy = specific_energy(state, mu)
    if energy >= 0:
        raise ValueError("state is not elliptic (specific energy >= 0)")
    r = state.radius
    h = angular_momentum(state)
    a = -mu / (2.0 * energy)
    (x, y), (vx, vy) = state.position, state.velocity
    # eccentricity vector in the plane: (v x h)/mu - r_hat
    ex = vy * h / mu - x / r
    ey = -vx * h / mu - y / r
    e = math.hypot(ex, ey)
    omega = math.atan2(ey, ex) if e > 0 else 0.0
    nu = math.atan2(y, x) - omega
    if h < 0:
        raise ValueError("retrograde states are not supported")
    return a, e, omega, nu


def propagate_kepler(state: StateVector, dt: float, mu: float = MU_EARTH) -> StateVector:
    """Conic propagation of a bound state by ``dt`` seconds.

    Uses the f and g functions in terms of the change in eccentric anomaly,
    so circular and near-circular states need no special treatment.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return StateVector(state.position.copy(), state.velocity.copy(), state.epoch)
    energy = specific_energy(state, mu)
    if energy >= 0:
        raise ValueError("state is not elliptic (specific energy >= 0)")
    r0v, v0v = state.position, state.velocity
    r0 = state.radius
    a = -mu / (2.0 * energy)
    n = math.sqrt(mu / a**3)
    sigma0 = float(r0v @ v0v) / math.sqrt(mu)
    # e cos E0, e sin E0
    ecE0 = 1.0 - r0 / a
    esE0 = sigma0 / math.sqrt(a)
    e = math.hypot(ecE0, esE0)
    E0 = math.atan2(esE0, ecE0) if e > 0 else 0.0
    m = E0 - esE0 + n * dt
    k = math.floor(m / TWO_PI)
    m_red = m - TWO_PI * k
    if m_red >= TWO_PI:  # rounding can land exactly on the next turn
        m_red -= TWO_PI
        k += 1
    dE = solve_kepler(m_red, e) + TWO_PI * k - E0
    f = 1.0 - a / r0 * (1.0 - math.cos(dE))
    g = dt + math.sqrt(a**3 / mu) * (math.sin(dE) - dE)
    rv = f * r0v + g * v0v
    r = float(np.hypot(*rv))
    fdot = -math.sqrt(mu * a) / (r * r0) * math.sin(dE)
    gdot = 1.0 - a / r * (1.0 - math.cos(dE))
    vv = fdot * r0v + gdot * v0v
    return StateVector(rv, vv, state.epoch + dt)


def hohmann(r1, r2, mu: float = MU_EARTH):
    """Delta-v and duration of the Hohmann transfer between circular radii.

    Broadcasts over array arguments.
    """
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    a = 0.5 * (r1 + r2)
    v1 = np.sqrt(mu / r1)
    v2 = np.sqrt(mu / r2)
    vp = np.sqrt(mu * (2.0 / r1 - 1.0 / a))
    va = np.sqrt(mu * (2.0 / r2 - 1.0 / a))
    dv = np.abs(vp - v1) + np.abs(v2 - va)
    duration = np.pi * np.sqrt(a**3 / mu)
    if dv.ndim == 0:
        return float(dv), float(duration)
    return dv, duration
