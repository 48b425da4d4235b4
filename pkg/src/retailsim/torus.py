"""Store dynamics on the 2-torus.

The floor plan (in units of one fundamental-domain side) wraps onto
S^1 x S^1; linear flows on the torus model straight-line aisle movement, and
the rotation number of a circle map separates recurrent (rational) from
dense (irrational) orbits.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels

TWO_PI = 2.0 * math.pi


class OrbitKind(str, enum.Enum):
    RECURRENT = "recurrent"
    DENSE = "dense"


@dataclass(frozen=True)
class TorusGeometry:
    R: float
    r: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.R) and math.isfinite(self.r)):
            raise ValueError("torus radii must be finite")
        if not self.R > self.r > 0:
            raise ValueError(f"need R > r > 0, got R={self.R}, r={self.r}")


@dataclass(frozen=True)
class TorusPoint:
    theta: float
    phi: float


@dataclass(frozen=True)
class TorusFlow:
    """Straight line theta = x0 + lam*t, phi = y0 + mu*t (radians, seconds)."""

    x0: float
    y0: float
    lam: float
    mu: float

    def __post_init__(self) -> None:
        if self.lam == 0 and self.mu == 0:
            raise ValueError("flow direction (lam, mu) must be non-zero")

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.lam, self.mu], dtype=np.float64)


@dataclass(frozen=True)
class RotationNumber:
    alpha: float
    rational_approx: tuple[int, int] | None
    classification: OrbitKind

    @property
    def period(self) -> int | None:
        return None if self.rational_approx is None else self.rational_approx[1]


def _reduce_angle(a: float) -> float:
    a = a % TWO_PI
    return 0.0 if a >= TWO_PI else a


def wrap(x: float, y: float) -> TorusPoint:
    """Project a plane point onto the torus: (x, y) -> (2*pi*x, 2*pi*y) mod 2*pi."""
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"non-finite plane point ({x}, {y})")
    # reduce mod 1 first so integer lattice points land exactly on 0
    return TorusPoint(_reduce_angle(TWO_PI * (x % 1.0)), _reduce_angle(TWO_PI * (y % 1.0)))


def embed(g: TorusGeometry, p: TorusPoint) -> tuple[float, float, float]:
    ring = g.R + g.r * math.cos(p.theta)
    return (ring * math.cos(p.phi), ring * math.sin(p.phi), g.r * math.sin(p.theta))


def flow_point(f: TorusFlow, t: float) -> TorusPoint:
    return TorusPoint(_reduce_angle(f.x0 + f.lam * t), _reduce_angle(f.y0 + f.mu * t))


def flow_position(g: TorusGeometry, f: TorusFlow, t: float) -> tuple[float, float, float]:
    if not math.isfinite(t):
        raise ValueError("time must be finite")
    return embed(g, flow_point(f, t))


def torus_residual(g: TorusGeometry, xyz) -> float:
    """(sqrt(x^2 + y^2) - R)^2 + z^2 - r^2; zero on the surface."""
    x, y, z = xyz
    return (math.hypot(x, y) - g.R) ** 2 + z * z - g.r * g.r


def convergents(x: float, max_den: int):
    """Continued-fraction convergents p/q of x with q <= max_den."""
    a = math.floor(x)
    p_prev, q_prev, p, q = 1, 0, a, 1
    frac = x - a
    yield p, q
    while frac > 0:
        x = 1.0 / frac
        a = math.floor(x)
        frac = x - a
        p_prev, q_prev, p, q = p, q, a * p + p_prev, a * q + q_prev
        if q > max_den:
            return
        yield p, q


def denominator_bound(tol: float) -> int:
    """Largest period the rationality test will accept for a given tolerance.

    Periods up to tol**-0.25 keep the chance of accepting an irrational
    number near sqrt(tol); the golden mean stays dense at any tolerance.
    """
    return max(1, math.ceil(tol ** -0.25))


def _check_lift(circle_map: Callable[[float], float], samples: int = 64) -> None:
    xs = [k / samples for k in range(samples + 1)]
    ys = [circle_map(x) for x in xs]
    for y0, y1 in zip(ys, ys[1:]):
        if y1 < y0:
            raise ValueError("circle map lift is not monotone")
    for x, y in zip(xs[:8], ys[:8]):
        shifted = circle_map(x + 1.0)
        if not math.isclose(shifted, y + 1.0, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError("circle map lift does not commute with +1")


def rotation_number(
    circle_map: Callable[[float], float],
    x_seed: float = 0.0,
    n_iter: int = 100_000,
    tol: float = 1e-6,
) -> RotationNumber:
    """Estimate the rotation number of a circle homeomorphism from its lift.

    ``alpha = (f^n(x) - x) / n mod 1`` at ``n = n_iter``; alpha is called
    rational (recurrent orbit, period q) when a continued-fraction convergent
    p/q with ``q <= denominator_bound(tol)`` lies within ``tol``.
    """
    if n_iter < 100:
        raise ValueError("n_iter must be at least 100")
    if not tol > 0:
        raise ValueError("tol must be positive")
    _check_lift(circle_map)
    x = float(x_seed)
    for _ in range(n_iter):
        x = circle_map(x)
    alpha = ((x - x_seed) / n_iter) % 1.0
    if alpha >= 1.0:
        alpha = 0.0

    approx = None
    for p, q in convergents(alpha, denominator_bound(tol)):
        if abs(alpha - p / q) <= tol:
            # alpha just below 1 converges to 1/1, the same rotation as 0/1
            approx = (p % q, q)
            break
    kind = OrbitKind.RECURRENT if approx is not None else OrbitKind.DENSE
    return RotationNumber(alpha, approx, kind)


def classify_orbit(rn: RotationNumber) -> OrbitKind:
    return OrbitKind.RECURRENT if rn.rational_approx is not None else OrbitKind.DENSE


def rigid_rotation(c: float) -> Callable[[float], float]:
    return lambda x: x + c


@dataclass(frozen=True)
class Intersection:
    start: float
    end: float
    closest: float
    point: TorusPoint
    distance: float


@dataclass(frozen=True)
class IntersectionReport:
    count: int
    events: tuple[Intersection, ...]


def count_intersections(
    g: TorusGeometry,
    a: TorusFlow,
    b: TorusFlow,
    t0: float,
    t1: float,
    dt: float,
    radius: float,
) -> IntersectionReport:
    """Count times two flows come within ``radius`` in the 3-D embedding.

    Both flows are sampled at t0, t0 + dt, ... <= t1; consecutive samples
    within range merge into one event. Each event carries its time span and
    the closest approach (time, point of flow ``a``, distance).
    """
    if not t0 < t1:
        raise ValueError("need t0 < t1")
    if not dt > 0 or not radius > 0:
        raise ValueError("dt and radius must be positive")
    if t1 - t0 < dt:
        raise ValueError("window shorter than one sampling step")
    n = int(math.floor((t1 - t0) / dt * (1 + 1e-12))) + 1
    dist = kernels.torus_gap(g.R, g.r, a.as_array(), b.as_array(), float(t0), float(dt), n)
    starts, ends, argmins = kernels.hit_runs(dist, float(radius))
    events = []
    for s, e, k in zip(starts.tolist(), ends.tolist(), argmins.tolist()):
        tk = t0 + dt * k
        events.append(
            Intersection(t0 + dt * s, t0 + dt * e, tk, flow_point(a, tk), float(dist[k]))
        )
    return IntersectionReport(len(events), tuple(events))
