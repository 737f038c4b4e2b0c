"""Localisation vectors, line-of-sight geometry and blockage labels.

The SBS antenna (and the co-located radar) sits at the Cartesian origin of the
street plane, at height ``H``.  Objects move along x in a fixed y-lane; users
are stationary.  All angles are radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

PLUS_X = 1
MINUS_X = -1


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectLocalisation:
    r: float
    x: float
    y: float
    theta: float
    v: float
    n: int

    def as_list(self) -> list[float]:
        return [self.r, self.x, self.y, self.theta, self.v, float(self.n)]


@dataclass(frozen=True)
class UserLocalisation:
    r: float
    x: float
    y: float
    theta: float

    def as_list(self) -> list[float]:
        return [self.r, self.x, self.y, self.theta]


@dataclass(frozen=True)
class LoSLine:
    anchor: tuple[float, float, float]
    direction: tuple[float, float, float]

    def point(self, eta: float) -> tuple[float, float, float]:
        ax, ay, az = self.anchor
        dx, dy, dz = self.direction
        return (ax + eta * dx, ay + eta * dy, az + eta * dz)


@dataclass(frozen=True)
class BlockageLabel:
    b: int
    T_b: float

    def __post_init__(self):
        if self.b not in (0, 1):
            raise GeometryError(f"blockage bit must be 0 or 1, got {self.b}")
        if self.b == 0 and self.T_b != -1.0:
            raise GeometryError("non-blocked label must carry T_b = -1")
        if self.b == 1 and not self.T_b > 0:
            raise GeometryError(f"blocked label needs T_b > 0, got {self.T_b}")


class Blockage(NamedTuple):
    b: int
    out_of_corridor: bool


def lane_angle(x: float, y: float) -> float:
    """Angle from +x to (x, y); lies in (0, pi) for y > 0."""
    return math.atan2(y, x)


def object_localisation(rho: float, phi: float, H: float, h_o: float,
                        v: float, direction: int) -> ObjectLocalisation:
    """Build the 6-D object descriptor from a radar observation.

    ``rho`` is the slant range to the object's top edge and ``phi`` the azimuth
    measured from the radar boresight (+y).  ``v`` is stored as given, so the
    caller decides between measured radial speed and true street speed.
    """
    dz = H - h_o
    if rho < abs(dz):
        raise GeometryError(
            f"invalid slant range: rho={rho:.6g} m is shorter than |H - h_o|={abs(dz):.6g} m")
    r = math.sqrt(max(rho * rho - dz * dz, 0.0))
    x = r * math.sin(phi)
    y = r * math.cos(phi)
    return ObjectLocalisation(r=r, x=x, y=y, theta=lane_angle(x, y), v=v, n=int(direction))


def object_from_position(x: float, y: float, v: float, direction: int) -> ObjectLocalisation:
    """Ground-truth descriptor straight from scene coordinates."""
    return ObjectLocalisation(r=math.hypot(x, y), x=x, y=y, theta=lane_angle(x, y),
                              v=v, n=int(direction))


def user_localisation(x_u: float, y_u: float) -> UserLocalisation:
    return UserLocalisation(r=math.hypot(x_u, y_u), x=x_u, y=y_u, theta=lane_angle(x_u, y_u))


def los_line(antenna: Sequence[float], user: Sequence[float]) -> LoSLine:
    a = tuple(float(c) for c in antenna)
    u = tuple(float(c) for c in user)
    d = (u[0] - a[0], u[1] - a[1], u[2] - a[2])
    if d == (0.0, 0.0, 0.0):
        raise GeometryError("degenerate line: antenna and user coincide")
    return LoSLine(anchor=a, direction=d)


def intersect_plane(line: LoSLine, y_plane: float) -> tuple[float, float, float]:
    """Intersection of the LoS line with the vertical plane ``y = y_plane``."""
    ax, ay, az = line.anchor
    dx, dy, dz = line.direction
    if dy == 0.0:
        if y_plane == ay:
            raise GeometryError("degenerate intersection: line lies inside the plane")
        raise GeometryError("no intersection: line is parallel to the plane")
    eta = (y_plane - ay) / dy
    return (ax + eta * dx, float(y_plane), az + eta * dz)


def blockage_status(obj: ObjectLocalisation, user: UserLocalisation,
                    h_o: float, z_I: float) -> Blockage:
    """Two-case blocking rule.

    An object blocks when it is tall enough to reach the LoS line at its lane
    (``h_o >= z_I``, boundary included) and it is moving towards the crossing
    point: on the right of the user ray heading -x, or on the left heading +x.
    """
    if not (0.0 < obj.y < user.y):
        return Blockage(0, True)
    if h_o < z_I:
        return Blockage(0, False)
    approaching = ((obj.theta < user.theta and obj.n == MINUS_X)
                   or (obj.theta > user.theta and obj.n == PLUS_X))
    return Blockage(int(approaching), False)


def time_to_block(obj: ObjectLocalisation, x_I: float, b: int) -> float:
    if b == 0:
        return -1.0
    if obj.v == 0:
        raise GeometryError("undefined blockage time: blocking object has zero speed")
    return abs(obj.x - x_I) / abs(obj.v)


def label_from_localisation(obj: ObjectLocalisation, user: UserLocalisation,
                            h_o: float, antenna: Sequence[float],
                            user_pos: Sequence[float]) -> BlockageLabel:
    """Full labelling chain: LoS line, lane intersection, blocking rule, T_b."""
    line = los_line(antenna, user_pos)
    x_I, _, z_I = intersect_plane(line, obj.y)
    b = blockage_status(obj, user, h_o, z_I).b
    T_b = time_to_block(obj, x_I, b)
    if b == 1 and T_b == 0.0:
        # object sits exactly on the line; it is blocking now, not in the future
        return BlockageLabel(0, -1.0)
    return BlockageLabel(b, T_b)


def will_cross(x_o: float, y_o: float, direction: int, h_o: float,
               antenna: Sequence[float], user: Sequence[float]) -> tuple[bool, float]:
    """Antenna-agnostic blocking test used for multi-SBS timelines.

    Returns ``(blocks, x_I)``.  The lane must lie strictly between the antenna
    and user y-coordinates (in either order).
    """
    ay, uy = antenna[1], user[1]
    lo, hi = min(ay, uy), max(ay, uy)
    if not (lo < y_o < hi):
        return False, math.nan
    x_I, _, z_I = intersect_plane(los_line(antenna, user), y_o)
    return bool(h_o >= z_I and (x_I - x_o) * direction > 0), x_I


def blocked_intervals(x0: float, y0: float, h: float, v: float, direction: int,
                      spawn: float, antenna: Sequence[float], user: Sequence[float],
                      length: float) -> tuple[float, float] | None:
    """Absolute time window during which an object occludes the LoS.

    The object's leading edge starts at ``x0``; it trails by ``length`` metres.
    """
    blocks, x_I = will_cross(x0, y0, direction, h, antenna, user)
    if not blocks or v <= 0:
        return None
    t0 = spawn + abs(x_I - x0) / v
    return (t0, t0 + length / v)


def intersect_plane_batch(antenna: np.ndarray, user: np.ndarray, y_plane: np.ndarray):
    """Vectorised closed form for many lanes against one LoS line."""
    antenna = np.asarray(antenna, dtype=float)
    user = np.asarray(user, dtype=float)
    d = user - antenna
    if d[1] == 0:
        raise GeometryError("no intersection: line is parallel to y-planes")
    eta = (np.asarray(y_plane, dtype=float) - antenna[1]) / d[1]
    return antenna[0] + eta * d[0], antenna[2] + eta * d[2]
