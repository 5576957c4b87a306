"""2D environment: circular obstacles and robot bodies, ray casting, clearance."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(theta, 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w


@dataclass(frozen=True)
class Position2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite position ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class Pose:
    """Robot pose; theta is stored wrapped to (-pi, pi]."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pose ({self.x}, {self.y}, {self.theta})")
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def position(self) -> Position2:
        return Position2(self.x, self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Pose":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class Static:
    center: Position2


@dataclass(frozen=True)
class LinearPath:
    start: Position2
    velocity: Position2  # m/s


@dataclass(frozen=True)
class WaypointLoop:
    points: tuple
    speed: float

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValueError("WaypointLoop needs at least 2 points")
        if not self.speed >= 0:
            raise ValueError("WaypointLoop speed must be >= 0")
        object.__setattr__(self, "points", tuple(self.points))

    @property
    def perimeter(self) -> float:
        pts = self.points + (self.points[0],)
        return sum(math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(pts[:-1], pts[1:]))


Motion = Union[Static, LinearPath, WaypointLoop]


@dataclass(frozen=True)
class Obstacle:
    id: str
    radius: float
    motion: Motion

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"obstacle {self.id}: radius must be > 0")


@dataclass(frozen=True)
class RobotBody:
    id: str
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"robot {self.id}: radius must be > 0")


@dataclass(frozen=True)
class WorldState:
    """Immutable snapshot of every body in the world at one instant.

    ``radii`` maps every robot and obstacle id to its circle radius.
    """

    time: float
    robot_poses: Mapping[str, Pose]
    obstacle_centers: Mapping[str, Position2]
    radii: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        clash = set(self.robot_poses) & set(self.obstacle_centers)
        if clash:
            raise ValueError(f"duplicate body ids: {sorted(clash)}")

    def circles(self, exclude: str | None = None):
        """Return ``(ids, centers (M, 2), radii (M,))`` of all bodies except ``exclude``."""
        ids, centers, radii = [], [], []
        for rid, pose in self.robot_poses.items():
            if rid != exclude:
                ids.append(rid)
                centers.append((pose.x, pose.y))
                radii.append(self.radii[rid])
        for oid, c in self.obstacle_centers.items():
            if oid != exclude:
                ids.append(oid)
                centers.append((c.x, c.y))
                radii.append(self.radii[oid])
        return ids, np.asarray(centers, dtype=float).reshape(-1, 2), np.asarray(radii, dtype=float)


def obstacle_center_at(obstacle: Obstacle | Motion, t: float) -> Position2:
    motion = obstacle.motion if isinstance(obstacle, Obstacle) else obstacle
    if isinstance(motion, Static):
        return motion.center
    if isinstance(motion, LinearPath):
        return Position2(motion.start.x + motion.velocity.x * t,
                         motion.start.y + motion.velocity.y * t)
    if isinstance(motion, WaypointLoop):
        pts = motion.points
        perimeter = motion.perimeter
        if perimeter == 0.0 or motion.speed == 0.0:
            return pts[0]
        s = math.fmod(motion.speed * t, perimeter)
        for a, b in zip(pts, pts[1:] + (pts[0],)):
            seg = math.hypot(b.x - a.x, b.y - a.y)
            if s <= seg and seg > 0.0:
                f = s / seg
                return Position2(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y))
            s -= seg
        return pts[0]
    raise TypeError(f"unknown motion {motion!r}")


def cast_rays(origin, directions, centers, radii, d_max: float) -> np.ndarray:
    """Vectorised exact ray-circle intersection.

    ``directions`` is (R, 2) of unit vectors; returns (R,) distances in [0, d_max].
    """
    origin = np.asarray(origin, dtype=float)
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    out = np.full(directions.shape[0], float(d_max))
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if centers.shape[0] == 0:
        return out
    radii = np.asarray(radii, dtype=float)
    oc = origin[None, :] - centers                      # (M, 2)
    b = directions @ oc.T                               # (R, M)
    cc = np.einsum("ij,ij->i", oc, oc) - radii ** 2     # (M,)
    disc = b * b - cc[None, :]
    hit = disc >= 0.0
    root = np.sqrt(np.where(hit, disc, 0.0))
    t1 = -b - root
    t2 = -b + root
    t = np.where(t1 >= 0.0, t1, t2)
    t = np.where(hit & (t >= 0.0), t, np.inf)
    return np.minimum(out, t.min(axis=1))


def cast_ray(origin: Position2, direction, circles: Sequence, d_max: float) -> float:
    """Distance along one ray to the nearest circle boundary, or ``d_max``.

    ``circles`` is a sequence of ``(center, radius)`` pairs, centers as Position2
    or 2-sequences.
    """
    centers = [(c.x, c.y) if isinstance(c, Position2) else tuple(c) for c, _ in circles]
    radii = [r for _, r in circles]
    o = origin.as_array() if isinstance(origin, Position2) else origin
    return float(cast_rays(o, np.asarray(direction, dtype=float)[None, :], centers, radii, d_max)[0])


def pairwise_clearances(state: WorldState) -> dict:
    """Clearance (center distance minus radii) for every robot-robot and robot-obstacle pair."""
    out = {}
    robots = list(state.robot_poses.items())
    for i, (rid, p) in enumerate(robots):
        for qid, q in robots[i + 1:]:
            out[(rid, qid)] = math.hypot(p.x - q.x, p.y - q.y) - state.radii[rid] - state.radii[qid]
        for oid, c in state.obstacle_centers.items():
            out[(rid, oid)] = math.hypot(p.x - c.x, p.y - c.y) - state.radii[rid] - state.radii[oid]
    return out


def min_clearance(state: WorldState) -> float:
    """Smallest pairwise clearance; ``inf`` when there are no pairs."""
    if not state.robot_poses:
        raise ValueError("min_clearance needs at least one robot")
    return min(pairwise_clearances(state).values(), default=math.inf)
