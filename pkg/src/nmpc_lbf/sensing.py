"""Simulated LiDAR and per-tick barrier training data.

Every ray is sampled at ``S`` evenly spaced ranges ``d_max * s / S`` and each
sample is labelled with its distance from the measured return, minus the
half-width ``delta`` of the unsafe band. Samples near a return therefore carry
negative labels and everything else positive ones.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .world import Pose, Position2, RobotBody, WorldState, cast_rays


@dataclass(frozen=True)
class LidarConfig:
    rays: int = 36
    d_max: float = 3.5

    def __post_init__(self):
        if self.rays < 1:
            raise ValueError("lidar needs at least one ray")
        if not self.d_max > 0:
            raise ValueError("d_max must be > 0")

    @property
    def angles(self) -> np.ndarray:
        """Ray angles in the robot frame, evenly spaced over [0, 2*pi)."""
        return 2.0 * np.pi * np.arange(self.rays) / self.rays


@dataclass(frozen=True)
class SamplingConfig:
    samples_per_ray: int = 50
    delta: float = 0.2

    def __post_init__(self):
        if self.samples_per_ray < 1:
            raise ValueError("samples_per_ray must be >= 1")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")

    def check_body(self, body: RobotBody) -> None:
        if not self.delta > body.radius:
            raise ValueError(
                f"delta={self.delta} must exceed robot {body.id} radius {body.radius}")


@dataclass(frozen=True)
class Scan:
    distances: np.ndarray
    pose_at_scan: Pose
    time: float = 0.0


@dataclass
class Dataset:
    inputs: np.ndarray   # (N, 2) global positions
    labels: np.ndarray   # (N,)
    ray_index: np.ndarray = field(default=None, repr=False)
    sample_index: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return self.labels.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "h_true"])
            for (x, y), h in zip(self.inputs, self.labels):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(h))])


def simulate_scan(robot: RobotBody | str, pose: Pose, world: WorldState,
                  lidar: LidarConfig, noise_std: float = 0.0,
                  rng: np.random.Generator | None = None) -> Scan:
    """Ray-cast every LiDAR beam against all bodies except the scanning robot.

    ``noise_std`` adds Gaussian range noise (clipped to (0, d_max]); it is off
    by default and requires ``rng`` when enabled.
    """
    rid = robot.id if isinstance(robot, RobotBody) else robot
    _, centers, radii = world.circles(exclude=rid)
    glob = pose.theta + lidar.angles
    dirs = np.stack([np.cos(glob), np.sin(glob)], axis=1)
    d = cast_rays((pose.x, pose.y), dirs, centers, radii, lidar.d_max)
    if noise_std > 0.0:
        if rng is None:
            raise ValueError("range noise needs a seeded rng")
        d = np.clip(d + rng.normal(0.0, noise_std, d.shape), 1e-9, lidar.d_max)
    return Scan(distances=d, pose_at_scan=pose, time=world.time)


def sample_distances(lidar: LidarConfig, cfg: SamplingConfig) -> np.ndarray:
    s = np.arange(1, cfg.samples_per_ray + 1)
    return lidar.d_max * s / cfg.samples_per_ray


def _sample_array(pose: Pose, lidar: LidarConfig, cfg: SamplingConfig) -> np.ndarray:
    d = sample_distances(lidar, cfg)
    alpha = lidar.angles
    local = np.stack([np.cos(alpha)[:, None] * d[None, :],
                      np.sin(alpha)[:, None] * d[None, :]], axis=-1)   # (R, S, 2)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    rot = np.array([[c, -s], [s, c]])
    return np.array([pose.x, pose.y]) + local @ rot.T


def sample_positions(scan: Scan, lidar: LidarConfig, cfg: SamplingConfig):
    """List of ``(r, s, Position2)`` with 1-based sample index ``s``, row-major by ray."""
    pts = _sample_array(scan.pose_at_scan, lidar, cfg)
    return [(r, s + 1, Position2(float(pts[r, s, 0]), float(pts[r, s, 1])))
            for r in range(lidar.rays) for s in range(cfg.samples_per_ray)]


def label(d_rs, d_lidar, delta):
    """Ground-truth barrier value of a sample at range ``d_rs`` on a ray reading ``d_lidar``."""
    return np.abs(np.asarray(d_rs) - np.asarray(d_lidar)) - delta


def build_dataset(scan: Scan, lidar: LidarConfig, cfg: SamplingConfig) -> Dataset:
    if np.shape(scan.distances) != (lidar.rays,):
        raise ValueError(f"scan has {np.size(scan.distances)} ranges, lidar has {lidar.rays} rays")
    pts = _sample_array(scan.pose_at_scan, lidar, cfg)
    d = sample_distances(lidar, cfg)
    h = label(d[None, :], np.asarray(scan.distances)[:, None], cfg.delta)
    R, S = lidar.rays, cfg.samples_per_ray
    rr, ss = np.meshgrid(np.arange(R), np.arange(1, S + 1), indexing="ij")
    return Dataset(inputs=pts.reshape(R * S, 2), labels=h.reshape(R * S),
                   ray_index=rr.ravel(), sample_index=ss.ravel())
