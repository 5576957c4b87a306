"""Modified discrete-time unicycle.

The tracked point is the body center, but the angular rate enters the
translational dynamics through the offset ``a``::

    x+ = x + Ts * (cos(th) v - a sin(th) w)
    y+ = y + Ts * (sin(th) v + a cos(th) w)
    th+ = th + Ts * w

so the position has relative degree one with respect to both inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .world import Pose


@dataclass(frozen=True)
class ControlInput:
    v: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega], dtype=float)


@dataclass(frozen=True)
class KinematicsParams:
    a: float = 0.1
    Ts: float = 0.05

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("offset a must be > 0")
        if not self.Ts > 0:
            raise ValueError("sampling time Ts must be > 0")


def position_input_matrix(theta: float, a: float) -> np.ndarray:
    """2x2 block mapping (v, omega) to the position rate. Its determinant is ``a``."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -a * s], [s, a * c]])


def f(x, u, a: float) -> np.ndarray:
    """State rate for arrays ``x`` (..., 3) and ``u`` (..., 2)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    c, s = np.cos(x[..., 2]), np.sin(x[..., 2])
    v, w = u[..., 0], u[..., 1]
    return np.stack([c * v - a * s * w, s * v + a * c * w, w], axis=-1)


def step_array(x, u, p: KinematicsParams) -> np.ndarray:
    """One Euler step on raw arrays; theta is NOT wrapped."""
    x = np.asarray(x, dtype=float)
    return x + f(x, u, p.a) * p.Ts


def jacobians(x, u, p: KinematicsParams):
    """Jacobians of ``step_array`` w.r.t. state and input.

    Accepts stacked inputs (N, 3), (N, 2) and returns (N, 3, 3), (N, 3, 2).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    n = x.shape[0]
    c, s = np.cos(x[:, 2]), np.sin(x[:, 2])
    v, w = u[:, 0], u[:, 1]
    A = np.tile(np.eye(3), (n, 1, 1))
    A[:, 0, 2] = p.Ts * (-s * v - p.a * c * w)
    A[:, 1, 2] = p.Ts * (c * v - p.a * s * w)
    B = np.zeros((n, 3, 2))
    B[:, 0, 0] = p.Ts * c
    B[:, 0, 1] = -p.Ts * p.a * s
    B[:, 1, 0] = p.Ts * s
    B[:, 1, 1] = p.Ts * p.a * c
    B[:, 2, 1] = p.Ts
    return A, B


def step(x: Pose, u: ControlInput, p: KinematicsParams) -> Pose:
    """Advance a pose one sampling period; the returned heading is wrapped."""
    nxt = step_array(x.as_array(), u.as_array(), p)
    return Pose.from_array(nxt)


def rollout(x0: Pose, u_seq: Sequence[ControlInput], p: KinematicsParams) -> list[Pose]:
    if len(u_seq) < 1:
        raise ValueError("rollout needs at least one input")
    poses = [x0]
    for u in u_seq:
        poses.append(step(poses[-1], u, p))
    return poses


def rollout_array(x0, U, p: KinematicsParams) -> np.ndarray:
    """Unwrapped rollout on arrays: ``U`` (N, 2) -> states (N+1, 3)."""
    U = np.asarray(U, dtype=float)
    X = np.empty((U.shape[0] + 1, 3))
    X[0] = x0
    for k in range(U.shape[0]):
        X[k + 1] = step_array(X[k], U[k], p)
    return X
