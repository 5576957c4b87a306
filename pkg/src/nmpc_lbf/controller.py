"""Per-robot receding-horizon loop: sense, learn the barrier, solve, act."""
from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nmpc
from .kinematics import ControlInput, KinematicsParams
from .lbf import BarrierNet, NonFiniteLoss, TrainConfig, train_incremental
from .nmpc import HorizonSolution, NmpcConfig, SolverStatus
from .sensing import LidarConfig, SamplingConfig, build_dataset, simulate_scan
from .world import Pose, RobotBody, WorldState

log = logging.getLogger(__name__)


class ControllerStatus(str, enum.Enum):
    RUNNING = "Running"
    REACHED = "Reached"
    STOPPED = "Stopped"


@dataclass
class TickRecord:
    tick: int
    time: float
    pose: Pose
    u: ControlInput
    distance_to_goal: float
    solver_status: str          # SolverStatus value, or "NotSolved" on the goal tick
    sqp_iters: int
    train_loss: float           # nan when training was skipped
    min_hhat_horizon: float
    solve_time: float
    train_time: float
    controller_status: str
    objective: float = math.nan
    max_eq_violation: float = math.nan
    max_cbc_violation: float = math.nan
    min_cbc_residual: float = math.nan


def horizon_cbc_residuals(net: BarrierNet, X, gamma: float, margin: float = 0.0) -> np.ndarray:
    """Barrier-condition residual at every horizon step of a state trajectory."""
    h = net.predict(np.asarray(X)[:, :2]) - margin
    return h[1:] - h[:-1] + gamma * h[:-1]


class RobotController:
    """Decentralised NMPC-LBF controller for one robot.

    The controller only ever sees its own pose and its own LiDAR scan of the
    shared world snapshot; it holds no reference to other controllers.
    """

    def __init__(self, robot: RobotBody, goal: Pose, nmpc_config: NmpcConfig,
                 kinematics: KinematicsParams, lidar: LidarConfig,
                 sampling: SamplingConfig, train: TrainConfig,
                 e_ref: float = 0.1, net: BarrierNet | None = None,
                 solver: Callable = nmpc.solve):
        sampling.check_body(robot)
        self.robot = robot
        self.goal = goal
        self.config = nmpc_config
        self.kinematics = kinematics
        self.lidar = lidar
        self.sampling = sampling
        self.train = train
        self.e_ref = e_ref
        self.net = net if net is not None else BarrierNet.from_config(train)
        self.solver = solver
        self.status = ControllerStatus.RUNNING
        self.solution: HorizonSolution | None = None
        self.last_dataset = None
        self.ticks = 0

    @property
    def id(self) -> str:
        return self.robot.id

    def distance_to_goal(self, pose: Pose) -> float:
        return math.hypot(pose.x - self.goal.x, pose.y - self.goal.y)

    def _warm_start(self, pose: Pose):
        if self.solution is None or self.status is ControllerStatus.STOPPED:
            return nmpc.cold_start(pose, self.config.horizon)
        return nmpc.shift_warm_start(self.solution, pose)

    def tick(self, world: WorldState) -> tuple[ControlInput, TickRecord]:
        if self.status is ControllerStatus.REACHED:
            raise RuntimeError(f"robot {self.id} already reached its goal")
        k = self.ticks
        self.ticks += 1
        pose = world.robot_poses[self.id]
        dist = self.distance_to_goal(pose)
        if dist <= self.e_ref:
            self.status = ControllerStatus.REACHED
            u = ControlInput(0.0, 0.0)
            return u, TickRecord(k, world.time, pose, u, dist, "NotSolved", 0, math.nan,
                                 math.nan, 0.0, 0.0, self.status.value)

        t0 = time.perf_counter()
        scan = simulate_scan(self.robot, pose, world, self.lidar)
        data = build_dataset(scan, self.lidar, self.sampling)
        self.last_dataset = data
        try:
            loss = train_incremental(self.net, data).final_loss
        except NonFiniteLoss as exc:
            log.warning("robot %s tick %d: training skipped (%s)", self.id, k, exc)
            loss = math.nan
        train_time = time.perf_counter() - t0

        warm = self._warm_start(pose)
        problem = nmpc.build_problem(pose, self.goal, self.net, self.config,
                                     self.kinematics, warm)
        t1 = time.perf_counter()
        sol = self.solver(problem, warm)
        solve_time = time.perf_counter() - t1

        if sol.status is SolverStatus.INFEASIBLE:
            self.status = ControllerStatus.STOPPED
            self.solution = None
            u = ControlInput(0.0, 0.0)
        else:
            self.status = ControllerStatus.RUNNING
            self.solution = sol
            u0 = np.clip(sol.U_star[0], self.config.u_min, self.config.u_max)
            u = ControlInput(float(u0[0]), float(u0[1]))

        h = self.net.predict(sol.X_star[:, :2])
        resid = horizon_cbc_residuals(self.net, sol.X_star, self.config.gamma,
                                      self.config.barrier_margin)
        rec = TickRecord(
            tick=k, time=world.time, pose=pose, u=u, distance_to_goal=dist,
            solver_status=sol.status.value, sqp_iters=sol.iterations, train_loss=loss,
            min_hhat_horizon=float(h.min()), solve_time=solve_time, train_time=train_time,
            controller_status=self.status.value, objective=sol.objective,
            max_eq_violation=sol.max_eq_violation, max_cbc_violation=sol.max_cbc_violation,
            min_cbc_residual=float(resid.min()))
        return u, rec


def run_to_goal(ctrl: RobotController, world: WorldState,
                plant: Callable[[WorldState, str, ControlInput], WorldState],
                max_ticks: int) -> list[TickRecord]:
    """Tick one controller against ``plant`` until it reaches the goal or times out.

    ``plant(world, robot_id, u)`` returns the next world snapshot.
    """
    if max_ticks < 1:
        raise ValueError("max_ticks must be >= 1")
    records = []
    for _ in range(max_ticks):
        u, rec = ctrl.tick(world)
        records.append(rec)
        if ctrl.status is ControllerStatus.REACHED:
            break
        world = plant(world, ctrl.id, u)
    return records
