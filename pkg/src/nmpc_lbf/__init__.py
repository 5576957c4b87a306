"""Decentralised NMPC with a learned barrier function for LiDAR-equipped robots."""
from .kinematics import ControlInput, KinematicsParams
from .lbf import BarrierNet, TrainConfig
from .nmpc import NmpcConfig, SolverStatus
from .controller import ControllerStatus, RobotController
from .simulator import Scenario, load_scenario, run, summarize
from .world import Pose, Position2

__all__ = [
    "BarrierNet", "ControlInput", "ControllerStatus", "KinematicsParams", "NmpcConfig",
    "Pose", "Position2", "RobotController", "Scenario", "SolverStatus", "TrainConfig",
    "load_scenario", "run", "summarize",
]
__version__ = "0.1.0"
