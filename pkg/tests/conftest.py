import numpy as np
import pytest

from nmpc_lbf.kinematics import KinematicsParams
from nmpc_lbf.lbf import BarrierNet, TrainConfig
from nmpc_lbf.nmpc import NmpcConfig
from nmpc_lbf.world import Obstacle, Pose, Position2, Static, WorldState


def single_obstacle_world(robot_pose=Pose(0.0, 0.0, 0.0), center=(1.65, 0.0), radius=0.15,
                          robot_radius=0.105):
    return WorldState(0.0, {"r1": robot_pose}, {"o1": Position2(*center)},
                      {"r1": robot_radius, "o1": radius})


@pytest.fixture
def kin():
    return KinematicsParams()


@pytest.fixture
def seeded_net():
    return BarrierNet.from_config(TrainConfig(seed=3))


@pytest.fixture
def static_obstacle():
    return Obstacle("o1", 0.15, Static(Position2(1.65, 0.0)))


def random_net(seed, scale=1.0):
    """Seeded net with nonzero biases so every layer matters."""
    rng = np.random.default_rng(seed)
    net = BarrierNet(random_state=seed).initialize()
    coefs = [W * scale for W in net.coefs_]
    intercepts = [rng.normal(0, 0.3, b.shape) for b in net.intercepts_]
    return BarrierNet.from_parameters(coefs, intercepts)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][3:])):
            terminalreporter.write_line(line)
