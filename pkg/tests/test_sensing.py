import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmpc_lbf.sensing import (LidarConfig, SamplingConfig, build_dataset, label,
                              sample_distances, sample_positions, simulate_scan)
from nmpc_lbf.world import Pose, Position2, RobotBody, WorldState

from conftest import single_obstacle_world

LIDAR, SAMP = LidarConfig(), SamplingConfig()


def test_scan_of_single_obstacle():
    scan = simulate_scan("r1", Pose(0, 0, 0), single_obstacle_world(), LIDAR)
    assert scan.distances.shape == (36,)
    assert scan.distances[0] == pytest.approx(1.5)
    assert scan.distances[18] == LIDAR.d_max


def test_scan_rotates_with_heading():
    scan = simulate_scan("r1", Pose(0, 0, math.pi / 2), single_obstacle_world(), LIDAR)
    assert scan.distances[27] == pytest.approx(1.5)   # ray at -pi/2 in the body frame


def test_scan_ignores_self_but_sees_other_robots():
    w = WorldState(0.0, {"r1": Pose(0, 0), "r2": Pose(1, 0)}, {}, {"r1": 0.105, "r2": 0.105})
    d = simulate_scan(RobotBody("r1", 0.105), Pose(0, 0), w, LIDAR).distances
    assert d[0] == pytest.approx(0.895)
    assert np.all(d[1:5] > 0.895)


def test_noise_requires_rng():
    with pytest.raises(ValueError):
        simulate_scan("r1", Pose(0, 0), single_obstacle_world(), LIDAR, noise_std=0.01)


def test_sample_grid():
    d = sample_distances(LIDAR, SAMP)
    assert d[0] == pytest.approx(0.07) and d[-1] == pytest.approx(3.5)
    scan = simulate_scan("r1", Pose(1, 2, 0), single_obstacle_world(Pose(1, 2, 0)), LIDAR)
    pts = sample_positions(scan, LIDAR, SAMP)
    assert len(pts) == 36 * 50
    r, s, p = pts[0]
    assert (r, s) == (0, 1) and (p.x, p.y) == pytest.approx((1.07, 2.0))
    r, s, p = pts[50]
    assert (r, s) == (1, 1)


def test_labels_v_shape():
    assert label(1.5, 1.5, 0.2) == pytest.approx(-0.2)
    assert label(1.0, 1.5, 0.2) == pytest.approx(0.3)
    assert label(2.0, 1.5, 0.2) == pytest.approx(0.3)
    assert label(1.4, 1.5, 0.2) < 0


def test_dataset_row_order_and_labels():
    scan = simulate_scan("r1", Pose(0, 0, 0), single_obstacle_world(), LIDAR)
    data = build_dataset(scan, LIDAR, SAMP)
    assert len(data) == 1800 and data.inputs.shape == (1800, 2)
    assert list(data.ray_index[:51]) == [0] * 50 + [1]
    assert list(data.sample_index[:3]) == [1, 2, 3]
    i = 21 - 1   # ray 0, sample 21 at 1.47 m
    assert data.labels[i] == pytest.approx(abs(1.47 - 1.5) - 0.2)
    # a free ray labels everything relative to d_max
    j = 18 * 50 + 49
    assert data.labels[j] == pytest.approx(-0.2)


def test_dataset_csv(tmp_path):
    lidar = LidarConfig(rays=4)
    scan = simulate_scan("r1", Pose(0, 0, 0), single_obstacle_world(), lidar)
    data = build_dataset(scan, lidar, SamplingConfig(samples_per_ray=3))
    p = tmp_path / "d.csv"
    data.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "x,y,h_true" and len(lines) == 13


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-3, 3))
@settings(max_examples=30)
def test_hit_samples_are_unsafe(x, y, th):
    """Any sample within delta of a return carries a negative label."""
    w = single_obstacle_world(Pose(x, y, th), center=(3.0, 3.0), radius=0.3)
    scan = simulate_scan("r1", Pose(x, y, th), w, LIDAR)
    data = build_dataset(scan, LIDAR, SAMP)
    d_rs = sample_distances(LIDAR, SAMP)[data.sample_index - 1]
    near = np.abs(d_rs - scan.distances[data.ray_index]) < SAMP.delta
    assert np.all(data.labels[near] < 0)


def test_config_validation():
    with pytest.raises(ValueError):
        LidarConfig(rays=0)
    with pytest.raises(ValueError):
        SamplingConfig(delta=0.0)
    with pytest.raises(ValueError):
        SamplingConfig(delta=0.1).check_body(RobotBody("r", 0.105))


def test_scan_lidar_mismatch_rejected():
    scan = simulate_scan("r1", Pose(0, 0, 0), single_obstacle_world(), LIDAR)
    with pytest.raises(ValueError):
        build_dataset(scan, LidarConfig(rays=4), SAMP)
