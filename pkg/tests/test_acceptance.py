"""Acceptance checks AC-1 .. AC-10.

Each test records one line ``AC-n PASS|FAIL: ...``, asserts the same
condition, and the lines are printed together in pytest's terminal summary. Closed-loop runs are
shared between tests through a module-level cache.

Run on its own with ``pytest tests/test_acceptance.py -v`` or
``python3 tests/test_acceptance.py``.
"""
import csv
import math
import sys
from pathlib import Path

import numpy as np
import pytest

from nmpc_lbf.controller import ControllerStatus, RobotController
from nmpc_lbf.kinematics import KinematicsParams
from nmpc_lbf.lbf import BarrierNet, TrainConfig, forward, input_gradient
from nmpc_lbf.nmpc import HorizonSolution, NmpcConfig, SolverStatus, build_problem, solve
from nmpc_lbf.sensing import LidarConfig, SamplingConfig, build_dataset, simulate_scan
from nmpc_lbf.simulator import TIMING_COLUMNS, bundled_scenario_path, load_scenario, run
from nmpc_lbf.world import Pose, Position2, RobotBody, WorldState

from conftest import ACCEPTANCE_LINES

E_REF = 0.1
_RUNS = {}


def report(tag, ok, detail):
    line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, f"{tag}: {detail}"


def closed_loop(name, out_root):
    if name not in _RUNS:
        sc = load_scenario(bundled_scenario_path(name))
        out = out_root / name
        _RUNS[name] = (sc, run(sc, out), out)
    return _RUNS[name]


@pytest.fixture(scope="module")
def out_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def _final_distances(sc, res):
    return {r.id: math.hypot(res.final_poses[r.id].x - r.goal.x,
                             res.final_poses[r.id].y - r.goal.y) for r in sc.robots}


def _describe(res, dists):
    d = ", ".join(f"{k} {v:.3f} m" for k, v in dists.items())
    return (f"outcomes {res.outcomes}, final goal distance {d}, "
            f"min clearance {min(res.min_clearance, default=math.inf):.4f} m, ticks {res.ticks}")


@pytest.mark.slow
def test_ac1_scenario1(out_root):
    sc, res, _ = closed_loop("scenario1", out_root)
    dists = _final_distances(sc, res)
    ok = (dists["r1"] <= E_REF and min(res.min_clearance, default=math.inf) > 0
          and res.ticks <= 2000)
    report("AC-1", ok, "scenario 1 reaches within 0.1 m, clearance > 0, <= 2000 ticks; "
           + _describe(res, dists))


@pytest.mark.slow
def test_ac2_scenario2(out_root):
    sc, res, _ = closed_loop("scenario2", out_root)
    dists = _final_distances(sc, res)
    ok = all(d <= E_REF for d in dists.values()) and min(res.min_clearance, default=math.inf) > 0
    report("AC-2", ok, "all four robots within 0.1 m, robot-robot and robot-obstacle clearance > 0; "
           + _describe(res, dists))


@pytest.mark.slow
def test_ac3_head_on(out_root):
    sc, res, _ = closed_loop("head_on", out_root)
    dists = _final_distances(sc, res)
    ok = all(d <= E_REF for d in dists.values()) and min(res.min_clearance, default=math.inf) > 0
    report("AC-3", ok, "both robots reach, pairwise clearance > 0; " + _describe(res, dists))


@pytest.mark.slow
def test_ac4_dynamic_obstacle(out_root):
    sc, res, _ = closed_loop("dynamic", out_root)
    v = sc.obstacles[0].motion.velocity
    dists = _final_distances(sc, res)
    ok = dists["r1"] <= E_REF and min(res.min_clearance, default=math.inf) > 0
    report("AC-4", ok, f"obstacle speed {math.hypot(v.x, v.y):.2f} m/s, reach with clearance > 0; "
           + _describe(res, dists))


def test_ac5_gradient_oracle():
    worst = 0.0
    ok = True
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        net = BarrierNet.from_config(TrainConfig(seed=seed))
        net = BarrierNet.from_parameters(net.coefs_, [rng.normal(0, 0.3, b.shape)
                                                      for b in net.intercepts_])
        for p in rng.uniform(-3.5, 3.5, size=(5, 2)):
            g = input_gradient(net, p)
            fd = np.array([(forward(net, p + e) - forward(net, p - e)) / 2e-5
                           for e in np.eye(2) * 1e-5])
            err = np.abs(g - fd)
            ok &= bool(np.all(err <= np.maximum(1e-5 * np.abs(fd), 1e-8)))
            worst = max(worst, float(np.max(err / np.maximum(np.abs(fd), 1e-3))))
    report("AC-5", ok, f"100 nets x 5 inputs, central differences step 1e-5, "
           f"tolerance rel 1e-5 / abs 1e-8; worst scaled error {worst:.2e}")


def test_ac6_regression_oracle():
    lidar, samp = LidarConfig(), SamplingConfig()
    pose = Pose(0.0, 0.0, 0.0)
    # radius 0.5 centred 2 m ahead: nearest return at 1.5 m, seen by several rays
    world = WorldState(0.0, {"r1": pose}, {"o1": Position2(2.0, 0.0)}, {"r1": 0.105, "o1": 0.5})
    scan = simulate_scan("r1", pose, world, lidar)
    data = build_dataset(scan, lidar, samp)
    net = BarrierNet(epochs=200, random_state=0).fit(data.inputs, data.labels)
    pred = net.predict(data.inputs)
    mask = np.abs(data.labels) > 0.05
    agree = float(np.mean(np.sign(pred[mask]) == np.sign(data.labels[mask])))
    h_hit = forward(net, (scan.distances[0], 0.0))
    ok = agree >= 0.95 and h_hit < 0
    report("AC-6", ok, f"obstacle at 1.5 m, 200 epochs: sign agreement {agree:.4f} (>= 0.95), "
           f"h at hit point {h_hit:+.4f} (< 0)")


@pytest.mark.slow
def test_ac7_cbc_enforced(out_root):
    worst, n = math.inf, 0
    for name in ("scenario1", "scenario2", "head_on", "dynamic"):
        _, res, _ = closed_loop(name, out_root)
        for recs in res.records.values():
            for r in recs:
                if r.solver_status == SolverStatus.CONVERGED.value:
                    n += 1
                    worst = min(worst, r.min_cbc_residual)
    ok = n > 0 and worst >= -1e-4
    report("AC-7", ok, f"{n} Converged solves over AC-1..AC-4, min CBC residual {worst:.2e} (>= -1e-4)")


def test_ac8_analytic_oracle():
    kin = KinematicsParams()
    net = BarrierNet.constant(1.0)
    # one stage: only l(x0, u0) is optimised, so the minimiser is u0 = 0
    cfg1 = NmpcConfig(horizon=1)
    x0 = np.array([0.6, -0.4, 0.7])
    s1 = solve(build_problem(x0, np.zeros(3), net, cfg1, kin))
    err1 = float(np.abs(s1.U_star[0]).max())
    # two stages: u0 minimises a 2x2 quadratic, u1 = 0
    cfg2 = NmpcConfig(horizon=2)
    th = x0[2]
    B = np.array([[math.cos(th), -kin.a * math.sin(th)],
                  [math.sin(th), kin.a * math.cos(th)], [0.0, 1.0]])
    H = kin.Ts ** 2 * B.T @ cfg2.Q @ B + cfg2.R
    u_star = -np.linalg.solve(H, kin.Ts * B.T @ cfg2.Q @ x0)
    s2 = solve(build_problem(x0, np.zeros(3), net, cfg2, kin))
    err2 = float(max(np.abs(s2.U_star[0] - u_star).max(), np.abs(s2.U_star[1]).max()))
    ok = err1 <= 1e-6 and err2 <= 1e-6 and s1.status is SolverStatus.CONVERGED \
        and s2.status is SolverStatus.CONVERGED
    report("AC-8", ok, f"Np=1 |u0 - 0| = {err1:.1e}, Np=2 |u - u*| = {err2:.1e} "
           f"(u0* = [{u_star[0]:.6f}, {u_star[1]:.6f}]), tolerance 1e-6")


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.slow
def test_ac9_determinism(out_root):
    sc, res, out_a = closed_loop("scenario1", out_root)
    out_b = out_root / "scenario1_repeat"
    run(load_scenario(bundled_scenario_path("scenario1")), out_b)
    a = _read_csv(out_a / "trajectory_r1.csv")
    b = _read_csv(out_b / "trajectory_r1.csv")
    cols = [c for c in a[0] if c not in TIMING_COLUMNS] if a else []
    same = len(a) == len(b) and all(ra[c] == rb[c] for ra, rb in zip(a, b) for c in cols)
    report("AC-9", same, f"two seeded scenario 1 runs, {len(a)} rows, every column except "
           f"wall-clock {list(TIMING_COLUMNS)} identical as text")


def test_ac10_fallback():
    def stub(problem, warm=None):
        N = problem.horizon
        return HorizonSolution(np.full((N, 2), 0.2), np.tile(problem.x0, (N + 1, 1)),
                               SolverStatus.INFEASIBLE, math.inf, 1.0, 1.0)

    ctrl = RobotController(RobotBody("r1", 0.105), Pose(1, 0, 0), NmpcConfig(),
                           KinematicsParams(), LidarConfig(), SamplingConfig(),
                           TrainConfig(), solver=stub)
    u, rec = ctrl.tick(WorldState(0.0, {"r1": Pose(0, 0, 0)}, {}, {"r1": 0.105}))
    ok = (u.v, u.omega) == (0.0, 0.0) and ctrl.status is ControllerStatus.STOPPED
    report("AC-10", ok, f"forced Infeasible: applied ({u.v}, {u.omega}), status {ctrl.status.value}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
