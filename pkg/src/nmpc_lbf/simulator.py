"""Scenario files, the synchronous multi-robot loop, logs and metrics."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .controller import ControllerStatus, RobotController, TickRecord
from .kinematics import ControlInput, KinematicsParams, step
from .lbf import TrainConfig
from .nmpc import NmpcConfig
from .sensing import LidarConfig, SamplingConfig
from .world import (LinearPath, Obstacle, Pose, Position2, RobotBody, Static,
                    WaypointLoop, WorldState, obstacle_center_at, pairwise_clearances)

log = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = [
    "tick", "time_s", "x_m", "y_m", "theta_rad", "v_mps", "omega_radps",
    "dist_to_goal_m", "solver_status", "sqp_iters", "solve_time_s", "train_loss",
    "train_time_s", "min_hhat_horizon",
]
SOLVER_COLUMNS = [
    "tick", "solver_status", "sqp_iters", "objective", "max_eq_violation",
    "max_cbc_violation", "min_cbc_residual", "solve_time_s",
]
# wall-clock columns; everything else in a trajectory log is reproducible
TIMING_COLUMNS = ("solve_time_s", "train_time_s")


class ParseError(ValueError):
    """Scenario file is not valid JSON or does not match the schema."""


class ValidationError(ValueError):
    """Scenario parses but violates a physical invariant."""


_vec2 = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_bounds2 = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCENARIO_SCHEMA = _obj({
    "name": {"type": "string"},
    "description": {"type": "string"},
    "reconstructed": {"type": "boolean"},
    "seed": {"type": "integer"},
    "max_ticks": {"type": "integer", "minimum": 0},
    "workspace": _obj({"x": _bounds2, "y": _bounds2}, ["x", "y"]),
    "robots": {"type": "array", "items": _obj({
        "id": {"type": "string"}, "start": _vec3, "goal": _vec3,
        "radius": {"type": "number"}}, ["id", "start", "goal"])},
    "obstacles": {"type": "array", "items": _obj({
        "id": {"type": "string"}, "radius": {"type": "number"},
        "motion": {"oneOf": [
            _obj({"type": {"const": "static"}, "center": _vec2}, ["type", "center"]),
            _obj({"type": {"const": "linear"}, "start": _vec2, "velocity": _vec2},
                 ["type", "start", "velocity"]),
            _obj({"type": {"const": "waypoint_loop"},
                  "points": {"type": "array", "items": _vec2},
                  "speed": {"type": "number"}}, ["type", "points", "speed"]),
        ]}}, ["id", "radius", "motion"])},
    "lidar": _obj({"rays": {"type": "integer"}, "d_max": {"type": "number"}}),
    "sampling": _obj({"samples_per_ray": {"type": "integer"}, "delta": {"type": "number"}}),
    "nmpc": _obj({
        "horizon": {"type": "integer"}, "Ts": {"type": "number"},
        "Q": {"type": "array", "items": {"type": "number"}},
        "R": {"type": "array", "items": {"type": "number"}},
        "u_min": _vec2, "u_max": _vec2, "gamma": {"type": "number"},
        "barrier_margin": {"type": "number"}, "max_iter": {"type": "integer"},
        "tol": {"type": "number"}}),
    "kinematics": _obj({"a": {"type": "number"}}),
    "train": _obj({"learning_rate": {"type": "number"}, "epochs": {"type": "integer"},
                   "batch_size": {"type": ["integer", "null"]}}),
    "controller": _obj({"e_ref": {"type": "number"}}),
}, ["name", "workspace", "robots"])


@dataclass(frozen=True)
class RobotSpec:
    id: str
    start: Pose
    goal: Pose
    radius: float = 0.105


@dataclass
class Scenario:
    name: str
    workspace: tuple            # (x_min, x_max, y_min, y_max)
    robots: list
    obstacles: list = field(default_factory=list)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    nmpc: NmpcConfig = field(default_factory=NmpcConfig)
    kinematics: KinematicsParams = field(default_factory=KinematicsParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    e_ref: float = 0.1
    max_ticks: int = 2000
    seed: int = 0
    reconstructed: bool = False
    description: str = ""

    def radii(self) -> dict:
        out = {r.id: r.radius for r in self.robots}
        out.update({o.id: o.radius for o in self.obstacles})
        return out

    def initial_state(self) -> WorldState:
        return WorldState(
            time=0.0,
            robot_poses={r.id: r.start for r in self.robots},
            obstacle_centers={o.id: obstacle_center_at(o, 0.0) for o in self.obstacles},
            radii=self.radii())

    def validate(self) -> "Scenario":
        ids = [r.id for r in self.robots] + [o.id for o in self.obstacles]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise ValidationError(f"ids: duplicate body ids {dup}")
        x0, x1, y0, y1 = self.workspace
        if not (x0 < x1 and y0 < y1):
            raise ValidationError("workspace: bounds must be increasing")
        for i, r in enumerate(self.robots):
            for what, p in (("start", r.start), ("goal", r.goal)):
                if not (x0 <= p.x <= x1 and y0 <= p.y <= y1):
                    raise ValidationError(f"robots[{i}].{what}: ({p.x}, {p.y}) outside workspace")
            if not r.radius > 0:
                raise ValidationError(f"robots[{i}].radius: must be > 0")
            if not self.sampling.delta > r.radius:
                raise ValidationError(
                    f"sampling.delta: {self.sampling.delta} must exceed robots[{i}].radius {r.radius}")
        state = self.initial_state()
        for (a, b), c in pairwise_clearances(state).items():
            if c <= 0:
                raise ValidationError(f"robots: start of {a} overlaps {b} (clearance {c:.3f} m)")
        return self


def _motion_from_json(m):
    if m["type"] == "static":
        return Static(Position2(*m["center"]))
    if m["type"] == "linear":
        return LinearPath(Position2(*m["start"]), Position2(*m["velocity"]))
    return WaypointLoop(tuple(Position2(*p) for p in m["points"]), float(m["speed"]))


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ParseError(f"{where}: {exc.message}") from None
    try:
        ws = doc["workspace"]
        workspace = (*map(float, ws["x"]), *map(float, ws["y"]))
        robots = [RobotSpec(r["id"], Pose(*r["start"]), Pose(*r["goal"]),
                            float(r.get("radius", 0.105))) for r in doc["robots"]]
        obstacles = [Obstacle(o["id"], float(o["radius"]), _motion_from_json(o["motion"]))
                     for o in doc.get("obstacles", [])]
        lidar = LidarConfig(**doc.get("lidar", {}))
        sampling = SamplingConfig(**doc.get("sampling", {}))
        kin = KinematicsParams(a=doc.get("kinematics", {}).get("a", 0.1),
                               Ts=doc.get("nmpc", {}).get("Ts", 0.05))
        nm = dict(doc.get("nmpc", {}))
        nmpc = NmpcConfig(x_min=(workspace[0], workspace[2], -math.inf),
                          x_max=(workspace[1], workspace[3], math.inf), **nm)
        seed = int(doc.get("seed", 0))
        train = TrainConfig(seed=seed, **doc.get("train", {}))
    except (ValueError, TypeError) as exc:
        raise ValidationError(str(exc)) from None
    return Scenario(
        name=doc["name"], workspace=workspace, robots=robots, obstacles=obstacles,
        lidar=lidar, sampling=sampling, nmpc=nmpc, kinematics=kin, train=train,
        e_ref=float(doc.get("controller", {}).get("e_ref", 0.1)),
        max_ticks=int(doc.get("max_ticks", 2000)), seed=seed,
        reconstructed=bool(doc.get("reconstructed", False)),
        description=doc.get("description", "")).validate()


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError:
        raise
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return scenario_from_dict(doc)


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``"scenario1"``."""
    fname = name if name.endswith(".json") else name + ".json"
    return Path(str(resources.files("nmpc_lbf") / "scenarios" / fname))


# -- running -----------------------------------------------------------

class Outcome:
    REACHED = "Reached"
    TIMEOUT = "Timeout"
    COLLISION = "Collision"


@dataclass
class RunResult:
    scenario: str
    records: dict                 # robot id -> list[TickRecord]
    min_clearance: list           # global, one entry per executed tick
    robot_clearance: dict         # robot id -> list, one entry per executed tick
    outcomes: dict                # robot id -> Outcome
    ticks: int
    wall_clock: float
    starts: dict = field(default_factory=dict)
    goals: dict = field(default_factory=dict)
    final_poses: dict = field(default_factory=dict)
    Ts: float = 0.05

    @property
    def success(self) -> bool:
        return all(o == Outcome.REACHED for o in self.outcomes.values())


def make_controllers(scenario: Scenario, seed: int | None = None) -> list[RobotController]:
    base = scenario.seed if seed is None else seed
    ctrls = []
    for i, r in enumerate(scenario.robots):
        train = TrainConfig(learning_rate=scenario.train.learning_rate,
                            epochs=scenario.train.epochs,
                            batch_size=scenario.train.batch_size, seed=base + i)
        ctrls.append(RobotController(
            RobotBody(r.id, r.radius), r.goal, scenario.nmpc, scenario.kinematics,
            scenario.lidar, scenario.sampling, train, e_ref=scenario.e_ref))
    return ctrls


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _trajectory_row(rec: TickRecord):
    return [rec.tick, _fmt(rec.time), _fmt(rec.pose.x), _fmt(rec.pose.y), _fmt(rec.pose.theta),
            _fmt(rec.u.v), _fmt(rec.u.omega), _fmt(rec.distance_to_goal), rec.solver_status,
            rec.sqp_iters, _fmt(rec.solve_time), _fmt(rec.train_loss), _fmt(rec.train_time),
            _fmt(rec.min_hhat_horizon)]


def _solver_row(rec: TickRecord):
    return [rec.tick, rec.solver_status, rec.sqp_iters, _fmt(rec.objective),
            _fmt(rec.max_eq_violation), _fmt(rec.max_cbc_violation),
            _fmt(rec.min_cbc_residual), _fmt(rec.solve_time)]


class _Logs:
    def __init__(self, out_dir: Path | None, robot_ids, dump_datasets, dump_weights):
        self.out_dir = out_dir
        self.dump_datasets = dump_datasets and out_dir is not None
        self.dump_weights = dump_weights and out_dir is not None
        self.files = []
        self.traj, self.solver = {}, {}
        if out_dir is None:
            return
        out_dir.mkdir(parents=True, exist_ok=True)
        for rid in robot_ids:
            for kind, cols, store in (("trajectory", TRAJECTORY_COLUMNS, self.traj),
                                      ("solver", SOLVER_COLUMNS, self.solver)):
                fh = open(out_dir / f"{kind}_{rid}.csv", "w", newline="")
                self.files.append(fh)
                w = csv.writer(fh)
                w.writerow(cols)
                store[rid] = (fh, w)
        fh = open(out_dir / "clearance.csv", "w", newline="")
        self.files.append(fh)
        self.clear = (fh, csv.writer(fh))
        self.clear[1].writerow(["tick", "time_s", "min_clearance_m"])
        if self.dump_datasets:
            (out_dir / "datasets").mkdir(exist_ok=True)
        if self.dump_weights:
            (out_dir / "weights").mkdir(exist_ok=True)

    def record(self, ctrl: RobotController, rec: TickRecord):
        if self.out_dir is None:
            return
        rid = ctrl.id
        self.traj[rid][1].writerow(_trajectory_row(rec))
        self.solver[rid][1].writerow(_solver_row(rec))
        if self.dump_datasets and ctrl.last_dataset is not None and rec.solver_status != "NotSolved":
            ctrl.last_dataset.to_csv(self.out_dir / "datasets" / f"{rid}_{rec.tick:05d}.csv")
        if self.dump_weights and rec.solver_status != "NotSolved":
            ctrl.net.write_parameters_csv(self.out_dir / "weights" / f"{rid}_{rec.tick:05d}.csv")

    def clearance(self, tick, t, c):
        if self.out_dir is None:
            return
        self.clear[1].writerow([tick, repr(t), repr(c) if math.isfinite(c) else "inf"])
        for fh in self.files:
            fh.flush()

    def close(self):
        for fh in self.files:
            fh.close()


def run(scenario: Scenario, out_dir=None, *, seed: int | None = None,
        max_ticks: int | None = None, dump_datasets: bool = False,
        dump_weights: bool = False, controllers=None) -> RunResult:
    """Run every robot's controller in lock-step until all reach, one collides,
    or the tick budget runs out.

    All controllers at tick k act on the same world snapshot; their inputs are
    then applied simultaneously.
    """
    wall0 = time.perf_counter()
    max_ticks = scenario.max_ticks if max_ticks is None else max_ticks
    ctrls = controllers if controllers is not None else make_controllers(scenario, seed)
    obstacles = {o.id: o for o in scenario.obstacles}
    state = scenario.initial_state()
    records = {c.id: [] for c in ctrls}
    robot_clear = {c.id: [] for c in ctrls}
    global_clear = []
    outcomes = {c.id: Outcome.TIMEOUT for c in ctrls}
    logs = _Logs(Path(out_dir) if out_dir is not None else None,
                 [c.id for c in ctrls], dump_datasets, dump_weights)
    ticks = 0
    try:
        for k in range(max_ticks):
            active = [c for c in ctrls if c.status is not ControllerStatus.REACHED]
            if not active:
                break
            snapshot = state
            inputs = {}
            for c in active:
                u, rec = c.tick(snapshot)
                records[c.id].append(rec)
                logs.record(c, rec)
                inputs[c.id] = u
                if c.status is ControllerStatus.REACHED:
                    outcomes[c.id] = Outcome.REACHED
            t_next = snapshot.time + scenario.nmpc.Ts
            poses = {rid: (step(p, inputs[rid], scenario.kinematics) if rid in inputs else p)
                     for rid, p in snapshot.robot_poses.items()}
            centers = {oid: obstacle_center_at(o, t_next) for oid, o in obstacles.items()}
            state = WorldState(t_next, poses, centers, snapshot.radii)
            ticks = k + 1

            pairs = pairwise_clearances(state)
            gmin = min(pairs.values(), default=math.inf)
            global_clear.append(gmin)
            for rid in robot_clear:
                robot_clear[rid].append(min((v for key, v in pairs.items() if rid in key),
                                            default=math.inf))
            logs.clearance(k, t_next, gmin)
            if gmin < 0:
                for (a, b), v in pairs.items():
                    if v < 0:
                        for rid in (a, b):
                            if rid in outcomes:
                                outcomes[rid] = Outcome.COLLISION
                log.warning("collision at tick %d (clearance %.4f m)", k, gmin)
                break
    finally:
        logs.close()

    result = RunResult(
        scenario=scenario.name, records=records, min_clearance=global_clear,
        robot_clearance=robot_clear, outcomes=outcomes, ticks=ticks,
        wall_clock=time.perf_counter() - wall0,
        starts={r.id: r.start for r in scenario.robots},
        goals={r.id: r.goal for r in scenario.robots},
        final_poses=dict(state.robot_poses), Ts=scenario.nmpc.Ts)
    if out_dir is not None:
        write_metrics(summarize(result), Path(out_dir) / "metrics.json")
    return result


# -- metrics -----------------------------------------------------------

@dataclass
class RobotMetrics:
    outcome: str
    time_to_goal_s: float | None
    path_length_m: float
    straight_line_m: float
    min_clearance_m: float
    mean_solve_time_s: float
    max_solve_time_s: float
    mean_train_time_s: float
    ticks: int


@dataclass
class MetricsSummary:
    scenario: str
    robots: dict
    success: bool
    ticks: int
    wall_clock_s: float
    min_clearance_m: float


def summarize(result: RunResult) -> MetricsSummary:
    if not result.records:
        raise ValueError("empty run result")
    robots = {}
    for rid, recs in result.records.items():
        pts = [(r.pose.x, r.pose.y) for r in recs]
        final = result.final_poses.get(rid)
        if final is not None and (not recs or recs[-1].controller_status != "Reached"):
            pts.append((final.x, final.y))
        path = sum(math.dist(a, b) for a, b in zip(pts, pts[1:]))
        solved = [r for r in recs if r.solver_status != "NotSolved"]
        solve_t = [r.solve_time for r in solved]
        train_t = [r.train_time for r in solved]
        reached = result.outcomes.get(rid) == Outcome.REACHED
        s, g = result.starts.get(rid), result.goals.get(rid)
        straight = math.hypot(s.x - g.x, s.y - g.y) if s and g else math.nan
        clear = result.robot_clearance.get(rid, [])
        robots[rid] = RobotMetrics(
            outcome=result.outcomes.get(rid, Outcome.TIMEOUT),
            time_to_goal_s=recs[-1].time if reached and recs else None,
            path_length_m=path, straight_line_m=straight,
            min_clearance_m=min(clear, default=math.inf),
            mean_solve_time_s=sum(solve_t) / len(solve_t) if solve_t else 0.0,
            max_solve_time_s=max(solve_t, default=0.0),
            mean_train_time_s=sum(train_t) / len(train_t) if train_t else 0.0,
            ticks=len(recs))
    return MetricsSummary(
        scenario=result.scenario, robots=robots, success=result.success,
        ticks=result.ticks, wall_clock_s=result.wall_clock,
        min_clearance_m=min(result.min_clearance, default=math.inf))


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if hasattr(v, "__dataclass_fields__"):
        return {k: _jsonable(getattr(v, k)) for k in v.__dataclass_fields__}
    return v


def write_metrics(summary: MetricsSummary, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(summary), indent=2) + "\n")


def write_plot_data(run_dir) -> list[Path]:
    """Resample trajectory logs into wide CSVs for distance and input plots."""
    run_dir = Path(run_dir)
    logs = sorted(run_dir.glob("trajectory_*.csv"))
    if not logs:
        raise FileNotFoundError(f"no trajectory_*.csv in {run_dir}")
    series = {}
    for p in logs:
        rid = p.stem[len("trajectory_"):]
        with open(p, newline="") as fh:
            series[rid] = {int(r["tick"]): r for r in csv.DictReader(fh)}
    ticks = sorted({t for s in series.values() for t in s})
    out = []
    for name, fields in (("plot_distance.csv", ("dist_to_goal_m",)),
                         ("plot_inputs.csv", ("v_mps", "omega_radps"))):
        path = run_dir / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tick", "time_s"] + [f"{f}_{rid}" for rid in series for f in fields])
            for t in ticks:
                time_s = next(s[t]["time_s"] for s in series.values() if t in s)
                row = [t, time_s]
                for rid, s in series.items():
                    row += [s[t][f] if t in s else "" for f in fields]
                w.writerow(row)
        out.append(path)
    return out
