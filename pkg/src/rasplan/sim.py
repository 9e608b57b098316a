"""Deterministic desk-scale simulator: scripted obstacles, FOV sensor, metrics."""
from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np

from .fusion import Supervisor, load_global_trajectory
from .geometry import Box, point_box_distance, vec3
from .particles import ParticleField, PredictionConfig, advance, decay_and_cull, \
    frozen_copy, ingest_point_cloud, recenter
from .planner import PlanResult, plan, replan_tick
from .scenario_io import (
    ScenarioError,
    fusion_config,
    load_scenario_dict,
    planner_config,
    risk_config,
    sampler_config,
)
from .trajectory import QuadState

METHODS = ("ras", "one_phase", "no_prediction")


# ---------------------------------------------------------------------------
# obstacles


class Obstacle:
    """Sphere or box moving along a scripted path (or standing still).

    Positions are closed-form functions of time, so waypoint corners hit
    mid-step are exact: the residual advances along the next leg.
    """

    def __init__(self, kind: str, *, radius: float = 0.0, half=None,
                 start=None, waypoints=None, speed: float = 0.0,
                 loop: bool = True, velocity=None):
        self.kind = kind
        self.radius = float(radius)
        self.half = None if half is None else vec3(half)
        self.velocity_const = None if velocity is None else vec3(velocity)
        self.start = None if start is None else vec3(start)
        self.speed = float(speed)
        self.loop = loop
        self.waypoints = None
        self._leg_len = None
        self._cum = None
        if waypoints is not None:
            wps = [vec3(w) for w in waypoints]
            if loop and len(wps) > 1:
                wps = wps + [wps[0]]
            self.waypoints = np.asarray(wps)
            legs = np.diff(self.waypoints, axis=0)
            self._leg_len = np.linalg.norm(legs, axis=1)
            self._cum = np.concatenate([[0.0], np.cumsum(self._leg_len)])

    @property
    def dynamic(self) -> bool:
        return self.velocity_const is not None or (
            self.waypoints is not None and self.speed > 0.0 and self._cum[-1] > 0.0)

    def position(self, t: float) -> np.ndarray:
        if self.velocity_const is not None:
            return self.start + self.velocity_const * t
        if self.waypoints is None or self.speed == 0.0 or self._cum[-1] == 0.0:
            return self.start if self.start is not None else self.waypoints[0]
        s = self.speed * t
        total = self._cum[-1]
        if self.loop:
            s = s % total
        else:
            s = min(s, total)
        i = int(np.searchsorted(self._cum, s, side="right") - 1)
        i = min(i, len(self._leg_len) - 1)
        u = (s - self._cum[i]) / self._leg_len[i] if self._leg_len[i] > 0 else 0.0
        return self.waypoints[i] + u * (self.waypoints[i + 1] - self.waypoints[i])

    def velocity(self, t: float) -> np.ndarray:
        if self.velocity_const is not None:
            return self.velocity_const.copy()
        if self.waypoints is None or self.speed == 0.0 or self._cum[-1] == 0.0:
            return np.zeros(3)
        s = self.speed * t
        total = self._cum[-1]
        if self.loop:
            s = s % total
        elif s >= total:
            return np.zeros(3)
        i = int(np.searchsorted(self._cum, s, side="right") - 1)
        i = min(i, len(self._leg_len) - 1)
        if self._leg_len[i] == 0.0:
            return np.zeros(3)
        leg = self.waypoints[i + 1] - self.waypoints[i]
        return self.speed * leg / self._leg_len[i]

    def surface_distance(self, point: np.ndarray, t: float) -> float:
        c = self.position(t)
        if self.kind == "sphere":
            return float(np.linalg.norm(point - c)) - self.radius
        return point_box_distance(point, c - self.half, c + self.half)

    def intersects_box(self, lo: np.ndarray, hi: np.ndarray, t: float) -> bool:
        """Closed intersection test against an axis-aligned box."""
        c = self.position(t)
        if self.kind == "sphere":
            return point_box_distance(c, lo, hi) <= self.radius
        olo, ohi = c - self.half, c + self.half
        return bool(np.all(olo <= hi) and np.all(lo <= ohi))

    def surface_points(self, viewer: np.ndarray, n: int, t: float) -> np.ndarray:
        """Deterministic samples on the surface facing the viewer."""
        c = self.position(t)
        if self.kind == "sphere":
            pts = c + self.radius * _fibonacci_hemisphere(n, viewer - c)
            return pts
        return _box_face_points(c - self.half, c + self.half, viewer, n)


def _fibonacci_hemisphere(n: int, toward: np.ndarray) -> np.ndarray:
    """n unit vectors covering the hemisphere oriented toward the viewer."""
    k = np.arange(n)
    z = (k + 0.5) / n                      # (0, 1): upper hemisphere
    phi = k * (np.pi * (3.0 - np.sqrt(5.0)))
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    local = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    norm = float(np.linalg.norm(toward))
    if norm < 1e-9:
        return local
    w = toward / norm
    # rotate +z onto w
    a = np.array([0.0, 0.0, 1.0])
    v = np.cross(a, w)
    s = float(np.linalg.norm(v))
    c = float(a @ w)
    if s < 1e-12:
        return local if c > 0 else -local
    vx = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    rot = np.eye(3) + vx + vx @ vx * ((1.0 - c) / (s * s))
    return local @ rot.T


def _box_face_points(lo: np.ndarray, hi: np.ndarray, viewer: np.ndarray,
                     per_face: int) -> np.ndarray:
    """Grid samples on the box faces whose outward normal faces the viewer."""
    k = max(int(np.ceil(np.sqrt(per_face))), 1)
    frac = (np.arange(k) + 0.5) / k
    center = 0.5 * (lo + hi)
    out = []
    for axis in range(3):
        for sign, coord in ((1.0, hi[axis]), (-1.0, lo[axis])):
            normal = np.zeros(3)
            normal[axis] = sign
            if float(normal @ (viewer - center)) <= 0.0:
                continue
            u_ax, v_ax = [a for a in range(3) if a != axis]
            uu, vv = np.meshgrid(lo[u_ax] + frac * (hi[u_ax] - lo[u_ax]),
                                 lo[v_ax] + frac * (hi[v_ax] - lo[v_ax]))
            pts = np.empty((k * k, 3))
            pts[:, axis] = coord
            pts[:, u_ax] = uu.ravel()
            pts[:, v_ax] = vv.ravel()
            out.append(pts)
    return np.concatenate(out) if out else np.empty((0, 3))


# ---------------------------------------------------------------------------
# scenario


@dataclass
class Scenario:
    """Parsed scenario: world, vehicle task, sensor, obstacles and configs."""

    name: str
    world_bounds: Box
    start: QuadState
    goal: Optional[np.ndarray]
    goal_direction: Optional[np.ndarray]
    global_traj_path: Optional[str]
    envelope: np.ndarray
    v_max: float
    a_max: float
    goal_tolerance: float
    sensor_fov_deg: float
    sensor_range: float
    sensor_points: int
    sensor_rate: float
    obstacles: list
    planner_cfg: object
    sampler_cfg: object
    risk_cfg: object
    fusion_cfg: object
    map_cfg: dict
    duration: float
    freeze_timeout: float
    physics_rate: float

    @classmethod
    def from_dict(cls, cfg: dict) -> "Scenario":
        w = cfg["world"]["bounds"]
        v = cfg["vehicle"]
        goal = None if v["goal"] is None else vec3(v["goal"])
        goal_dir = None if v["goal_direction"] is None else vec3(v["goal_direction"])
        gt_path = v["global_trajectory"]
        if goal is None and goal_dir is None and gt_path is None:
            raise ScenarioError("vehicle needs goal, goal_direction or global_trajectory")
        if gt_path is not None and not Path(gt_path).is_absolute():
            gt_path = str(Path(cfg.get("_dir", ".")) / gt_path)
        obstacles = [_parse_obstacle(o) for o in cfg["obstacles"]]
        s = cfg["sensor"]
        lim = cfg["limits"]
        return cls(
            name=str(cfg["name"]),
            world_bounds=Box(w[0], w[1]),
            start=QuadState.rest(v["start"]),
            goal=goal,
            goal_direction=goal_dir,
            global_traj_path=gt_path,
            envelope=vec3(v["envelope"]),
            v_max=float(v["v_max"]),
            a_max=float(v["a_max"]),
            goal_tolerance=float(v["goal_tolerance"]),
            sensor_fov_deg=float(s["fov_deg"]),
            sensor_range=float(s["range"]),
            sensor_points=int(s["points_per_face"]),
            sensor_rate=float(s["rate"]),
            obstacles=obstacles,
            planner_cfg=planner_config(cfg),
            sampler_cfg=sampler_config(cfg),
            risk_cfg=risk_config(cfg),
            fusion_cfg=fusion_config(cfg),
            map_cfg=dict(cfg["map"]),
            duration=float(lim["duration"]),
            freeze_timeout=float(lim["freeze_timeout"]),
            physics_rate=float(lim["physics_rate"]),
        )

    @classmethod
    def load(cls, path, overrides=()) -> "Scenario":
        from .scenario_io import apply_overrides
        cfg = load_scenario_dict(path)
        if overrides:
            cfg = apply_overrides(cfg, overrides)
        return cls.from_dict(cfg)


def _parse_obstacle(o: dict) -> Obstacle:
    kind = o["type"]
    kwargs = {}
    if kind == "sphere":
        kwargs["radius"] = float(o["radius"])
    else:
        if "size" in o:
            kwargs["half"] = 0.5 * np.asarray(o["size"], dtype=float)
        else:
            lo, hi = vec3(o["lo"]), vec3(o["hi"])
            kwargs["half"] = 0.5 * (hi - lo)
            o = dict(o)
            o.setdefault("center", 0.5 * (lo + hi))
    if "waypoints" in o:
        kwargs["waypoints"] = o["waypoints"]
        kwargs["speed"] = float(o.get("speed", 0.0))
        kwargs["loop"] = bool(o.get("loop", True))
    elif "velocity" in o:
        kwargs["velocity"] = o["velocity"]
        kwargs["start"] = o["center"]
    else:
        kwargs["start"] = o["center"]
    return Obstacle(kind, **kwargs)


# ---------------------------------------------------------------------------
# world state and primitive operations


@dataclass
class WorldState:
    scenario: Scenario
    time: float = 0.0

    def obstacle_positions(self):
        return [o.position(self.time) for o in self.scenario.obstacles]


def step_world(state: WorldState, dt: float) -> WorldState:
    """Advance scripted obstacles (vehicle motion is handled by the runner)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    return WorldState(state.scenario, state.time + dt)


def sense(state: WorldState, position: np.ndarray, heading: np.ndarray):
    """Point cloud of obstacle surfaces inside the FOV cone and range.

    Each returned point carries its obstacle's true velocity. Occlusion is
    ignored by design; points always lie on obstacle surfaces.
    """
    sc = state.scenario
    half_angle = np.radians(sc.sensor_fov_deg) * 0.5
    cos_half = np.cos(half_angle)
    hn = float(np.linalg.norm(heading))
    axis = heading / hn if hn > 1e-9 else np.array([1.0, 0.0, 0.0])
    points, velocities = [], []
    for obs in sc.obstacles:
        pts = obs.surface_points(position, sc.sensor_points, state.time)
        if len(pts) == 0:
            continue
        rel = pts - position
        dist = np.linalg.norm(rel, axis=1)
        ok = dist <= sc.sensor_range
        safe = np.maximum(dist, 1e-12)
        ok &= (rel @ axis) / safe >= cos_half
        if not np.any(ok):
            continue
        vel = obs.velocity(state.time)
        points.append(pts[ok])
        velocities.append(np.tile(vel, (int(np.count_nonzero(ok)), 1)))
    if not points:
        return np.empty((0, 3)), np.empty((0, 3))
    return np.concatenate(points), np.concatenate(velocities)


def ground_truth_collision(position: np.ndarray, state: WorldState,
                           envelope: np.ndarray) -> bool:
    """Closed-intersection test of the vehicle envelope box at position."""
    half = 0.5 * np.asarray(envelope, dtype=float)
    lo, hi = position - half, position + half
    return any(o.intersects_box(lo, hi, state.time) for o in state.scenario.obstacles)


def min_obstacle_clearance(position: np.ndarray, state: WorldState) -> float:
    if not state.scenario.obstacles:
        return float("inf")
    return min(o.surface_distance(position, state.time) for o in state.scenario.obstacles)


# ---------------------------------------------------------------------------
# metrics and traces


@dataclass
class RunMetrics:
    collision_count: int = 0
    freezing_count: int = 0
    flight_time: float = 0.0
    reached_goal: bool = False
    min_clearance: float = float("inf")
    max_speed: float = 0.0
    max_accel: float = 0.0
    latency_us: list = dc_field(default_factory=list)

    def latency_stats(self) -> dict:
        if not self.latency_us:
            return {"min": 0.0, "mean": 0.0, "median": 0.0, "p99": 0.0, "max": 0.0}
        arr = np.asarray(self.latency_us)
        return {
            "min": float(arr.min()),
            "mean": float(arr.mean()),
            "median": float(np.median(arr)),
            "p99": float(np.percentile(arr, 99)),
            "max": float(arr.max()),
        }

    def summary_lines(self) -> list:
        st = self.latency_stats()
        return [
            f"collision_count={self.collision_count}",
            f"freezing_count={self.freezing_count}",
            f"flight_time={self.flight_time:.9g}",
            f"reached_goal={str(self.reached_goal).lower()}",
            f"min_clearance={self.min_clearance:.9g}",
            f"max_speed={self.max_speed:.9g}",
            f"max_accel={self.max_accel:.9g}",
            f"latency_min_us={st['min']:.3f}",
            f"latency_mean_us={st['mean']:.3f}",
            f"latency_median_us={st['median']:.3f}",
            f"latency_p99_us={st['p99']:.3f}",
            f"latency_max_us={st['max']:.3f}",
        ]


TRACE_HEADER = "t,x,y,z,vx,vy,vz,mode,risk1,cost,collision_flag,latency_us"


def _trace_row(t, st: QuadState, mode, risk1, cost, collision):
    p, v = st.position, st.velocity
    # latency is wall-clock and intentionally left out of deterministic traces
    return (f"{t:.9g},{p[0]:.9g},{p[1]:.9g},{p[2]:.9g},"
            f"{v[0]:.9g},{v[1]:.9g},{v[2]:.9g},{mode},"
            f"{risk1:.9g},{cost:.9g},{int(collision)},0")


# ---------------------------------------------------------------------------
# closed-loop runner


class _LocalDriver:
    """Plan/replan wrapper for goal-directed (non-fusion) runs."""

    def __init__(self, sc: Scenario, method: str):
        self.sc = sc
        self.cfg = sc.planner_cfg if method != "one_phase" else _one_phase_cfg(sc.planner_cfg)
        self.plan_result: Optional[PlanResult] = None
        self.goal = sc.goal if sc.goal is not None else sc.goal_direction

    def replan(self, now: float, field: ParticleField, vehicle: QuadState):
        if self.plan_result is None or not self.plan_result.found:
            self.plan_result = plan(field, vehicle, self.goal, None, self.cfg,
                                    self.sc.sampler_cfg, self.sc.risk_cfg,
                                    start_time=now)
        else:
            self.plan_result = replan_tick(self.plan_result, field, now, vehicle,
                                           self.goal, self.cfg, self.sc.sampler_cfg,
                                           self.sc.risk_cfg)
        return self.plan_result

    def command_state(self, now: float, hold: QuadState) -> QuadState:
        pr = self.plan_result
        if pr is None or not pr.found:
            return QuadState.rest(hold.position)
        traj = pr.trajectory
        t = min(max(now - traj.start_time, 0.0), traj.duration)
        return traj.state_at(t)

    @property
    def mode(self) -> str:
        if self.plan_result is None or not self.plan_result.found:
            return "frozen"
        return "local"

    def head_piece(self):
        pr = self.plan_result
        return pr.pieces[0] if pr is not None and pr.found and pr.pieces else None


def _one_phase_cfg(cfg):
    from dataclasses import replace
    return replace(cfg, two_phase=False)


class _FusionDriver:
    """Supervisor wrapper for runs that follow a global trajectory."""

    def __init__(self, sc: Scenario, method: str):
        self.sc = sc
        cfg = sc.planner_cfg if method != "one_phase" else _one_phase_cfg(sc.planner_cfg)
        g = load_global_trajectory(sc.global_traj_path)
        self.supervisor = Supervisor(g, cfg, sc.sampler_cfg, sc.risk_cfg, sc.fusion_cfg)
        self.goal = g.positions[-1]

    def replan(self, now: float, field: ParticleField, vehicle: QuadState):
        self.supervisor.step(now, field, vehicle)
        return self.supervisor.plan_result

    def command_state(self, now: float, hold: QuadState) -> QuadState:
        if self.supervisor.mode == "frozen":
            return QuadState.rest(hold.position)
        return self.supervisor.command_state(now)

    @property
    def mode(self) -> str:
        return self.supervisor.mode

    def head_piece(self):
        pr = self.supervisor.plan_result
        return pr.pieces[0] if pr is not None and pr.found and pr.pieces else None


def run(scenario: Scenario, method: str = "ras", seed: int = 0,
        trace_path=None, mode_log: Optional[list] = None) -> RunMetrics:
    """Deterministic closed-loop run; returns metrics and optionally a trace.

    method selects the planner variant: "ras" (two-phase risk), "one_phase"
    (phase-1 risk only in the cost) and "no_prediction" (the map is queried
    as if every particle were static).
    """
    if method not in METHODS:
        raise ScenarioError(f"unknown method {method!r}; expected one of {METHODS}")
    sc = scenario
    rng = np.random.default_rng(seed)
    dt = 1.0 / sc.physics_rate
    replan_dt = 1.0 / sc.planner_cfg.replan_rate
    sense_dt = 1.0 / sc.sensor_rate

    half = sc.map_cfg["half_extent"] * np.ones(3)
    start_pos = sc.start.position
    fld = ParticleField(Box(start_pos - half, start_pos + half),
                        bin_size=sc.map_cfg["bin_size"])
    ing_cfg = PredictionConfig(sigma_v=sc.map_cfg["sigma_v"],
                               static_fraction=sc.map_cfg["static_fraction"],
                               particles_per_point=int(sc.map_cfg["particles_per_point"]))

    driver = _FusionDriver(sc, method) if sc.global_traj_path else _LocalDriver(sc, method)
    goal_point = driver.goal if isinstance(driver, _FusionDriver) else sc.goal

    world = WorldState(sc, 0.0)
    vehicle = sc.start
    heading = _initial_heading(sc, vehicle, goal_point)
    metrics = RunMetrics()
    rows = [TRACE_HEADER]
    now = 0.0
    next_sense = 0.0
    next_plan = 0.0
    was_frozen = False
    frozen_since = None
    prev_collided = False
    last_risk1 = 0.0
    last_cost = 0.0
    n_ticks = int(round(sc.duration / dt))

    for _ in range(n_ticks):
        # sensing + map update at sensor rate
        if now >= next_sense - 1e-9:
            pts, vels = sense(world, vehicle.position, heading)
            fld = advance(fld, now - fld.snapshot_time)
            fld = recenter(fld, vehicle.position)
            fld = decay_and_cull(fld, sc.map_cfg["decay"], sc.map_cfg["min_weight"])
            fld = ingest_point_cloud(fld, pts, vels, ing_cfg, rng)
            next_sense += sense_dt

        # replanning at replan rate
        if now >= next_plan - 1e-9:
            query_field = frozen_copy(fld) if method == "no_prediction" else fld
            t0 = time.perf_counter()
            result = driver.replan(now, query_field, vehicle)
            metrics.latency_us.append((time.perf_counter() - t0) * 1e6)
            frozen = driver.mode == "frozen"
            if frozen and not was_frozen:
                metrics.freezing_count += 1
                frozen_since = now
            if not frozen:
                frozen_since = None
            was_frozen = frozen
            head = driver.head_piece()
            if head is not None:
                last_risk1, last_cost = head.risk1, head.cost
            if mode_log is not None:
                mode_log.append((now, driver.mode))
            next_plan += replan_dt

        # advance world and vehicle
        now += dt
        world = step_world(world, dt)
        vehicle = driver.command_state(now, vehicle)
        sp = vehicle.speed
        acc = float(np.linalg.norm(vehicle.acceleration))
        metrics.max_speed = max(metrics.max_speed, sp)
        metrics.max_accel = max(metrics.max_accel, acc)
        if sp > 1e-6:
            heading = vehicle.velocity / sp

        # ground truth bookkeeping
        collided = ground_truth_collision(vehicle.position, world, sc.envelope)
        clearance = min_obstacle_clearance(vehicle.position, world)
        metrics.min_clearance = min(metrics.min_clearance, clearance)
        rows.append(_trace_row(now, vehicle, driver.mode, last_risk1,
                               last_cost, collided))
        if collided and not prev_collided:
            metrics.collision_count += 1
            vehicle = _relocate(vehicle, world)
            if isinstance(driver, _LocalDriver):
                driver.plan_result = None
            else:
                driver.supervisor.plan_result = None
                driver.supervisor.mode = "local"
        prev_collided = collided

        # termination checks
        if goal_point is not None and np.linalg.norm(
                vehicle.position - goal_point) <= sc.goal_tolerance:
            metrics.reached_goal = True
            break
        if isinstance(driver, _FusionDriver) and driver.supervisor.finished(now):
            metrics.reached_goal = True
            break
        if frozen_since is not None and now - frozen_since >= sc.freeze_timeout:
            break

    metrics.flight_time = now
    if trace_path is not None:
        Path(trace_path).write_text("\n".join(rows) + "\n")
    return metrics


def _initial_heading(sc: Scenario, vehicle: QuadState, goal_point) -> np.ndarray:
    if goal_point is not None:
        d = np.asarray(goal_point, dtype=float) - vehicle.position
        n = float(np.linalg.norm(d))
        if n > 1e-9:
            return d / n
    if sc.goal_direction is not None:
        g = sc.goal_direction
        return g / float(np.linalg.norm(g))
    return np.array([1.0, 0.0, 0.0])


def _relocate(vehicle: QuadState, world: WorldState) -> QuadState:
    """Manual-relocation rule: 1 m along the outward normal, hovering."""
    sc = world.scenario
    best = None
    for o in sc.obstacles:
        d = o.surface_distance(vehicle.position, world.time)
        if best is None or d < best[0]:
            best = (d, o)
    _, obs = best
    away = vehicle.position - obs.position(world.time)
    n = float(np.linalg.norm(away))
    normal = away / n if n > 1e-9 else np.array([0.0, 0.0, 1.0])
    return QuadState.rest(vehicle.position + normal)
