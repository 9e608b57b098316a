"""Key-point extraction, global-path risk monitoring, and local/global merging."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Box, segment_closest_points, vec3
from .particles import ParticleField
from .planner import PlannerConfig, PlanResult, plan, rank_cost, replan_tick
from .risk import RiskConfig, corridor_risk, is_safe, polyline_corridor
from .sampler import MotionPrimitive, SamplerConfig, candidate_durations
from .trajectory import QuadState, QuinticSegment, check_feasible, min_jerk_coeffs


@dataclass(frozen=True)
class GlobalTrajectory:
    """Dense preplanned trajectory: per-point time, position, velocity, acceleration."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.positions, dtype=float)
        v = np.asarray(self.velocities, dtype=float)
        a = np.asarray(self.accelerations, dtype=float)
        if len(t) < 2:
            raise ValueError("global trajectory needs at least 2 points")
        if not (p.shape == v.shape == a.shape == (len(t), 3)):
            raise ValueError("inconsistent global trajectory arrays")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("global trajectory times must strictly increase")
        for name, arr in (("times", t), ("positions", p), ("velocities", v),
                          ("accelerations", a)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def state_at(self, t: float) -> QuadState:
        """Linearly interpolated state at clamped trajectory time t."""
        ts = self.times
        t = min(max(t, ts[0]), ts[-1])
        i = int(np.searchsorted(ts, t, side="right") - 1)
        i = min(i, len(ts) - 2)
        u = (t - ts[i]) / (ts[i + 1] - ts[i])
        lerp = lambda arr: arr[i] + u * (arr[i + 1] - arr[i])  # noqa: E731
        return QuadState(lerp(self.positions), lerp(self.velocities),
                         lerp(self.accelerations))

    def index_at(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t, side="right") - 1)
        return min(max(i, 0), len(self) - 1)


def load_global_trajectory(path) -> GlobalTrajectory:
    """Read whitespace-separated rows: t x y z vx vy vz ax ay az ('#' comments)."""
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 10:
                raise ValueError(f"{path}:{lineno}: expected 10 fields, got {len(parts)}")
            try:
                rows.append([float(x) for x in parts])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if len(rows) < 2:
        raise ValueError(f"{path}: fewer than 2 trajectory points")
    arr = np.asarray(rows)
    return GlobalTrajectory(arr[:, 0], arr[:, 1:4], arr[:, 4:7], arr[:, 7:10])


def save_global_trajectory(g: GlobalTrajectory, path, indices=None) -> None:
    """Write rows in the trajectory file format, optionally a subset of points."""
    idx = range(len(g)) if indices is None else indices
    with open(path, "w") as fh:
        for i in idx:
            row = [g.times[i], *g.positions[i], *g.velocities[i], *g.accelerations[i]]
            fh.write(" ".join(f"{x:.9g}" for x in row) + "\n")


@dataclass(frozen=True)
class FusionConfig:
    """Key-point extraction and merge thresholds."""

    delta_theta: float = np.radians(15.0)
    max_gap: int = 20       # C: max points between consecutive key points
    second_index: int = 5   # n_s1: 1-based index of the seeded second key point
    d_c: float = 0.5
    check_horizon: float = 1.5

    def __post_init__(self):
        if self.delta_theta <= 0.0 or self.d_c <= 0.0 or self.check_horizon <= 0.0:
            raise ValueError("thresholds must be positive")
        if self.max_gap < 1 or self.second_index < 2:
            raise ValueError("max_gap must be >= 1 and second_index >= 2")


@dataclass(frozen=True)
class KeyPolyline:
    """Key points approximating a global path, with their source indices."""

    points: np.ndarray
    indices: tuple
    source: GlobalTrajectory

    def __len__(self) -> int:
        return len(self.indices)

    def closest_segment(self, a0, a1):
        """Polyline segment closest to segment (a0, a1).

        Returns (distance, segment_index, point_on_polyline, parameter).
        """
        best = None
        for j in range(len(self.points) - 1):
            d, _, pb, _, t = segment_closest_points(a0, a1, self.points[j],
                                                    self.points[j + 1])
            if best is None or d < best[0]:
                best = (d, j, pb, t)
        return best


def _point_line_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from points to the infinite line through a and b."""
    ab = b - a
    n = float(np.linalg.norm(ab))
    if n < 1e-12:
        return np.linalg.norm(points - a, axis=1)
    diff = points - a
    cross = np.cross(diff, ab / n)
    return np.linalg.norm(cross, axis=1)


def _turn_angle(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu < 1e-12 or nv < 1e-12:
        return 0.0
    c = float(np.dot(u, v)) / (nu * nv)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def select_key_points(g: GlobalTrajectory, cfg: FusionConfig) -> KeyPolyline:
    """Curvature-adaptive key points on the global path.

    Scans the dense points once. Whenever the direction from the last key
    point to the scan point turns more than delta_theta away from the last
    key segment, the intermediate point farthest from the chord is inserted
    and the scan restarts there; runs longer than max_gap points insert the
    scan point directly. First, second (index second_index) and last points
    are always key points.
    """
    J = len(g)
    if J < cfg.second_index:
        raise ValueError(f"need at least {cfg.second_index} points, got {J}")
    pts = g.positions
    key_idx = [0, cfg.second_index - 1]
    j = cfg.second_index - 1   # current scan position (0-based)
    c = 0
    while j < J - 1:
        j += 1
        c += 1
        m = key_idx[-1]
        prev = key_idx[-2]
        angle = _turn_angle(pts[m] - pts[prev], pts[j] - pts[m])
        if angle > cfg.delta_theta:
            span = pts[m:j + 1]
            dists = _point_line_distances(span, pts[m], pts[j])
            h = m + int(np.argmax(dists))
            if h <= m:
                h = j  # degenerate: turn sits exactly on the last key point
            key_idx.append(h)
            c = 0
            j = h
        elif c > cfg.max_gap:
            key_idx.append(j)
            c = 0
    if key_idx[-1] != J - 1:
        key_idx.append(J - 1)
    return KeyPolyline(pts[key_idx].copy(), tuple(key_idx), g)


def global_risk_check(field: ParticleField, g: GlobalTrajectory, now_index: int,
                      cfg: FusionConfig, risk_cfg: RiskConfig,
                      time_offset: float = 0.0) -> float:
    """Risk of the upcoming check_horizon seconds of the global path.

    Corridors come from consecutive trajectory points; each segment is
    queried at its own timestamp offset from the now_index point, optionally
    shifted by time_offset (vehicle time minus point time).
    """
    if not 0 <= now_index < len(g):
        raise ValueError(f"now_index {now_index} out of range")
    if now_index >= len(g) - 1:
        return 0.0
    t0 = g.times[now_index]
    end = t0 + cfg.check_horizon
    hi = now_index + 1
    while hi < len(g) and g.times[hi] <= end:
        hi += 1
    hi = max(hi, now_index + 2)
    pts = g.positions[now_index:hi]
    rel_times = g.times[now_index:hi] - t0 + time_offset
    segments = polyline_corridor(pts, rel_times, risk_cfg)
    return corridor_risk(field, segments)


@dataclass(frozen=True)
class MergeInfo:
    """Where and how a primitive rejoins the global path."""

    distance: float
    point: np.ndarray
    segment_index: int
    parameter: float
    reentry_index: int
    reentry_time: float


@dataclass(frozen=True)
class MergedPrimitive(MotionPrimitive):
    """Fan primitive whose endpoint was relocated onto the global path."""

    merge_info: Optional[MergeInfo] = None


def fused_cost(m: MotionPrimitive, risk1: float, risk2: float, goal, theta_last,
               d: float, cfg: PlannerConfig, fusion_cfg: FusionConfig) -> float:
    """rank_cost plus the connection term pulling primitives toward the path."""
    return (rank_cost(m, risk1, risk2, goal, theta_last, cfg)
            + cfg.lambdas[3] * connection_cost(d, fusion_cfg.d_c))


def connection_cost(d: float, d_c: float) -> float:
    return 0.0 if d <= d_c else (d - d_c) ** 2


def _reentry_index(key: KeyPolyline, seg_idx: int, param: float) -> int:
    lo = key.indices[seg_idx]
    hi = key.indices[seg_idx + 1]
    return int(round(lo + param * (hi - lo)))


def try_merge(sampling_segment, key: KeyPolyline, start: QuadState,
              cfg: FusionConfig, sampler: SamplerConfig) -> Optional[MergedPrimitive]:
    """Build a primitive ending on the global path near a sampling segment.

    The closest polyline segment to the sampling line L is found first; if it
    is within d_c, the primitive endpoint moves to the closest point on it,
    taking velocity and acceleration from the nearest global point. When the
    quintic to that endpoint is infeasible the endpoint slides along the
    polyline segment in 0.1-segment-length steps, up to five each way.
    """
    a0, a1 = (vec3(sampling_segment[0]), vec3(sampling_segment[1]))
    d, seg_idx, p_d, param = key.closest_segment(a0, a1)
    if d > cfg.d_c:
        return None
    lo = key.points[seg_idx]
    hi = key.points[seg_idx + 1]
    seg_vec = hi - lo
    seg_len = float(np.linalg.norm(seg_vec))
    offsets = [0.0]
    for k in range(1, 6):
        offsets.extend([k * 0.1, -k * 0.1])
    for off in offsets:
        if seg_len < 1e-9 and off != 0.0:
            break
        p = param + off
        if not 0.0 <= p <= 1.0:
            continue
        endpoint = lo + p * seg_vec
        reentry = _reentry_index(key, seg_idx, p)
        end_state = QuadState(endpoint, key.source.velocities[reentry],
                              key.source.accelerations[reentry])
        prim = _merge_primitive(start, end_state, sampler)
        if prim is not None:
            info = MergeInfo(float(d), endpoint, int(seg_idx), float(p),
                             reentry, float(key.source.times[reentry]))
            return MergedPrimitive(
                segment=prim.segment, t0=prim.t0, tp=prim.tp, tf=prim.tf,
                direction=prim.direction, end_state=prim.end_state,
                junction_state=prim.junction_state, merge_info=info,
            )
    return None


def _merge_primitive(start: QuadState, end: QuadState,
                     cfg: SamplerConfig) -> Optional[MotionPrimitive]:
    """Feasible quintic from start to an arbitrary end state (merge connector)."""
    offset = end.position - start.position
    dist = float(np.linalg.norm(offset))
    if dist < 1e-6:
        return None
    direction = offset / dist
    az = float(np.arctan2(direction[1], direction[0]))
    el = float(np.arcsin(np.clip(direction[2], -1.0, 1.0)))
    for T in candidate_durations(cfg, distance=dist, start_speed=start.speed):
        coeffs = min_jerk_coeffs(start.position, start.velocity, start.acceleration,
                                 end.position, end.velocity, end.acceleration, T)
        seg = QuinticSegment(coeffs, T)
        if check_feasible(seg, cfg.v_max, cfg.a_max):
            tp = cfg.phase1_fraction * T
            return MotionPrimitive(seg, 0.0, tp, T, (az, el),
                                   seg.state_at(T), seg.state_at(tp))
    return None


class FusionHook:
    """Per-direction merge attempts and connection costs fed to the planner."""

    def __init__(self, key: KeyPolyline, fusion_cfg: FusionConfig,
                 sampler_cfg: SamplerConfig):
        self.key = key
        self.fusion_cfg = fusion_cfg
        self.sampler_cfg = sampler_cfg

    def attempt(self, start: QuadState, direction3, angles):
        """Sampling line first, then a merge try when within d_c."""
        a0 = start.position
        a1 = start.position + self.sampler_cfg.radius * direction3
        d, seg_idx, p_d, param = self.key.closest_segment(a0, a1)
        merged = None
        info = None
        if d <= self.fusion_cfg.d_c:
            merged = try_merge((a0, a1), self.key, start,
                               self.fusion_cfg, self.sampler_cfg)
            if merged is not None:
                info = merged.merge_info
        return float(d), merged, info

    def connection_cost(self, d) -> float:
        if d is None:
            return 0.0
        return connection_cost(d, self.fusion_cfg.d_c)


def subgoal_on_global(g: GlobalTrajectory, now_index: int, bounds: Box) -> np.ndarray:
    """Intersection of the global path ahead with the local map boundary.

    Walks forward from now_index; the first bounds crossing is interpolated,
    and if the path never leaves the map the final point is the subgoal.
    """
    prev = g.positions[now_index]
    if not bool(bounds.contains(prev)[0]):
        return prev.copy()
    for i in range(now_index + 1, len(g)):
        cur = g.positions[i]
        if bool(bounds.contains(cur)[0]):
            prev = cur
            continue
        lo, hi = 0.0, 1.0
        for _ in range(40):  # bisect the crossing on the segment
            mid = 0.5 * (lo + hi)
            if bool(bounds.contains(prev + mid * (cur - prev))[0]):
                lo = mid
            else:
                hi = mid
        return prev + lo * (cur - prev)
    return g.positions[-1].copy()


MODE_GLOBAL = "global"
MODE_LOCAL = "local"
MODE_MERGE = "merge"
MODE_FROZEN = "frozen"


@dataclass
class SupervisorDiag:
    mode: str = MODE_GLOBAL
    risk: float = 0.0
    merge_distance: Optional[float] = None
    latency_us: float = 0.0


class Supervisor:
    """Mode machine fusing the local planner with a preplanned trajectory.

    Follows the global path while its look-ahead risk stays under delta;
    otherwise plans fused local pieces, commits to a merge connector when one
    wins, and resumes global following at the connector's re-entry point.
    """

    def __init__(self, g: GlobalTrajectory, planner_cfg: PlannerConfig,
                 sampler_cfg: SamplerConfig, risk_cfg: RiskConfig,
                 fusion_cfg: FusionConfig):
        self.g = g
        self.key = select_key_points(g, fusion_cfg)  # cached once, offline
        self.planner_cfg = planner_cfg
        self.sampler_cfg = sampler_cfg
        self.risk_cfg = risk_cfg
        self.fusion_cfg = fusion_cfg
        self.hook = FusionHook(self.key, fusion_cfg, sampler_cfg)
        self.mode = MODE_GLOBAL
        self.time_offset: Optional[float] = None  # sim time - global time
        self.plan_result: Optional[PlanResult] = None
        self._hold: Optional[QuadState] = None

    # -- queries -----------------------------------------------------------

    def global_time(self, now: float) -> float:
        return now - self.time_offset

    def command_state(self, now: float) -> QuadState:
        if self.mode == MODE_GLOBAL:
            return self.g.state_at(self.global_time(now))
        pr = self.plan_result
        if pr is not None and pr.found:
            t = min(max(now - pr.trajectory.start_time, 0.0), pr.trajectory.duration)
            return pr.trajectory.state_at(t)
        return self._hold if self._hold is not None else self.g.state_at(self.g.times[0])

    def finished(self, now: float) -> bool:
        return self.mode == MODE_GLOBAL and self.global_time(now) >= self.g.times[-1]

    # -- stepping ------------------------------------------------------------

    def step(self, now: float, field: ParticleField,
             vehicle_state: QuadState) -> SupervisorDiag:
        """One replan-rate supervision cycle; returns mode diagnostics."""
        if self.time_offset is None:
            self.time_offset = now - float(self.g.times[0])
        self._hold = vehicle_state
        diag = SupervisorDiag(mode=self.mode)

        if self.mode == MODE_GLOBAL:
            gt = self.global_time(now)
            idx = self.g.index_at(gt)
            risk = global_risk_check(field, self.g, idx, self.fusion_cfg,
                                     self.risk_cfg, time_offset=gt - self.g.times[idx])
            diag.risk = risk
            if not is_safe(risk, self.planner_cfg.delta):
                self._enter_local(now, field, vehicle_state)
                diag.mode = self.mode
            return diag

        if self.mode == MODE_MERGE:
            pr = self.plan_result
            end = pr.pieces[-1].end_time
            if now >= end - 1e-9:
                # arrived: resume the global timeline at the re-entry point
                self.time_offset = now - pr.merge.reentry_time
                self.mode = MODE_GLOBAL
                self.plan_result = None
                diag.mode = self.mode
                return diag
            updated = replan_tick(pr, field, now, vehicle_state, self._local_goal(field, vehicle_state),
                                  self.planner_cfg, self.sampler_cfg, self.risk_cfg,
                                  fusion=self.hook)
            self._adopt(updated, diag)
            return diag

        # local or frozen: (re)plan with fused costs and merge attempts
        goal = self._local_goal(field, vehicle_state)
        if self.plan_result is not None and self.plan_result.found:
            updated = replan_tick(self.plan_result, field, now, vehicle_state, goal,
                                  self.planner_cfg, self.sampler_cfg, self.risk_cfg,
                                  fusion=self.hook)
        else:
            updated = plan(field, vehicle_state, goal, None, self.planner_cfg,
                           self.sampler_cfg, self.risk_cfg, start_time=now,
                           fusion=self.hook)
        self._adopt(updated, diag)
        return diag

    # -- internals -----------------------------------------------------------

    def _local_goal(self, field: ParticleField, vehicle_state: QuadState) -> np.ndarray:
        idx = self._nearest_global_index(vehicle_state.position)
        return subgoal_on_global(self.g, idx, field.bounds)

    def _nearest_global_index(self, position: np.ndarray) -> int:
        d = np.linalg.norm(self.g.positions - position[None, :], axis=1)
        return int(np.argmin(d))

    def _enter_local(self, now, field, vehicle_state):
        goal = self._local_goal(field, vehicle_state)
        result = plan(field, vehicle_state, goal, None, self.planner_cfg,
                      self.sampler_cfg, self.risk_cfg, start_time=now,
                      fusion=self.hook)
        self.plan_result = result
        self.mode = (MODE_MERGE if result.found and result.merge is not None
                     else MODE_LOCAL if result.found else MODE_FROZEN)

    def _adopt(self, result: PlanResult, diag: SupervisorDiag):
        self.plan_result = result
        if not result.found:
            self.mode = MODE_FROZEN
        elif result.merge is not None:
            self.mode = MODE_MERGE
            diag.merge_distance = result.merge.distance
        else:
            self.mode = MODE_LOCAL
        diag.mode = self.mode
