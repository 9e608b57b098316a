"""K-piece risk-aware sampling planner with backtracking and rolling replans."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import Box, ordered_weight_sum, wrap_angle
from .particles import ParticleField
from .risk import RiskConfig, is_safe, trajectory_risk
from .sampler import (
    MotionPrimitive,
    SamplerConfig,
    build_fan,
    direction_vector,
    heading_angles,
    sample_directions,
)
from .trajectory import PiecewiseTrajectory, QuadState, _polyval_pva

_UP_PARALLEL_COS = float(np.cos(np.radians(5.0)))
_WORLD_UP = np.array([0.0, 0.0, 1.0])
_WORLD_X = np.array([1.0, 0.0, 0.0])

try:
    import numba as _numba

    @_numba.njit(cache=True)
    def _corridor_kernel(coeffs, ts, steps, fallback, len_min, env_l, env_w,
                         up_cos, centers, frames, half, clo, chi):
        """Corridor geometry for a fan: axes, frames, cuboids, AABBs.

        Evaluates the quintics with the library's Horner scheme and mirrors
        build_corridor/corridor_frame arithmetic exactly (same
        normalizations, same fallback chain, same half sizes).
        """
        g = coeffs.shape[0]
        m = ts.shape[0]
        pnt = np.empty(3)
        velo = np.empty(3)
        for gi in range(g):
            px = fallback[gi, 0]
            py = fallback[gi, 1]
            pz = fallback[gi, 2]
            for j in range(m):
                t = ts[j]
                for ax3 in range(3):
                    c0 = coeffs[gi, ax3, 0]
                    c1 = coeffs[gi, ax3, 1]
                    c2 = coeffs[gi, ax3, 2]
                    c3 = coeffs[gi, ax3, 3]
                    c4 = coeffs[gi, ax3, 4]
                    c5 = coeffs[gi, ax3, 5]
                    p = c5 * t
                    p = (p + c4) * t
                    p = (p + c3) * t
                    p = (p + c2) * t
                    p = (p + c1) * t
                    pnt[ax3] = p + c0
                    v = 5.0 * c5 * t
                    v = (v + 4.0 * c4) * t
                    v = (v + 3.0 * c3) * t
                    v = (v + 2.0 * c2) * t
                    velo[ax3] = v + c1
                vx = velo[0]
                vy = velo[1]
                vz = velo[2]
                sp = math.sqrt(vx * vx + vy * vy + vz * vz)
                if sp >= 1e-3:
                    px = vx / sp
                    py = vy / sp
                    pz = vz / sp
                length = sp * steps[j]
                if length < len_min:
                    length = len_min
                # re-unitize like corridor_frame
                nrm = math.sqrt(px * px + py * py + pz * pz)
                ax = px / nrm
                ay = py / nrm
                az = pz / nrm
                if abs(az) > up_cos:  # near vertical: y' = cross(world_x, axis)
                    yx = 0.0
                    yy = -az
                    yz = ay
                else:  # y' = cross(world_up, axis)
                    yx = -ay
                    yy = ax
                    yz = 0.0
                ny = math.sqrt(yx * yx + yy * yy + yz * yz)
                yx /= ny
                yy /= ny
                yz /= ny
                zx = ay * yz - az * yy
                zy = az * yx - ax * yz
                zz = ax * yy - ay * yx
                frames[gi, j, 0, 0] = ax
                frames[gi, j, 0, 1] = ay
                frames[gi, j, 0, 2] = az
                frames[gi, j, 1, 0] = yx
                frames[gi, j, 1, 1] = yy
                frames[gi, j, 1, 2] = yz
                frames[gi, j, 2, 0] = zx
                frames[gi, j, 2, 1] = zy
                frames[gi, j, 2, 2] = zz
                hl = 0.5 * length
                hy = 0.5 * env_l
                hz = 0.5 * env_w
                half[gi, j, 0] = hl
                half[gi, j, 1] = hy
                half[gi, j, 2] = hz
                cx = pnt[0] + hl * px
                cy = pnt[1] + hl * py
                cz = pnt[2] + hl * pz
                centers[gi, j, 0] = cx
                centers[gi, j, 1] = cy
                centers[gi, j, 2] = cz
                ex = hl * abs(ax) + hy * abs(yx) + hz * abs(zx)
                ey = hl * abs(ay) + hy * abs(yy) + hz * abs(zy)
                ez = hl * abs(az) + hy * abs(yz) + hz * abs(zz)
                clo[gi, j, 0] = cx - ex
                clo[gi, j, 1] = cy - ey
                clo[gi, j, 2] = cz - ez
                chi[gi, j, 0] = cx + ex
                chi[gi, j, 1] = cy + ey
                chi[gi, j, 2] = cz + ez

    @_numba.njit(cache=True)
    def _risk_kernel(centers, frames, half, pred, slab_lo, slab_hi, cw, seg_risk):
        """Per-(primitive, segment) weight sums, accumulated in particle order."""
        g = centers.shape[0]
        m = centers.shape[1]
        n = pred.shape[1]
        for j in range(m):
            for k in range(n):
                px = pred[j, k, 0]
                py = pred[j, k, 1]
                pz = pred[j, k, 2]
                if (px < slab_lo[j, 0] or px > slab_hi[j, 0]
                        or py < slab_lo[j, 1] or py > slab_hi[j, 1]
                        or pz < slab_lo[j, 2] or pz > slab_hi[j, 2]):
                    continue
                w = cw[k]
                for gi in range(g):
                    dx = px - centers[gi, j, 0]
                    dy = py - centers[gi, j, 1]
                    dz = pz - centers[gi, j, 2]
                    lx = frames[gi, j, 0, 0] * dx + frames[gi, j, 0, 1] * dy + frames[gi, j, 0, 2] * dz
                    if abs(lx) > half[gi, j, 0]:
                        continue
                    ly = frames[gi, j, 1, 0] * dx + frames[gi, j, 1, 1] * dy + frames[gi, j, 1, 2] * dz
                    if abs(ly) > half[gi, j, 1]:
                        continue
                    lz = frames[gi, j, 2, 0] * dx + frames[gi, j, 2, 1] * dy + frames[gi, j, 2, 2] * dz
                    if abs(lz) <= half[gi, j, 2]:
                        seg_risk[gi, j] += w

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _HAVE_NUMBA = False


@dataclass(frozen=True)
class PlannerConfig:
    """Planner-level knobs: piece count, risk threshold, cost weights."""

    k_pieces: int = 2
    delta: float = 0.2
    lambdas: tuple = (0.5, 0.35, 0.15, 0.0)
    replan_rate: float = 20.0
    goal_mode: str = "goal_position"
    two_phase: bool = True  # False drops the Phase-2 risk term from the cost

    def __post_init__(self):
        if self.k_pieces < 1:
            raise ValueError("k_pieces must be >= 1")
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")
        lam = tuple(float(x) for x in self.lambdas)
        if len(lam) != 4 or any(x < 0.0 for x in lam):
            raise ValueError("lambdas must be four nonnegative weights")
        if abs(sum(lam) - 1.0) > 1e-12:
            raise ValueError("lambdas must sum to 1")
        object.__setattr__(self, "lambdas", lam)
        if self.replan_rate <= 0.0:
            raise ValueError("replan_rate must be positive")
        if self.goal_mode not in ("goal_position", "goal_direction"):
            raise ValueError(f"unknown goal_mode {self.goal_mode!r}")


@dataclass
class Candidate:
    """One admitted fan entry with its scores."""

    index: int
    primitive: MotionPrimitive
    risk1: float
    risk2: float
    jd: float
    cost: float
    merge: object = None
    merge_distance: Optional[float] = None


class CandidateList:
    """Cost-ranked admitted candidates for one piece, with erase support."""

    def __init__(self, candidates, n_generated: int):
        self.entries = sorted(candidates, key=lambda c: (c.cost, c.jd, c.index))
        self.erased = set()
        self.n_generated = n_generated

    def best(self) -> Optional[Candidate]:
        for c in self.entries:
            if c.index not in self.erased:
                return c
        return None

    def erase(self, index: int) -> None:
        self.erased.add(index)

    def remaining(self) -> int:
        return sum(1 for c in self.entries if c.index not in self.erased)


@dataclass(frozen=True)
class PlannedPiece:
    """A chosen primitive anchored at an absolute start time."""

    primitive: MotionPrimitive
    start_time: float
    risk1: float
    risk2: float
    cost: float

    @property
    def end_time(self) -> float:
        """Absolute end of the flown portion (phase 1, or all of a merge)."""
        flown = self.primitive.tf if self.primitive_is_connector() else self.primitive.tp
        return self.start_time + flown

    def primitive_is_connector(self) -> bool:
        return getattr(self.primitive, "merge_info", None) is not None


@dataclass
class PieceDiag:
    direction: tuple
    risk1: float
    risk2: float
    cost: float
    n_candidates: int
    n_admitted: int


@dataclass
class PlanDiagnostics:
    pieces: list = field(default_factory=list)
    erase_events: int = 0
    selections: int = 0
    latency_us: float = 0.0
    frozen_piece: Optional[int] = None
    note: str = ""


@dataclass(frozen=True)
class PlanResult:
    status: str  # "found" | "frozen"
    pieces: tuple
    trajectory: Optional[PiecewiseTrajectory]
    diagnostics: PlanDiagnostics
    merge: object = None

    @property
    def found(self) -> bool:
        return self.status == "found"


def rank_cost(m: MotionPrimitive, risk1: float, risk2: float, goal,
              theta_last, cfg: PlannerConfig) -> float:
    """Weighted cost: risk sum, junction-to-goal distance, squared turning."""
    l1, l2, l3, _ = cfg.lambdas
    jr = risk1 + risk2
    jg = float(np.linalg.norm(m.junction_state.position - np.asarray(goal, dtype=float)))
    jd = turning_cost(m.direction, theta_last)
    return l1 * jr + l2 * jg + l3 * jd


def turning_cost(direction, theta_last) -> float:
    daz = wrap_angle(direction[0] - theta_last[0])
    del_ = direction[1] - theta_last[1]
    return daz * daz + del_ * del_


def plan(field: ParticleField, start: QuadState, goal, theta_last,
         cfg: PlannerConfig, sampler_cfg: SamplerConfig, risk_cfg: RiskConfig,
         *, start_time: Optional[float] = None, fusion=None, seed=None) -> PlanResult:
    """Plan K phase-1 pieces from start against one field snapshot.

    Piece 1 uses the coarse fan; later pieces chain from junction states and
    use the fine fan. Candidates need phase-1 risk strictly under delta; an
    empty list backtracks by erasing the previous choice, and an empty piece-1
    list freezes. seed is accepted for interface stability; sampling is
    deterministic. start_time anchors the result and should equal the field
    snapshot time for risk prediction offsets to be meaningful.
    """
    t_begin = time.perf_counter()
    now = field.snapshot_time if start_time is None else float(start_time)
    result = _plan_pieces(field, now, [], start, goal, theta_last,
                          cfg, sampler_cfg, risk_cfg, fusion)
    result.diagnostics.latency_us = (time.perf_counter() - t_begin) * 1e6
    return result


def replan_tick(current: PlanResult, field: ParticleField, now: float,
                vehicle_state: QuadState, goal, cfg: PlannerConfig,
                sampler_cfg: SamplerConfig, risk_cfg: RiskConfig,
                *, fusion=None) -> PlanResult:
    """Rolling-horizon update of a found plan against the latest field.

    Finished pieces shift out; the head piece is kept unless a particle
    intrusion pushes its remaining phase-1 risk to delta or above, which
    triggers a full replan from the vehicle state. Later pieces are replanned
    every call from the fixed junction. If the tail replan fails, a complete
    old tail is retained, else a full replan runs.
    """
    t_begin = time.perf_counter()
    if not current.found:
        return plan(field, vehicle_state, goal, None, cfg, sampler_cfg, risk_cfg,
                    start_time=now, fusion=fusion)

    pieces = [p for p in current.pieces if now < p.end_time - 1e-12]
    if not pieces:
        return plan(field, vehicle_state, goal, None, cfg, sampler_cfg, risk_cfg,
                    start_time=now, fusion=fusion)

    head = pieces[0]
    u0 = max(now - head.start_time, 0.0)
    intruded = False
    if u0 < head.primitive.tp - 1e-12:
        rem = trajectory_risk(
            field, head.primitive.segment, (u0, head.primitive.tp), risk_cfg,
            time_offset=head.start_time - now,
            fallback_axis=direction_vector(*head.primitive.direction),
        )
        intruded = not is_safe(rem, cfg.delta)
    if intruded:
        theta = head.primitive.direction
        return plan(field, vehicle_state, goal, theta, cfg, sampler_cfg, risk_cfg,
                    start_time=now, fusion=fusion)

    if head.primitive_is_connector():
        # committed merge connector: fly it out
        diag = PlanDiagnostics(note="merge connector committed")
        diag.latency_us = (time.perf_counter() - t_begin) * 1e6
        return PlanResult("found", tuple(pieces), _pieces_trajectory(pieces),
                          diag, current.merge)

    tail = _plan_pieces(field, now, [head], head.primitive.junction_state, goal,
                        None, cfg, sampler_cfg, risk_cfg, fusion)
    tail.diagnostics.latency_us = (time.perf_counter() - t_begin) * 1e6
    if tail.found:
        return tail
    if len(pieces) >= cfg.k_pieces:
        # keep the previously committed tail rather than erase the live piece
        keep = PlanResult("found", tuple(pieces), _pieces_trajectory(pieces),
                          tail.diagnostics, current.merge)
        keep.diagnostics.note = "tail replan frozen; previous tail retained"
        return keep
    return plan(field, vehicle_state, goal, head.primitive.direction,
                cfg, sampler_cfg, risk_cfg, start_time=now, fusion=fusion)


# ----------------------------------------------------------------------------
# internals


def _plan_pieces(field, now, pinned, start_state, goal, theta_last,
                 cfg, sampler_cfg, risk_cfg, fusion) -> PlanResult:
    """Fig.-4-style selection loop starting after any pinned pieces."""
    diag = PlanDiagnostics()
    k_lo = len(pinned) + 1
    if k_lo > cfg.k_pieces:
        raise ValueError("pinned pieces already cover the horizon")

    starts = {k_lo: start_state}
    offsets = {k_lo: (pinned[-1].end_time - now) if pinned else 0.0}
    lists: dict = {}
    chosen: dict = {}
    k = k_lo
    while True:
        if k not in lists:
            lists[k] = _generate_candidates(
                field, starts[k], offsets[k], goal,
                _theta_for(k, k_lo, theta_last, chosen, pinned, starts[k], goal, cfg),
                coarse=(k == 1), cfg=cfg, sampler_cfg=sampler_cfg,
                risk_cfg=risk_cfg, fusion=fusion,
            )
        cand = lists[k].best()
        if cand is None:
            if k == k_lo:
                diag.frozen_piece = k
                return PlanResult("frozen", (), None, diag)
            lists.pop(k)
            lists[k - 1].erase(chosen[k - 1].index)
            diag.erase_events += 1
            chosen.pop(k - 1)
            k -= 1
            continue
        chosen[k] = cand
        diag.selections += 1
        if cand.merge is not None or k == cfg.k_pieces:
            return _assemble(now, pinned, chosen, lists, k_lo, k, diag, cand.merge)
        starts[k + 1] = cand.primitive.junction_state
        offsets[k + 1] = offsets[k] + cand.primitive.tp
        lists.pop(k + 1, None)
        k += 1


def _theta_for(k, k_lo, theta_last, chosen, pinned, start_state, goal, cfg):
    if k > k_lo:
        return chosen[k - 1].primitive.direction
    if pinned:
        return pinned[-1].primitive.direction
    if theta_last is not None:
        return tuple(theta_last)
    return heading_angles(_heading(start_state, goal, cfg))


def _heading(state: QuadState, goal, cfg: PlannerConfig) -> np.ndarray:
    if state.speed >= 0.1:
        return state.velocity / state.speed
    if cfg.goal_mode == "goal_direction":
        g = np.asarray(goal, dtype=float)
        n = np.linalg.norm(g)
        return g / n if n > 0 else _WORLD_X.copy()
    d = np.asarray(goal, dtype=float) - state.position
    n = np.linalg.norm(d)
    return d / n if n > 1e-9 else _WORLD_X.copy()


def _piece_goal(state: QuadState, goal, cfg: PlannerConfig,
                sampler_cfg: SamplerConfig) -> np.ndarray:
    if cfg.goal_mode == "goal_direction":
        g = np.asarray(goal, dtype=float)
        return state.position + sampler_cfg.radius * (g / np.linalg.norm(g))
    return np.asarray(goal, dtype=float)


def _assemble(now, pinned, chosen, lists, k_lo, k_hi, diag, merge) -> PlanResult:
    pieces = list(pinned)
    t = pinned[-1].end_time if pinned else now
    for k in range(k_lo, k_hi + 1):
        c = chosen[k]
        pieces.append(PlannedPiece(c.primitive, t, c.risk1, c.risk2, c.cost))
        diag.pieces.append(PieceDiag(c.primitive.direction, c.risk1, c.risk2,
                                     c.cost, lists[k].n_generated,
                                     len(lists[k].entries)))
        t += c.primitive.tf if c.merge is not None else c.primitive.tp
    return PlanResult("found", tuple(pieces), _pieces_trajectory(pieces), diag, merge)


def _pieces_trajectory(pieces) -> PiecewiseTrajectory:
    segments = []
    for p in pieces:
        if p.primitive_is_connector():
            segments.append(p.primitive.segment)
        else:
            segments.append(p.primitive.phase1_segment())
    return PiecewiseTrajectory(tuple(segments), start_time=pieces[0].start_time)


def _generate_candidates(field, start, offset, goal, theta_prev, coarse,
                         cfg, sampler_cfg, risk_cfg, fusion) -> CandidateList:
    heading = _heading(start, goal, cfg)
    directions = sample_directions(heading, sampler_cfg, coarse=coarse)
    prims = build_fan(start, directions, sampler_cfg)

    merges = [None] * len(directions)
    merge_ds = [None] * len(directions)
    if fusion is not None:
        for i, (az, el) in enumerate(directions):
            d, merged, info = fusion.attempt(start, direction_vector(az, el), (az, el))
            merge_ds[i] = d
            if merged is not None:
                prims[i] = merged
                merges[i] = info

    piece_goal = _piece_goal(start, goal, cfg, sampler_cfg)
    risks = _fan_phase_risks(field, prims, offset, risk_cfg,
                             two_phase=cfg.two_phase, fusion=fusion)

    live = [i for i, p in enumerate(prims) if p is not None
            and is_safe(risks[i][0], cfg.delta)]
    if not live:
        return CandidateList([], n_generated=len(directions))
    # same cost terms as rank_cost, evaluated for the whole fan at once
    l1, l2, l3, l4 = cfg.lambdas
    junctions = np.stack([prims[i].junction_state.position for i in live])
    angles = np.array([prims[i].direction for i in live])
    jg = np.linalg.norm(junctions - np.asarray(piece_goal, dtype=float), axis=1)
    daz = np.mod(angles[:, 0] - theta_prev[0] + np.pi, 2.0 * np.pi) - np.pi
    dele = angles[:, 1] - theta_prev[1]
    jd = daz * daz + dele * dele
    r12 = np.array([risks[i] for i in live])
    cost = l1 * (r12[:, 0] + r12[:, 1]) + l2 * jg + l3 * jd
    out = []
    for row, i in enumerate(live):
        c = float(cost[row])
        if fusion is not None:
            c += l4 * fusion.connection_cost(merge_ds[i])
        out.append(Candidate(i, prims[i], float(r12[row, 0]), float(r12[row, 1]),
                             float(jd[row]), c, merges[i], merge_ds[i]))
    return CandidateList(out, n_generated=len(directions))


def _fan_phase_risks(field, prims, offset, risk_cfg, two_phase, fusion):
    """Phase-1/phase-2 risks for every primitive in a fan.

    Primitives sharing a duration are evaluated in one vectorized batch with
    the same corridor geometry, membership rule and ordered weight reductions
    as trajectory_risk.
    """
    risks = [None] * len(prims)
    groups: dict = {}
    for i, p in enumerate(prims):
        if p is None:
            continue
        if getattr(p, "merge_info", None) is not None:
            # merged connectors have one-off durations; score them directly
            r1 = trajectory_risk(field, p.segment, p.phase1_window(), risk_cfg,
                                 time_offset=offset,
                                 fallback_axis=direction_vector(*p.direction))
            r2 = 0.0
            if two_phase:
                r2 = trajectory_risk(field, p.segment, p.phase2_window(), risk_cfg,
                                     time_offset=offset,
                                     fallback_axis=direction_vector(*p.direction))
            risks[i] = (r1, r2)
        else:
            groups.setdefault(p.segment.duration, []).append(i)
    for duration, idxs in groups.items():
        batch = _batched_phase_risks(field, [prims[i] for i in idxs],
                                     duration, offset, risk_cfg, two_phase)
        for i, rr in zip(idxs, batch):
            risks[i] = rr
    return risks


def _segment_times(t_a, t_b, dt):
    n = int(np.ceil((t_b - t_a) / dt - 1e-12))
    ts = t_a + np.arange(n) * dt
    steps = np.minimum(dt, t_b - ts)
    return ts, steps


def _batched_phase_risks(field, prims, duration, offset, risk_cfg, two_phase):
    g = len(prims)
    tp = prims[0].tp
    t1, s1 = _segment_times(0.0, tp, risk_cfg.dt)
    if two_phase:
        t2, s2 = _segment_times(tp, duration, risk_cfg.dt)
        ts = np.concatenate([t1, t2])
        steps = np.concatenate([s1, s2])
    else:
        ts, steps = t1, s1
    m1 = len(t1)
    m = len(ts)

    coeffs = np.stack([p.segment.coeffs for p in prims])  # (g, 3, 6)
    fallback = np.stack([direction_vector(*p.direction) for p in prims])

    centers = np.empty((g, m, 3))
    frames = np.empty((g, m, 3, 3))
    half = np.empty((g, m, 3))
    clo = np.empty((g, m, 3))
    chi = np.empty((g, m, 3))
    if _HAVE_NUMBA:
        _corridor_kernel(coeffs, ts, steps, fallback, risk_cfg.len_min,
                         risk_cfg.envelope_l, risk_cfg.envelope_w,
                         _UP_PARALLEL_COS, centers, frames, half, clo, chi)
    else:
        pos, vel = _eval_pos_vel(coeffs, ts)  # (g, m, 3) each
        speeds = np.linalg.norm(vel, axis=2)
        if np.all(speeds >= 1e-3):
            axes = vel / speeds[:, :, None]
        else:
            axes = np.empty((g, m, 3))
            prev = fallback
            for j in range(m):
                sp = speeds[:, j]
                ok = sp >= 1e-3
                safe = np.where(ok, sp, 1.0)
                axes[:, j, :] = np.where(ok[:, None], vel[:, j, :] / safe[:, None], prev)
                prev = axes[:, j, :]
        lengths = np.maximum(speeds * steps[None, :], risk_cfg.len_min)  # (g, m)
        frames = _batched_frames(axes)  # (g, m, 3, 3)
        half[:, :, 0] = 0.5 * lengths
        half[:, :, 1] = 0.5 * risk_cfg.envelope_l
        half[:, :, 2] = 0.5 * risk_cfg.envelope_w
        centers = pos + 0.5 * lengths[:, :, None] * axes
        extent = np.einsum("gmi,gmik->gmk", half, np.abs(frames))
        clo = centers - extent  # (g, m, 3) per-cuboid AABBs
        chi = centers + extent
    dts = np.maximum(offset + ts, 0.0)  # (m,)

    # prune to particles whose predicted motion interval can overlap the fan
    # box at all: per-axis range overlap of the segment pred(dt0)..pred(dtN)
    fan_lo = clo.min(axis=(0, 1))
    fan_hi = chi.max(axis=(0, 1))
    shift_all = field.velocities * field._dyn[:, None].astype(float)
    p0 = field.positions + shift_all * dts[0]
    p1 = field.positions + shift_all * dts[-1]
    span_lo = np.minimum(p0, p1)
    span_hi = np.maximum(p0, p1)
    idx = np.flatnonzero(np.all((span_hi >= fan_lo) & (span_lo <= fan_hi), axis=1))

    seg_risk = np.zeros((g, m))
    if idx.size:
        cpos = field.positions[idx]
        cshift = shift_all[idx]
        cw = field.weights[idx]
        slab_lo = clo.min(axis=0)  # (m, 3) fan-wide AABB per time slice
        slab_hi = chi.max(axis=0)
        pred_all = cpos[None, :, :] + cshift[None, :, :] * dts[:, None, None]
        if _HAVE_NUMBA:
            _risk_kernel(centers, frames, half, np.ascontiguousarray(pred_all),
                         np.ascontiguousarray(slab_lo), np.ascontiguousarray(slab_hi),
                         np.ascontiguousarray(cw), seg_risk)
        else:
            near_all = np.all((pred_all >= slab_lo[:, None, :])
                              & (pred_all <= slab_hi[:, None, :]), axis=2)  # (m, K)
            for j in np.flatnonzero(near_all.any(axis=1)):
                near = np.flatnonzero(near_all[j])
                diff = pred_all[j, near][None, :, :] - centers[:, j, None, :]
                local = np.matmul(frames[:, j], diff.transpose(0, 2, 1))  # (g, 3, k)
                inside = np.all(np.abs(local) <= half[:, j, :, None], axis=1)
                # sequential index-order sums; zeros do not perturb partials
                seg_risk[:, j] = np.einsum("gk,k->g", inside, cw[near])

    out = []
    for gi in range(g):
        r1 = 0.0
        for j in range(m1):
            r1 += seg_risk[gi, j]
        r2 = 0.0
        for j in range(m1, m):
            r2 += seg_risk[gi, j]
        out.append((float(r1), float(r2)))
    return out


def _eval_pos_vel(coeffs, ts):
    """Positions and velocities of (g, 3, 6) coefficient sets at shared times.

    Uses the same Horner evaluation as single-segment queries so the batch
    reproduces build_corridor's geometry exactly.
    """
    p, v, _ = _polyval_pva(coeffs, ts)  # (g, 3, m)
    return np.transpose(p, (0, 2, 1)).copy(), np.transpose(v, (0, 2, 1)).copy()


def _batched_frames(axes):
    """corridor_frame over an (..., 3) axis array (axes re-unitized as there)."""
    x = axes / np.linalg.norm(axes, axis=-1, keepdims=True)
    near_up = np.abs(x @ _WORLD_UP) > _UP_PARALLEL_COS
    seed = np.where(near_up[..., None], _WORLD_X, _WORLD_UP)
    y = np.cross(seed, x)
    y = y / np.linalg.norm(y, axis=-1, keepdims=True)
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-2)
