"""Uniform direction-angle fans of two-phase motion primitives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .trajectory import (
    QuadState,
    QuinticSegment,
    _polyval_pva,
    check_feasible,
    feasible_mask,
    min_jerk_coeffs,
    reachable_distance,
)

HALF_PI = 0.5 * np.pi

# plan to 98% of the speed limit: turning quintics transiently overshoot the
# boundary speed by ~1% and would otherwise fail the limit check
CRUISE_FRACTION = 0.98


@dataclass(frozen=True)
class SamplerConfig:
    """Fan geometry, kinematic limits and the duration heuristic.

    chain_accel_fraction bounds the acceleration left at the phase junction:
    pieces are chained from junction states, and a junction loaded beyond
    roughly half of a_max leaves the next fan with no feasible continuation.
    """

    n_azimuth: int = 15
    n_elevation: int = 5
    azimuth_span: float = np.radians(150.0)
    elevation_span: float = np.radians(60.0)
    radius: float = 2.0
    v_max: float = 3.0
    a_max: float = 4.0
    phase1_fraction: float = 0.4
    duration_scales: tuple = (1.0, 1.25, 1.5, 2.0, 3.0)
    chain_accel_fraction: float = 0.5

    def __post_init__(self):
        if min(self.n_azimuth, self.n_elevation) < 1:
            raise ValueError("angle counts must be >= 1")
        if min(self.azimuth_span, self.elevation_span) <= 0.0:
            raise ValueError("angle spans must be positive")
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")
        if min(self.v_max, self.a_max) <= 0.0:
            raise ValueError("limits must be positive")
        if not 0.0 < self.phase1_fraction < 1.0:
            raise ValueError("phase1_fraction must be in (0, 1)")
        if not self.duration_scales:
            raise ValueError("duration_scales must be non-empty")


@dataclass(frozen=True)
class MotionPrimitive:
    """One sampled candidate: a quintic split into two phases at tp."""

    segment: QuinticSegment
    t0: float
    tp: float
    tf: float
    direction: tuple
    end_state: QuadState
    junction_state: QuadState

    def __post_init__(self):
        if not self.t0 < self.tp < self.tf:
            raise ValueError("phase times must satisfy t0 < tp < tf")

    def phase1_window(self) -> tuple:
        return (self.t0, self.tp)

    def phase2_window(self) -> tuple:
        return (self.tp, self.tf)

    def phase1_segment(self) -> QuinticSegment:
        return self.segment.truncated(self.tp - self.t0)


def split_phases(m: MotionPrimitive) -> tuple:
    """Two half-open-in-spirit windows [t0, tp] and [tp, tf]."""
    return m.phase1_window(), m.phase2_window()


def direction_vector(azimuth: float, elevation: float) -> np.ndarray:
    ce = np.cos(elevation)
    return np.array([ce * np.cos(azimuth), ce * np.sin(azimuth), np.sin(elevation)])


def heading_angles(heading) -> tuple:
    h = np.asarray(heading, dtype=float)
    az = float(np.arctan2(h[1], h[0]))
    el = float(np.arcsin(np.clip(h[2] / max(np.linalg.norm(h), 1e-12), -1.0, 1.0)))
    return az, el


def _angle_grid(center: float, span: float, count: int) -> np.ndarray:
    if count == 1:
        return np.array([center])
    step = span / (count - 1)
    offsets = (np.arange(count) - (count - 1) / 2.0) * step
    return center + offsets


def sample_directions(heading, cfg: SamplerConfig, coarse: bool = False):
    """Uniform (azimuth, elevation) grid centered on the heading.

    Coarse mode halves both counts (rounding up). Elevations are clamped to
    +/- pi/2 so direction vectors never point backwards through the pole.
    """
    az0, el0 = heading_angles(heading)
    n_az = -(-cfg.n_azimuth // 2) if coarse else cfg.n_azimuth
    n_el = -(-cfg.n_elevation // 2) if coarse else cfg.n_elevation
    azimuths = _angle_grid(az0, cfg.azimuth_span, n_az)
    elevations = np.clip(_angle_grid(el0, cfg.elevation_span, n_el), -HALF_PI, HALF_PI)
    return [(float(az), float(el)) for az in azimuths for el in elevations]


def cruise_speed(start_speed: float, duration: float, cfg: SamplerConfig,
                 distance: Optional[float] = None) -> float:
    """End speed of the duration heuristic.

    Bounded by v_max, by an acceleration ramp from the start speed, and by a
    distance-consistent term 2*distance/duration - start_speed: without the
    last bound, long-duration candidates keep v_max end speeds and demand
    infeasible mid-segment braking, freezing the planner at cruise speed.
    """
    dist = cfg.radius if distance is None else distance
    ramp = start_speed + cfg.a_max * duration * 0.5
    consistent = max(2.0 * dist / duration - start_speed, 0.2 * cfg.v_max)
    return min(CRUISE_FRACTION * cfg.v_max, ramp, consistent)


def candidate_durations(cfg: SamplerConfig, distance: Optional[float] = None,
                        start_speed: float = 0.0):
    """Durations tried in order by the heuristic (shortest first).

    The base duration targets the planning cruise speed (so steady straight
    cruising is exactly the shortest candidate). Durations whose
    acceleration-limited reach from the start speed cannot cover the sampling
    distance are dropped up front; they could never pass the limit check.
    """
    dist = cfg.radius if distance is None else distance
    base = dist / (CRUISE_FRACTION * cfg.v_max)
    return [base * s for s in cfg.duration_scales
            if reachable_distance(start_speed, base * s, cfg.v_max, cfg.a_max)
            >= dist * (1.0 - 1e-9)]


def make_primitive(start: QuadState, direction, cfg: SamplerConfig) -> Optional[MotionPrimitive]:
    """Primitive toward a direction angle pair, or None when infeasible.

    The end position sits cfg.radius along the direction; the end velocity is
    the heuristic cruise speed along it with zero end acceleration. The first
    duration candidate whose quintic respects v_max/a_max wins.
    """
    az, el = direction
    dir_vec = direction_vector(az, el)
    end_pos = start.position + cfg.radius * dir_vec
    start_speed = start.speed
    a_junction2 = (cfg.chain_accel_fraction * cfg.a_max) ** 2
    for T in candidate_durations(cfg, start_speed=start_speed):
        end_vel = cruise_speed(start_speed, T, cfg) * dir_vec
        coeffs = min_jerk_coeffs(start.position, start.velocity, start.acceleration,
                                 end_pos, end_vel, np.zeros(3), T)
        seg = QuinticSegment(coeffs, T)
        if not check_feasible(seg, cfg.v_max, cfg.a_max):
            continue
        prim = _finish_primitive(seg, (az, el), cfg)
        aj = prim.junction_state.acceleration
        if float(aj @ aj) <= a_junction2:
            return prim
    return None


def _finish_primitive(seg: QuinticSegment, direction, cfg: SamplerConfig) -> MotionPrimitive:
    tp = cfg.phase1_fraction * seg.duration
    return MotionPrimitive(
        segment=seg,
        t0=0.0,
        tp=tp,
        tf=seg.duration,
        direction=(float(direction[0]), float(direction[1])),
        end_state=seg.state_at(seg.duration),
        junction_state=seg.state_at(tp),
    )


def build_fan(start: QuadState, directions, cfg: SamplerConfig):
    """Feasible primitives for a direction list, all durations in one batch.

    Returns a list aligned with directions; infeasible entries are None. The
    batch evaluates the same closed forms and the same feasibility sampling
    grid as make_primitive, so results match it exactly; per direction the
    shortest feasible duration wins, as there.
    """
    n = len(directions)
    if n == 0:
        return []
    angles = np.asarray(directions, dtype=float)
    ce = np.cos(angles[:, 1])
    dirs = np.stack([ce * np.cos(angles[:, 0]), ce * np.sin(angles[:, 0]),
                     np.sin(angles[:, 1])], axis=1)
    end_pos = start.position[None, :] + cfg.radius * dirs
    start_speed = start.speed
    out = [None] * n
    durations = candidate_durations(cfg, start_speed=start_speed)
    if not durations:
        return out
    n_t = len(durations)
    # rows ordered duration-major: row = ti * n + di
    T_rows = np.repeat(np.asarray(durations), n)[:, None]
    v_rows = np.repeat([cruise_speed(start_speed, T, cfg) for T in durations], n)
    dirs_rows = np.tile(dirs, (n_t, 1))
    coeffs = min_jerk_coeffs(
        np.broadcast_to(start.position, (n_t * n, 3)),
        np.broadcast_to(start.velocity, (n_t * n, 3)),
        np.broadcast_to(start.acceleration, (n_t * n, 3)),
        np.tile(end_pos, (n_t, 1)),
        v_rows[:, None] * dirs_rows,
        np.zeros((n_t * n, 3)),
        T_rows,
    )
    ok = feasible_mask(coeffs, T_rows[:, 0], cfg.v_max, cfg.a_max).reshape(n_t, n)
    # junction-chainability: reject rows whose phase-junction acceleration is
    # too high for the next piece to continue from
    a_junction2 = (cfg.chain_accel_fraction * cfg.a_max) ** 2
    jstates = {}
    for ti in range(n_t):
        hits = np.flatnonzero(ok[ti])
        if hits.size == 0:
            continue
        T = durations[ti]
        tp = cfg.phase1_fraction * T
        rows = ti * n + hits
        p, v, a = _polyval_pva(coeffs[rows], np.array([tp, T]))
        aj2 = np.sum(a[:, :, 0] * a[:, :, 0], axis=1)
        ok[ti, hits] = aj2 <= a_junction2
        for row, i in enumerate(hits):
            jstates[(ti, int(i))] = (p[row], v[row], a[row])
    first = np.where(ok.any(axis=0), ok.argmax(axis=0), -1)
    for i in range(n):
        ti = int(first[i])
        if ti < 0:
            continue
        T = durations[ti]
        tp = cfg.phase1_fraction * T
        seg = QuinticSegment(coeffs[ti * n + i], T)
        p, v, a = jstates[(ti, i)]
        junction = QuadState._raw(p[:, 0].copy(), v[:, 0].copy(), a[:, 0].copy())
        end = QuadState._raw(p[:, 1].copy(), v[:, 1].copy(), a[:, 1].copy())
        out[i] = MotionPrimitive(seg, 0.0, tp, T, directions[i], end, junction)
    return out
