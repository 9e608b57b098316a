"""Risk-checking corridors and discrete spatio-temporal risk accumulation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import OrientedCuboid, corridor_frame, ordered_weight_sum, vec3
from .particles import ParticleField
from .trajectory import PiecewiseTrajectory, QuinticSegment

_SPEED_EPS = 1e-3  # below this the corridor falls back to a fixed axis


@dataclass(frozen=True)
class RiskConfig:
    """Discretization step and vehicle envelope for corridor construction."""

    dt: float = 0.05
    envelope_l: float = 0.5
    envelope_w: float = 0.5
    len_min: float = 0.05

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if min(self.envelope_l, self.envelope_w, self.len_min) <= 0.0:
            raise ValueError("envelope dimensions and len_min must be positive")


@dataclass(frozen=True)
class CorridorSegment:
    """One time step of the swept corridor.

    center is the path point p(t_start); the cuboid itself spans from there
    along axis (midpoint-advanced) so consecutive cuboids tile the path.
    """

    center: np.ndarray
    axis: np.ndarray
    length: float
    cross_section: tuple
    t_start: float

    def __post_init__(self):
        object.__setattr__(self, "center", vec3(self.center))
        object.__setattr__(self, "axis", vec3(self.axis))

    def cuboid(self) -> OrientedCuboid:
        frame = corridor_frame(self.axis)
        l, w = self.cross_section
        half = np.array([0.5 * self.length, 0.5 * l, 0.5 * w])
        return OrientedCuboid(self.center + 0.5 * self.length * self.axis, frame, half)


def build_corridor(traj, window, cfg: RiskConfig, fallback_axis=None):
    """Corridor segments for traj over the local-time window [t_a, t_b].

    The window is split into ceil((t_b - t_a) / dt) steps; each segment sits
    at p(t_j) pointing along the local velocity. When the speed drops under
    1 mm/s the axis falls back to the previous segment's axis, then to
    fallback_axis, then to world-x, with length clamped to len_min.
    """
    t_a, t_b = float(window[0]), float(window[1])
    duration = traj.duration
    if not (0.0 <= t_a < t_b <= duration + 1e-9):
        raise ValueError(f"invalid window [{t_a}, {t_b}] for duration {duration}")
    n = int(np.ceil((t_b - t_a) / cfg.dt - 1e-12))
    segments = []
    prev_axis = None
    for j in range(n):
        t_j = t_a + j * cfg.dt
        step = min(cfg.dt, t_b - t_j)
        state = traj.state_at(min(t_j, duration))
        speed = state.speed
        if speed >= _SPEED_EPS:
            axis = state.velocity / speed
            prev_axis = axis
        elif prev_axis is not None:
            axis = prev_axis
        elif fallback_axis is not None:
            axis = vec3(fallback_axis)
            axis = axis / np.linalg.norm(axis)
            prev_axis = axis
        else:
            axis = np.array([1.0, 0.0, 0.0])
        length = max(speed * step, cfg.len_min)
        segments.append(
            CorridorSegment(state.position, axis, float(length),
                            (cfg.envelope_l, cfg.envelope_w), t_j)
        )
    return segments


def corridor_risk(field: ParticleField, segments, time_offset: float = 0.0) -> float:
    """Sum of predicted particle weight over corridor segments.

    Each segment is queried at its own time t_start + time_offset, measured
    from the field snapshot. Per-segment sums run in ascending particle
    order and accumulate in segment order (the library-wide convention).
    """
    total = 0.0
    for seg in segments:
        total += field.weight_in(seg.cuboid(), dt=max(time_offset + seg.t_start, 0.0))
    return total


def trajectory_risk(field: ParticleField, traj, window, cfg: RiskConfig,
                    time_offset: float = 0.0, fallback_axis=None) -> float:
    """Discrete risk of traj over the window against a field snapshot."""
    segments = build_corridor(traj, window, cfg, fallback_axis=fallback_axis)
    return corridor_risk(field, segments, time_offset)


def is_safe(risk: float, delta: float) -> bool:
    """Admission rule: strictly below the risk threshold."""
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    return risk < delta


def polyline_corridor(points, times, cfg: RiskConfig):
    """Corridor segments over consecutive polyline points with timestamps.

    Used for risk-checking a stretch of a preplanned trajectory: segment i
    spans points[i] -> points[i+1] and is queried at times[i].
    """
    points = np.asarray(points, dtype=float)
    times = np.asarray(times, dtype=float)
    if len(points) != len(times) or len(points) < 2:
        raise ValueError("need matching points/times with at least two entries")
    segments = []
    prev_axis = np.array([1.0, 0.0, 0.0])
    for i in range(len(points) - 1):
        chord = points[i + 1] - points[i]
        norm = float(np.linalg.norm(chord))
        axis = chord / norm if norm >= 1e-9 else prev_axis
        prev_axis = axis
        segments.append(
            CorridorSegment(points[i], axis, max(norm, cfg.len_min),
                            (cfg.envelope_l, cfg.envelope_w), float(times[i]))
        )
    return segments
