"""Quintic polynomial trajectories: construction, evaluation, feasibility."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import segment_segment_distance, vec3  # noqa: F401  (re-export)

FEASIBILITY_SAMPLES = 65  # t = i * duration / 64, i = 0..64


@dataclass(frozen=True)
class QuadState:
    """Vehicle state at an instant: position, velocity, acceleration (world frame)."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", vec3(self.position))
        object.__setattr__(self, "velocity", vec3(self.velocity))
        object.__setattr__(self, "acceleration", vec3(self.acceleration))

    @classmethod
    def rest(cls, position) -> "QuadState":
        return cls(position, np.zeros(3), np.zeros(3))

    @classmethod
    def _raw(cls, position, velocity, acceleration) -> "QuadState":
        """Construction from trusted float64 (3,) arrays, skipping validation."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "position", position)
        object.__setattr__(obj, "velocity", velocity)
        object.__setattr__(obj, "acceleration", acceleration)
        return obj

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))


@dataclass(frozen=True)
class QuinticSegment:
    """Per-axis degree-5 polynomial over [0, duration].

    coeffs is a (3, 6) array in ascending degree; row i is the i-th axis.
    """

    coeffs: np.ndarray
    duration: float

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (3, 6):
            raise ValueError(f"coeffs must be (3, 6), got {c.shape}")
        if not np.isfinite(float(c.sum())):  # nan/inf propagate through the sum
            raise ValueError("non-finite polynomial coefficients")
        if not (self.duration > 0.0 and np.isfinite(self.duration)):
            raise ValueError(f"duration must be positive, got {self.duration}")
        object.__setattr__(self, "coeffs", c)

    def state_at(self, t: float) -> QuadState:
        if t < -1e-12 or t > self.duration + 1e-12:
            raise ValueError(f"t={t} outside [0, {self.duration}]")
        p, v, a = _polyval_pva(self.coeffs, np.clip(t, 0.0, self.duration))
        return QuadState(p, v, a)

    def sample(self, ts: np.ndarray):
        """Vectorized evaluation; returns (pos, vel, acc) arrays of shape (len(ts), 3)."""
        p, v, a = _polyval_pva(self.coeffs, np.asarray(ts, dtype=float))
        return p.T, v.T, a.T

    def truncated(self, duration: float) -> "QuinticSegment":
        """Same polynomial restricted to [0, duration]."""
        if not 0.0 < duration <= self.duration + 1e-12:
            raise ValueError("truncation duration outside segment")
        return QuinticSegment(self.coeffs, float(duration))


@dataclass(frozen=True)
class PiecewiseTrajectory:
    """Ordered quintic segments flown back to back, anchored at start_time."""

    segments: tuple
    start_time: float = 0.0

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ValueError("piecewise trajectory needs at least one segment")
        object.__setattr__(self, "segments", segs)

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    def state_at(self, t: float) -> QuadState:
        """State at trajectory-local time t in [0, duration]."""
        if t < -1e-12 or t > self.duration + 1e-12:
            raise ValueError(f"t={t} outside [0, {self.duration}]")
        u = min(max(t, 0.0), self.duration)
        for seg in self.segments[:-1]:
            if u <= seg.duration:
                return seg.state_at(u)
            u -= seg.duration
        last = self.segments[-1]
        return last.state_at(min(u, last.duration))

    def state_at_abs(self, t_abs: float) -> QuadState:
        return self.state_at(t_abs - self.start_time)

    def junction_residuals(self) -> np.ndarray:
        """Max position/velocity/acceleration mismatch over interior junctions."""
        res = np.zeros(3)
        for a, b in zip(self.segments[:-1], self.segments[1:]):
            ea = a.state_at(a.duration)
            sb = b.state_at(0.0)
            res = np.maximum(
                res,
                [
                    np.max(np.abs(ea.position - sb.position)),
                    np.max(np.abs(ea.velocity - sb.velocity)),
                    np.max(np.abs(ea.acceleration - sb.acceleration)),
                ],
            )
        return res


def _horner(c_scaled, t):
    """In-place Horner fold: c_scaled is a list from highest to lowest term."""
    acc = c_scaled[0] * t
    for ck in c_scaled[1:-1]:
        np.add(acc, ck, out=acc)
        np.multiply(acc, t, out=acc)
    np.add(acc, c_scaled[-1], out=acc)
    return acc


def _polyval_pva(coeffs: np.ndarray, t):
    """Position, velocity, acceleration of a (..., 6) ascending-degree polynomial."""
    c = [coeffs[..., k, None] for k in range(6)]
    p = _horner([c[5], c[4], c[3], c[2], c[1], c[0]], t)
    v = _horner([5.0 * c[5], 4.0 * c[4], 3.0 * c[3], 2.0 * c[2], c[1]], t)
    a = _horner([20.0 * c[5], 12.0 * c[4], 6.0 * c[3], 2.0 * c[2]], t)
    if np.ndim(t) == 0:
        return p[..., 0], v[..., 0], a[..., 0]
    return p, v, a


def min_jerk_coeffs(p0, v0, a0, p1, v1, a1, duration):
    """Closed-form jerk-minimizing quintic coefficients for boundary states.

    Inputs broadcast over leading axes; the last axis is the spatial axis.
    Returns ascending-degree coefficients stacked on a new trailing axis (6).
    """
    T = duration
    dp = p1 - p0 - v0 * T - 0.5 * a0 * T * T
    dv = v1 - v0 - a0 * T
    da = a1 - a0
    T2 = T * T
    T3 = T2 * T
    c3 = (10.0 * dp - 4.0 * dv * T + 0.5 * da * T2) / T3
    c4 = (-15.0 * dp + 7.0 * dv * T - da * T2) / (T3 * T)
    c5 = (6.0 * dp - 3.0 * dv * T + 0.5 * da * T2) / (T3 * T2)
    return np.stack(
        [
            np.broadcast_to(p0, c3.shape).astype(float),
            np.broadcast_to(v0, c3.shape).astype(float),
            np.broadcast_to(0.5 * a0, c3.shape).astype(float),
            c3,
            c4,
            c5,
        ],
        axis=-1,
    )


def build_min_jerk(start: QuadState, end: QuadState, duration: float) -> QuinticSegment:
    """Jerk-minimizing quintic meeting both boundary states exactly."""
    if not (np.isfinite(duration) and duration > 0.0):
        raise ValueError(f"duration must be positive and finite, got {duration}")
    coeffs = min_jerk_coeffs(
        start.position,
        start.velocity,
        start.acceleration,
        end.position,
        end.velocity,
        end.acceleration,
        float(duration),
    )
    return QuinticSegment(coeffs, float(duration))


def evaluate(traj, t: float) -> QuadState:
    """State of a QuinticSegment or PiecewiseTrajectory at local time t."""
    return traj.state_at(t)


def _polyval_va(coeffs: np.ndarray, t):
    """Velocity and acceleration only (same Horner scheme as _polyval_pva)."""
    c = [coeffs[..., k, None] for k in range(2, 6)]
    v = _horner([5.0 * c[3], 4.0 * c[2], 3.0 * c[1], 2.0 * c[0],
                 coeffs[..., 1, None]], t)
    a = _horner([20.0 * c[3], 12.0 * c[2], 6.0 * c[1], 2.0 * c[0]], t)
    return v, a


def check_feasible(seg: QuinticSegment, v_max: float, a_max: float) -> bool:
    """Speed/acceleration limit check on the 65-point sampling grid."""
    if v_max <= 0.0 or a_max <= 0.0:
        raise ValueError("limits must be positive")
    ts = np.arange(FEASIBILITY_SAMPLES) * (seg.duration / (FEASIBILITY_SAMPLES - 1))
    vel, acc = _polyval_va(seg.coeffs, ts)  # (3, 65)
    if np.max(np.sum(vel * vel, axis=0)) > v_max * v_max:
        return False
    return bool(np.max(np.sum(acc * acc, axis=0)) <= a_max * a_max)


try:
    import numba as _numba

    @_numba.njit(cache=True)
    def _feasible_kernel(coeffs, durations, v_max2, a_max2, out):
        n = coeffs.shape[0]
        for r in range(n):
            T = durations[r]
            ok = True
            for i in range(FEASIBILITY_SAMPLES):
                t = T * (i / (FEASIBILITY_SAMPLES - 1.0))
                v2 = 0.0
                a2 = 0.0
                for ax in range(3):
                    c1 = coeffs[r, ax, 1]
                    c2 = coeffs[r, ax, 2]
                    c3 = coeffs[r, ax, 3]
                    c4 = coeffs[r, ax, 4]
                    c5 = coeffs[r, ax, 5]
                    v = 5.0 * c5 * t
                    v = (v + 4.0 * c4) * t
                    v = (v + 3.0 * c3) * t
                    v = (v + 2.0 * c2) * t
                    v = v + c1
                    a = 20.0 * c5 * t
                    a = (a + 12.0 * c4) * t
                    a = (a + 6.0 * c3) * t
                    a = a + 2.0 * c2
                    v2 += v * v
                    a2 += a * a
                if v2 > v_max2 or a2 > a_max2:
                    ok = False
                    break
            out[r] = ok

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _HAVE_NUMBA = False


def feasible_mask(coeffs: np.ndarray, durations: np.ndarray, v_max: float, a_max: float) -> np.ndarray:
    """Vectorized check_feasible over a batch of (n, 3, 6) coefficient sets.

    All batch entries share the sampling rule t = i * duration / 64.
    """
    durations = np.asarray(durations, dtype=float)
    if _HAVE_NUMBA:
        out = np.empty(len(durations), dtype=np.bool_)
        _feasible_kernel(np.ascontiguousarray(coeffs), durations,
                         v_max * v_max, a_max * a_max, out)
        return out
    frac = np.arange(FEASIBILITY_SAMPLES) / (FEASIBILITY_SAMPLES - 1)
    ts = durations[:, None, None] * frac[None, None, :]
    v, a = _polyval_va(coeffs, ts)  # (n, 3, 65)
    ok_v = np.max(np.sum(v * v, axis=1), axis=1) <= v_max * v_max
    ok_a = np.max(np.sum(a * a, axis=1), axis=1) <= a_max * a_max
    return ok_v & ok_a


def reachable_distance(start_speed: float, duration: float, v_max: float,
                       a_max: float) -> float:
    """Upper bound on distance coverable in duration from start_speed.

    Speed cannot exceed min(v_max, start_speed + a_max * t), so integrating
    that envelope bounds the path length of any limit-respecting segment.
    """
    if start_speed >= v_max:
        return v_max * duration
    t_sat = (v_max - start_speed) / a_max
    if duration <= t_sat:
        return start_speed * duration + 0.5 * a_max * duration * duration
    ramp = start_speed * t_sat + 0.5 * a_max * t_sat * t_sat
    return ramp + v_max * (duration - t_sat)
