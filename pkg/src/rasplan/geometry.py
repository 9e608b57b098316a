"""Shared 3D geometry: boxes, oriented cuboids, frames, segment distances."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

WORLD_UP = np.array([0.0, 0.0, 1.0])
WORLD_X = np.array([1.0, 0.0, 0.0])

# flight directions closer than 5 deg to +/- world-up use world-x as frame seed
_UP_PARALLEL_COS = float(np.cos(np.radians(5.0)))


def vec3(x) -> np.ndarray:
    """Coerce to a float 3-vector, raising on bad shape or non-finite values."""
    v = np.asarray(x, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    if not math.isfinite(float(v.sum())):  # nan/inf propagate through the sum
        raise ValueError(f"non-finite 3-vector: {v}")
    return v


def unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def corridor_frame(axis: np.ndarray) -> np.ndarray:
    """Right-handed frame (rows x', y', z') with x' along the flight axis.

    y' is horizontal (world-up x axis) except when the axis is within 5 deg
    of vertical, where world-x seeds the lateral direction instead.
    """
    x = unit(np.asarray(axis, dtype=float))
    seed = WORLD_X if abs(float(x @ WORLD_UP)) > _UP_PARALLEL_COS else WORLD_UP
    y = np.cross(seed, x)
    y = y / np.linalg.norm(y)
    z = np.cross(x, y)
    return np.stack([x, y, z])


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, closed on all faces."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", vec3(self.lo))
        object.__setattr__(self, "hi", vec3(self.hi))
        if np.any(self.hi < self.lo):
            raise ValueError("box hi must not be below lo")

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def size(self) -> np.ndarray:
        return self.hi - self.lo

    def volume(self) -> float:
        return float(np.prod(self.size))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean membership for an (N, 3) array (or a single 3-vector)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)

    def aabb(self) -> "Box":
        return self

    def inflated(self, margin: float) -> "Box":
        return Box(self.lo - margin, self.hi + margin)

    def translated(self, offset) -> "Box":
        off = vec3(offset)
        return Box(self.lo + off, self.hi + off)


@dataclass(frozen=True)
class OrientedCuboid:
    """Cuboid with center, rotation (rows = local axes) and half sizes."""

    center: np.ndarray
    rotation: np.ndarray
    half: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", vec3(self.center))
        object.__setattr__(self, "half", vec3(self.half))
        r = np.asarray(self.rotation, dtype=float)
        if r.shape != (3, 3):
            raise ValueError("rotation must be a 3x3 matrix")
        object.__setattr__(self, "rotation", r)

    def volume(self) -> float:
        return float(8.0 * np.prod(self.half))

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        local = (p - self.center) @ self.rotation.T
        return np.all(np.abs(local) <= self.half, axis=1)

    def aabb(self) -> Box:
        # world-frame extent of the rotated half sizes
        extent = np.abs(self.rotation.T) @ self.half
        return Box(self.center - extent, self.center + extent)


def segment_closest_points(a0, a1, b0, b1):
    """Closest points between segments a and b.

    Returns (distance, point_on_a, point_on_b, s, t) with s, t in [0, 1] the
    barycentric parameters on a and b. Degenerate segments are handled.
    """
    a0 = vec3(a0)
    a1 = vec3(a1)
    b0 = vec3(b0)
    b1 = vec3(b1)
    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    la = float(d1 @ d1)
    lb = float(d2 @ d2)
    f = float(d2 @ r)
    eps = 1e-12
    if la <= eps and lb <= eps:
        s, t = 0.0, 0.0
    elif la <= eps:
        s = 0.0
        t = min(max(f / lb, 0.0), 1.0)
    else:
        c = float(d1 @ r)
        if lb <= eps:
            t = 0.0
            s = min(max(-c / la, 0.0), 1.0)
        else:
            b = float(d1 @ d2)
            denom = la * lb - b * b
            if denom > eps:
                s = min(max((b * f - c * lb) / denom, 0.0), 1.0)
            else:
                s = 0.0
            t = (b * s + f) / lb
            if t < 0.0:
                t = 0.0
                s = min(max(-c / la, 0.0), 1.0)
            elif t > 1.0:
                t = 1.0
                s = min(max((b - c) / la, 0.0), 1.0)
    pa = a0 + s * d1
    pb = b0 + t * d2
    return float(np.linalg.norm(pa - pb)), pa, pb, s, t


def segment_segment_distance(a0, a1, b0, b1):
    """Minimum distance between two 3D segments and the closest point on b."""
    dist, _, pb, _, _ = segment_closest_points(a0, a1, b0, b1)
    return dist, pb


def point_box_distance(point: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """Euclidean distance from a point to an axis-aligned box (0 inside)."""
    d = np.maximum(np.maximum(lo - point, 0.0), point - hi)
    return float(np.linalg.norm(d))


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if w == -math.pi else w


def ordered_weight_sum(weights: np.ndarray) -> float:
    """Reduction used for all risk/weight sums.

    Every weight-sum in the library reduces the matched weights in ascending
    particle-index order through this single helper so that indexed queries
    and brute-force reference sums are bit-identical.
    """
    if len(weights) == 0:
        return 0.0
    return float(np.add.reduce(np.asarray(weights, dtype=float)))
