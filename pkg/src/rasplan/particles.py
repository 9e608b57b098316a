"""Weighted-particle obstacle field: storage, prediction, cuboid weight queries."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Box, ordered_weight_sum, vec3

STATIC = 0
DYNAMIC = 1

_MODEL_NAMES = {STATIC: "static", DYNAMIC: "dynamic"}
_MODEL_CODES = {"static": STATIC, "dynamic": DYNAMIC}


@dataclass(frozen=True)
class WeightedParticle:
    """One point-object hypothesis: position, velocity, weight, motion model."""

    position: np.ndarray
    velocity: np.ndarray
    weight: float
    model: str = "dynamic"

    def __post_init__(self):
        object.__setattr__(self, "position", vec3(self.position))
        object.__setattr__(self, "velocity", vec3(self.velocity))
        if not (np.isfinite(self.weight) and self.weight >= 0.0):
            raise ValueError(f"weight must be finite and >= 0, got {self.weight}")
        if self.model not in _MODEL_CODES:
            raise ValueError(f"unknown motion model {self.model!r}")


@dataclass(frozen=True)
class PredictionConfig:
    """Ingestion mixture: static share plus constant-velocity hypotheses."""

    sigma_v: float = 0.3
    static_fraction: float = 0.5
    particles_per_point: int = 4

    def __post_init__(self):
        if self.sigma_v < 0.0:
            raise ValueError("sigma_v must be >= 0")
        if not 0.0 <= self.static_fraction <= 1.0:
            raise ValueError("static_fraction must be in [0, 1]")
        if self.particles_per_point < 1:
            raise ValueError("particles_per_point must be >= 1")


def predict_particle(p: WeightedParticle, dt: float) -> WeightedParticle:
    """Particle state dt seconds ahead (constant velocity; static stays put)."""
    if dt < 0.0:
        raise ValueError("dt must be >= 0")
    if p.model == "static" or dt == 0.0:
        return p
    return replace(p, position=p.position + p.velocity * dt)


class ParticleField:
    """Immutable particle snapshot with a uniform-grid position index.

    Updates (ingest, decay, recenter) return new snapshots; queries are
    read-only, so one snapshot can serve any number of concurrent readers.
    """

    def __init__(self, bounds: Box, bin_size: float = 0.5, snapshot_time: float = 0.0,
                 positions=None, velocities=None, weights=None, models=None):
        if bin_size <= 0.0:
            raise ValueError("bin_size must be positive")
        self.bounds = bounds
        self.bin_size = float(bin_size)
        self.snapshot_time = float(snapshot_time)
        n = 0 if positions is None else len(positions)
        self.positions = np.zeros((n, 3)) if positions is None else np.asarray(positions, dtype=float).reshape(n, 3)
        self.velocities = np.zeros((n, 3)) if velocities is None else np.asarray(velocities, dtype=float).reshape(n, 3)
        self.weights = np.zeros(n) if weights is None else np.asarray(weights, dtype=float).reshape(n)
        self.models = np.zeros(n, dtype=np.uint8) if models is None else np.asarray(models, dtype=np.uint8).reshape(n)
        inside = bounds.contains(self.positions) if n else np.zeros(0, dtype=bool)
        if n and not np.all(inside):
            raise ValueError("all particles must lie inside the field bounds")
        self._dyn = self.models == DYNAMIC
        self.max_speed = float(np.max(np.linalg.norm(self.velocities[self._dyn], axis=1))) if np.any(self._dyn) else 0.0
        self._grid_shape = np.maximum(
            np.ceil((bounds.hi - bounds.lo) / self.bin_size).astype(int), 1
        )
        # uniform-grid index: per-particle cell coordinates, range-tested per query
        self._coords = self._cell_coords(self.positions) if n else np.zeros((0, 3), dtype=int)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_particles(cls, particles, bounds: Box, bin_size: float = 0.5,
                       snapshot_time: float = 0.0) -> "ParticleField":
        pos = np.array([p.position for p in particles], dtype=float).reshape(len(particles), 3)
        vel = np.array([p.velocity for p in particles], dtype=float).reshape(len(particles), 3)
        w = np.array([p.weight for p in particles], dtype=float)
        m = np.array([_MODEL_CODES[p.model] for p in particles], dtype=np.uint8)
        return cls(bounds, bin_size, snapshot_time, pos, vel, w, m)

    def _cell_coords(self, points: np.ndarray) -> np.ndarray:
        rel = (points - self.bounds.lo) / self.bin_size
        return np.clip(np.floor(rel).astype(int), 0, self._grid_shape - 1)

    # -- basic accessors ---------------------------------------------------

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def particles(self):
        """Materialize the particle list (test/debug convenience)."""
        return [
            WeightedParticle(self.positions[i], self.velocities[i],
                             float(self.weights[i]), _MODEL_NAMES[int(self.models[i])])
            for i in range(len(self))
        ]

    def total_weight(self) -> float:
        return ordered_weight_sum(self.weights)

    # -- queries -----------------------------------------------------------

    def predicted_positions(self, dt: float, idx=None) -> np.ndarray:
        """Positions dt ahead; static particles do not move."""
        if dt < 0.0:
            raise ValueError("dt must be >= 0")
        if idx is None:
            return self.positions + self.velocities * (dt * self._dyn[:, None])
        return self.positions[idx] + self.velocities[idx] * (dt * self._dyn[idx, None])

    def candidates(self, aabb: Box, inflate: float = 0.0) -> np.ndarray:
        """Ascending particle indices whose cell lies in the inflated box's cell range."""
        if len(self.weights) == 0:
            return np.empty(0, dtype=int)
        box = aabb.inflated(inflate) if inflate > 0.0 else aabb
        lo = self._cell_coords(box.lo[None, :])[0]
        hi = self._cell_coords(box.hi[None, :])[0]
        ok = np.all((self._coords >= lo) & (self._coords <= hi), axis=1)
        return np.flatnonzero(ok)

    def weight_in(self, region, dt: float = 0.0) -> float:
        """Sum of weights of particles predicted inside region at dt."""
        idx = self.candidates(region.aabb(), inflate=self.max_speed * dt)
        if idx.size == 0:
            return 0.0
        pred = self.predicted_positions(dt, idx)
        mask = region.contains(pred)
        return ordered_weight_sum(self.weights[idx][mask])


def cardinality_expectation(field: ParticleField, region, dt: float = 0.0) -> float:
    """Expected point-object count in a region at dt seconds ahead."""
    if dt < 0.0:
        raise ValueError("dt must be >= 0")
    if region.volume() <= 0.0:
        raise ValueError("region must have positive volume")
    return field.weight_in(region, dt)


def ingest_point_cloud(field: ParticleField, points, velocities,
                       cfg: PredictionConfig, rng: np.random.Generator) -> ParticleField:
    """Spawn a unit of particle weight per observed point.

    Each point yields cfg.particles_per_point particles of equal weight: a
    static_fraction share is static, the rest follow the supplied velocity
    plus per-axis Gaussian noise of std cfg.sigma_v drawn from rng. Points
    outside the field bounds are dropped.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    velocities = np.asarray(velocities, dtype=float).reshape(-1, 3)
    if len(points) != len(velocities):
        raise ValueError(f"{len(points)} points but {len(velocities)} velocities")
    if len(points) == 0:
        return field
    keep = field.bounds.contains(points)
    points, velocities = points[keep], velocities[keep]
    ppp = cfg.particles_per_point
    n_static = int(cfg.static_fraction * ppp + 0.5)
    w = 1.0 / ppp
    new_pos, new_vel, new_w, new_m = [], [], [], []
    for p, v in zip(points, velocities):
        for k in range(ppp):
            new_pos.append(p)
            if k < n_static:
                new_vel.append(np.zeros(3))
                new_m.append(STATIC)
            else:
                noise = rng.normal(0.0, cfg.sigma_v, 3) if cfg.sigma_v > 0.0 else np.zeros(3)
                new_vel.append(v + noise)
                new_m.append(DYNAMIC)
            new_w.append(w)
    return ParticleField(
        field.bounds, field.bin_size, field.snapshot_time,
        np.concatenate([field.positions, np.asarray(new_pos)]),
        np.concatenate([field.velocities, np.asarray(new_vel)]),
        np.concatenate([field.weights, np.asarray(new_w)]),
        np.concatenate([field.models, np.asarray(new_m, dtype=np.uint8)]),
    )


def decay_and_cull(field: ParticleField, decay: float, min_weight: float) -> ParticleField:
    """Scale all weights by decay and drop faded or out-of-bounds particles."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError("decay must be in [0, 1]")
    w = field.weights * decay
    keep = (w >= min_weight) & (w > 0.0) & field.bounds.contains(field.positions)
    return ParticleField(
        field.bounds, field.bin_size, field.snapshot_time,
        field.positions[keep], field.velocities[keep], w[keep], field.models[keep],
    )


def advance(field: ParticleField, dt: float) -> ParticleField:
    """Move every dynamic particle forward by dt (out-of-bounds ones are culled)."""
    if dt < 0.0:
        raise ValueError("dt must be >= 0")
    pos = field.predicted_positions(dt)
    keep = field.bounds.contains(pos)
    return ParticleField(
        field.bounds, field.bin_size, field.snapshot_time + dt,
        pos[keep], field.velocities[keep], field.weights[keep], field.models[keep],
    )


def recenter(field: ParticleField, center) -> ParticleField:
    """Translate the local-map bounds to a new center, culling leavers."""
    half = 0.5 * field.bounds.size
    bounds = Box(vec3(center) - half, vec3(center) + half)
    keep = bounds.contains(field.positions)
    return ParticleField(
        bounds, field.bin_size, field.snapshot_time,
        field.positions[keep], field.velocities[keep], field.weights[keep], field.models[keep],
    )


def frozen_copy(field: ParticleField) -> ParticleField:
    """All particles re-tagged static (the no-prediction baseline's view)."""
    return ParticleField(
        field.bounds, field.bin_size, field.snapshot_time,
        field.positions, field.velocities, field.weights,
        np.full(len(field), STATIC, dtype=np.uint8),
    )


def save_particles(field: ParticleField, path) -> None:
    """One particle per line: x y z vx vy vz w model."""
    with open(path, "w") as fh:
        for i in range(len(field)):
            p, v = field.positions[i], field.velocities[i]
            fh.write(
                f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} "
                f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g} "
                f"{field.weights[i]:.9g} {_MODEL_NAMES[int(field.models[i])]}\n"
            )


def load_particles(path, bounds: Box, bin_size: float = 0.5,
                   snapshot_time: float = 0.0) -> ParticleField:
    """Read a particle dump written by save_particles."""
    pos, vel, w, m = [], [], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            pos.append([float(x) for x in parts[0:3]])
            vel.append([float(x) for x in parts[3:6]])
            w.append(float(parts[6]))
            if parts[7] not in _MODEL_CODES:
                raise ValueError(f"{path}:{lineno}: unknown model {parts[7]!r}")
            m.append(_MODEL_CODES[parts[7]])
    return ParticleField(bounds, bin_size, snapshot_time,
                         np.asarray(pos), np.asarray(vel), np.asarray(w),
                         np.asarray(m, dtype=np.uint8))
