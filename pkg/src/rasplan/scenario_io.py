"""Scenario files: YAML schema, defaults, dotted-key overrides."""
from __future__ import annotations

import copy
from pathlib import Path

import numpy as np
import yaml

from .fusion import FusionConfig
from .planner import PlannerConfig
from .risk import RiskConfig
from .sampler import SamplerConfig


class ScenarioError(ValueError):
    """Configuration problem that should abort before a run starts."""


DEFAULTS = {
    "name": "scenario",
    "world": {
        "bounds": [[-10.0, -10.0, 0.0], [10.0, 10.0, 4.0]],
    },
    "vehicle": {
        "start": [0.0, 0.0, 1.0],
        "goal": None,              # [x, y, z]
        "goal_direction": None,    # unit-ish [dx, dy, dz]; used when goal is null
        "global_trajectory": None,  # path to a trajectory file
        "envelope": [0.5, 0.5, 0.5],
        "v_max": 3.0,
        "a_max": 4.0,
        "goal_tolerance": 0.3,
    },
    "sensor": {
        "fov_deg": 90.0,
        "range": 5.0,
        "points_per_face": 12,
        "rate": 20.0,
    },
    "obstacles": [],
    "planner": {
        "k_pieces": 2,
        "delta": 0.2,
        "lambdas": [0.5, 0.35, 0.15, 0.0],
        "replan_rate": 20.0,
    },
    "sampler": {
        "n_azimuth": 15,
        "n_elevation": 5,
        "azimuth_span_deg": 150.0,
        "elevation_span_deg": 60.0,
        "radius": 2.0,
        "phase1_fraction": 0.4,
    },
    "risk": {
        "dt": 0.05,
        "envelope_l": 0.5,
        "envelope_w": 0.5,
        "len_min": 0.05,
    },
    "map": {
        "bin_size": 0.5,
        "half_extent": 10.0,
        "decay": 0.9,
        "min_weight": 0.02,
        "sigma_v": 0.3,
        "static_fraction": 0.5,
        "particles_per_point": 4,
    },
    "fusion": {
        "delta_theta_deg": 15.0,
        "max_gap": 20,
        "second_index": 5,
        "d_c": 0.5,
        "check_horizon": 1.5,
    },
    "limits": {
        "duration": 30.0,
        "freeze_timeout": 5.0,
        "physics_rate": 50.0,
    },
}

_OBSTACLE_KEYS = {
    "type", "center", "radius", "lo", "hi", "size",
    "waypoints", "speed", "loop", "velocity",
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ScenarioError(f"unknown scenario key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ScenarioError(f"{where} must be a mapping")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_scenario_dict(path) -> dict:
    """Read a scenario file and fill in defaults."""
    p = Path(path)
    if not p.exists():
        raise ScenarioError(f"scenario file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{p}: bad YAML: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ScenarioError(f"{p}: top level must be a mapping")
    cfg = _merge(DEFAULTS, raw)
    _validate_obstacles(cfg["obstacles"])
    cfg["_dir"] = str(p.parent)
    return cfg


def _validate_obstacles(obstacles) -> None:
    if not isinstance(obstacles, list):
        raise ScenarioError("obstacles must be a list")
    for i, obs in enumerate(obstacles):
        if not isinstance(obs, dict):
            raise ScenarioError(f"obstacles[{i}] must be a mapping")
        unknown = set(obs) - _OBSTACLE_KEYS
        if unknown:
            raise ScenarioError(f"obstacles[{i}]: unknown keys {sorted(unknown)}")
        kind = obs.get("type")
        if kind not in ("sphere", "box"):
            raise ScenarioError(f"obstacles[{i}]: type must be sphere or box")
        if kind == "sphere" and "radius" not in obs:
            raise ScenarioError(f"obstacles[{i}]: sphere needs a radius")
        if kind == "box" and not ("size" in obs or ("lo" in obs and "hi" in obs)):
            raise ScenarioError(f"obstacles[{i}]: box needs size or lo/hi")


def apply_overrides(cfg: dict, pairs) -> dict:
    """Apply key=value overrides with dotted paths (CLI > file > defaults)."""
    out = copy.deepcopy(cfg)
    for pair in pairs:
        if "=" not in pair:
            raise ScenarioError(f"override {pair!r} is not key=value")
        dotted, raw_value = pair.split("=", 1)
        try:
            value = yaml.safe_load(raw_value)
        except yaml.YAMLError:
            raise ScenarioError(f"override {pair!r}: unparseable value") from None
        keys = dotted.split(".")
        node = out
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ScenarioError(f"override {pair!r}: unknown key {dotted!r}")
            node = node[k]
        leaf = keys[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ScenarioError(f"override {pair!r}: unknown key {dotted!r}")
        node[leaf] = value
    return out


def planner_config(cfg: dict) -> PlannerConfig:
    p = cfg["planner"]
    try:
        return PlannerConfig(
            k_pieces=int(p["k_pieces"]),
            delta=float(p["delta"]),
            lambdas=tuple(float(x) for x in p["lambdas"]),
            replan_rate=float(p["replan_rate"]),
            goal_mode=("goal_direction"
                       if cfg["vehicle"]["goal"] is None
                       and cfg["vehicle"]["goal_direction"] is not None
                       else "goal_position"),
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise ScenarioError(f"planner config: {exc}") from None


def sampler_config(cfg: dict) -> SamplerConfig:
    s = cfg["sampler"]
    v = cfg["vehicle"]
    try:
        return SamplerConfig(
            n_azimuth=int(s["n_azimuth"]),
            n_elevation=int(s["n_elevation"]),
            azimuth_span=float(np.radians(s["azimuth_span_deg"])),
            elevation_span=float(np.radians(s["elevation_span_deg"])),
            radius=float(s["radius"]),
            v_max=float(v["v_max"]),
            a_max=float(v["a_max"]),
            phase1_fraction=float(s["phase1_fraction"]),
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise ScenarioError(f"sampler config: {exc}") from None


def risk_config(cfg: dict) -> RiskConfig:
    r = cfg["risk"]
    try:
        return RiskConfig(
            dt=float(r["dt"]),
            envelope_l=float(r["envelope_l"]),
            envelope_w=float(r["envelope_w"]),
            len_min=float(r["len_min"]),
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise ScenarioError(f"risk config: {exc}") from None


def fusion_config(cfg: dict) -> FusionConfig:
    f = cfg["fusion"]
    try:
        return FusionConfig(
            delta_theta=float(np.radians(f["delta_theta_deg"])),
            max_gap=int(f["max_gap"]),
            second_index=int(f["second_index"]),
            d_c=float(f["d_c"]),
            check_horizon=float(f["check_horizon"]),
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise ScenarioError(f"fusion config: {exc}") from None
