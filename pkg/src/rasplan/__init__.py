"""Risk-aware sampling-based local trajectory planning over particle maps."""

from .geometry import (
    Box,
    OrientedCuboid,
    corridor_frame,
    segment_segment_distance,
)
from .trajectory import (
    PiecewiseTrajectory,
    QuadState,
    QuinticSegment,
    build_min_jerk,
    check_feasible,
    evaluate,
)
from .particles import (
    ParticleField,
    PredictionConfig,
    WeightedParticle,
    cardinality_expectation,
    decay_and_cull,
    ingest_point_cloud,
    load_particles,
    predict_particle,
    save_particles,
)
from .risk import (
    CorridorSegment,
    RiskConfig,
    build_corridor,
    corridor_risk,
    is_safe,
    trajectory_risk,
)
from .sampler import (
    MotionPrimitive,
    SamplerConfig,
    make_primitive,
    sample_directions,
    split_phases,
)
from .planner import (
    CandidateList,
    PlannerConfig,
    PlanResult,
    plan,
    rank_cost,
    replan_tick,
)
from .fusion import (
    FusionConfig,
    GlobalTrajectory,
    KeyPolyline,
    Supervisor,
    fused_cost,
    global_risk_check,
    load_global_trajectory,
    save_global_trajectory,
    select_key_points,
    try_merge,
)
from .sim import (
    Obstacle,
    RunMetrics,
    Scenario,
    ground_truth_collision,
    run,
    sense,
    step_world,
)

__version__ = "0.1.0"
