"""Hierarchical policy blending: reactive experts weighted by unbalanced optimal transport."""

from .bench import ScenarioConfig, run_batch, run_episode, stress_sweep
from .experts import ExpertParams, ExpertPool, ExpertSpec, rmpflow_baseline
from .ot import (SinkhornTransport, SolverConfig, UnbalancedSinkhornTransport, solve_balanced,
                 solve_unbalanced)
from .planner import HiPBOTPolicy, PlannerConfig, RMPflowPolicy
from .rmp import PulledRmp, blend
from .world import Arena, Obstacle, ObstacleSet, WorldState, sample_box, sample_maze, step_world

__version__ = "0.1.0"

__all__ = [
    "Arena", "ExpertParams", "ExpertPool", "ExpertSpec", "HiPBOTPolicy", "Obstacle",
    "ObstacleSet", "PlannerConfig", "PulledRmp", "RMPflowPolicy", "ScenarioConfig",
    "SinkhornTransport", "SolverConfig", "UnbalancedSinkhornTransport", "WorldState", "blend",
    "rmpflow_baseline", "run_batch", "run_episode", "sample_box", "sample_maze",
    "solve_balanced", "solve_unbalanced", "step_world", "stress_sweep",
]
