"""Scenario configs, seeded episode batches and metric aggregation.

A scenario is a versioned JSON document with four sections (environment,
experts, planner, execution) plus seeds and the episode cap. Unknown keys
are rejected so that a typo never silently falls back to a default.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .experts import ExpertParams, ExpertPool
from .planner import HiPBOTPolicy, RMPflowPolicy
from .world import Arena, inject_acceleration_noise, sample_box, sample_maze, step_world

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ENVIRONMENTS = ("box", "maze")
METHODS = ("rmpflow", "hipbot")
METRICS_HEADER = ("method", "horizon", "mode", "env", "seeds", "SUC", "SAFE", "D2G_mean",
                  "D2G_std", "TS_mean", "TS_std", "plan_ms_mean")
STRESS_HEADER = ("velocity", "noise") + METRICS_HEADER + ("GOAL_ANY",)


class ConfigError(ValueError):
    pass


def _strict(cls, data, where):
    """Build dataclass ``cls`` from ``data``, rejecting keys it does not declare."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class EnvironmentConfig:
    kind: str = "box"
    n_obstacles: int = 8
    dynamic: bool = False
    velocity_level: float = 0.0
    noise_std: float = 0.0
    width: float = 200.0
    height: float = 200.0
    goal_radius: float = 10.0
    agent_radius: float = 3.0
    v_max: float = 5.0
    a_max: float = 2.0
    box_half_extents: tuple = (15.0, 40.0)
    box_sway: float = 10.0
    box_edge_clearance: float = 30.0
    radius_range: tuple = (8.0, 14.0)
    maze_min_gap: float = 2.0

    def __post_init__(self):
        if self.kind not in ENVIRONMENTS:
            raise ValueError(f"kind must be one of {ENVIRONMENTS}, got {self.kind!r}")
        object.__setattr__(self, "box_half_extents", tuple(self.box_half_extents))
        object.__setattr__(self, "radius_range", tuple(self.radius_range))
        if self.velocity_level < 0 or self.noise_std < 0:
            raise ValueError("velocity_level and noise_std must be >= 0")

    @property
    def is_dynamic(self):
        return self.dynamic or (self.kind == "maze" and self.velocity_level > 0)


@dataclass(frozen=True)
class ExpertsConfig:
    curls: bool = True
    per_obstacle: bool = True
    damper: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        _strict(ExpertParams, dict(self.params), "experts.params")


@dataclass(frozen=True)
class PlannerSection:
    method: str = "hipbot"
    horizon: int = 10
    w_goal: float = 3.0
    w_collision: float = 10.0
    collision_margin: float = 3.0
    lambda_entropy: float = 0.05
    lambda_kl: float = 0.4
    cost_normalization: str = "minmax"
    max_iterations: int = 1000
    tolerance: float = 1e-6

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")


@dataclass(frozen=True)
class ExecutionConfig:
    mode: str = "sync"
    latency: int | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce a batch of episodes."""

    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    experts: ExpertsConfig = field(default_factory=ExpertsConfig)
    planner: PlannerSection = field(default_factory=PlannerSection)
    execution: ExecutionConfig = field(default_factory=ExecutionConfig)
    seeds: tuple = tuple(range(100))
    episode_cap: int = 500
    version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("scenario must be a JSON object")
        data = dict(data)
        version = data.pop("version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {version!r}")
        sections = {"environment": EnvironmentConfig, "experts": ExpertsConfig,
                    "planner": PlannerSection, "execution": ExecutionConfig}
        unknown = sorted(set(data) - set(sections) - {"seeds", "episode_cap"})
        if unknown:
            raise ConfigError(f"scenario: unknown keys {unknown}")
        kwargs = {k: _strict(c, data.get(k, {}), k) for k, c in sections.items()}
        if "seeds" in data:
            kwargs["seeds"] = parse_seeds(data["seeds"])
        if "episode_cap" in data:
            kwargs["episode_cap"] = data["episode_cap"]
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())

    def __post_init__(self):
        object.__setattr__(self, "seeds", parse_seeds(self.seeds))
        if int(self.episode_cap) < 1:
            raise ValueError("episode_cap must be >= 1")
        if self.execution.mode not in ("sync", "async"):
            raise ValueError("execution.mode must be 'sync' or 'async'")
        # fail on bad planner settings before any episode starts
        if self.planner.method == "hipbot":
            self.make_policy().fit(ExpertPool.default(0))

    def to_dict(self):
        out = asdict(self)
        out["seeds"] = list(self.seeds)
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def override(self, assignments):
        """Apply ``section.key=value`` overrides; values are parsed as JSON when possible."""
        data = self.to_dict()
        for item in assignments:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = data
            path = key.split(".")
            for part in path[:-1]:
                if not isinstance(node.get(part), dict):
                    raise ConfigError(f"override {key!r}: {part!r} is not a section")
                node = node[part]
            node[path[-1]] = value
        return ScenarioConfig.from_dict(data)

    @property
    def arena(self):
        e = self.environment
        return Arena(e.width, e.height, int(self.episode_cap), e.goal_radius, e.agent_radius,
                     e.v_max, e.a_max)

    def make_world(self, seed):
        e = self.environment
        if e.kind == "box":
            world = sample_box(seed, dynamic=e.dynamic, velocity_level=e.velocity_level,
                               arena=self.arena, half_extents=e.box_half_extents, sway=e.box_sway,
                               edge_clearance=e.box_edge_clearance)
        else:
            world = sample_maze(seed, e.n_obstacles, e.velocity_level, arena=self.arena,
                                radius_range=e.radius_range, min_gap=e.maze_min_gap)
        if e.noise_std > 0:
            world = inject_acceleration_noise(world, e.noise_std, seed)
        return world

    def make_pool(self, world):
        x = self.experts
        return ExpertPool.default(len(world.obstacles), ExpertParams(**x.params), curls=x.curls,
                                  per_obstacle=x.per_obstacle, damper=x.damper)

    def make_policy(self):
        p = self.planner
        if p.method == "rmpflow":
            return RMPflowPolicy()
        return HiPBOTPolicy(horizon=p.horizon, w_goal=p.w_goal, w_collision=p.w_collision,
                            collision_margin=p.collision_margin,
                            lambda_entropy=p.lambda_entropy, lambda_kl=p.lambda_kl,
                            cost_normalization=p.cost_normalization, mode=self.execution.mode,
                            latency=self.execution.latency, max_iterations=p.max_iterations,
                            tolerance=p.tolerance)


def parse_seeds(seeds):
    """Seeds as a list, or ``{"base": b, "count": n}`` for ``b .. b+n-1``."""
    if isinstance(seeds, dict):
        unknown = set(seeds) - {"base", "count"}
        if unknown:
            raise ConfigError(f"seeds: unknown keys {sorted(unknown)}")
        base, count = int(seeds.get("base", 0)), int(seeds["count"])
        seeds = range(base, base + count)
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ConfigError("at least one seed is required")
    if any(s < 0 for s in seeds):
        raise ConfigError("seeds must be >= 0")
    return seeds


@dataclass
class EpisodeRecord:
    seed: int
    success: bool
    safe: bool
    reached_goal: bool
    d2g: float
    time_steps: int
    plan_ms: float
    trajectory: list = field(default=None, repr=False)


def run_episode(config, seed, policy=None, record=False):
    """Simulate one seeded episode until the goal is reached or the cap expires.

    A collision does not stop the episode; it only latches the ``collided``
    event, so SAFE and the plain goal-reaching rate can both be reported.
    """
    world = config.make_world(seed)
    pool = config.make_pool(world)
    policy = (policy or config.make_policy()).fit(pool)
    trajectory = [world] if record else None
    cap = int(config.episode_cap)
    while world.step < cap and not world.reached_goal:
        world = step_world(world, policy.predict(world))
        if record:
            trajectory.append(world)
    plan_ms = float(np.mean(policy.plan_times_)) if policy.plan_times_ else 0.0
    return EpisodeRecord(
        seed=seed, success=world.reached_goal and not world.collided, safe=not world.collided,
        reached_goal=world.reached_goal, d2g=float(np.linalg.norm(world.q - world.goal)),
        time_steps=world.step if world.reached_goal else cap, plan_ms=plan_ms,
        trajectory=trajectory)


@dataclass(frozen=True)
class MetricsRow:
    method: str
    horizon: int
    mode: str
    env: str
    seeds: int
    SUC: float
    SAFE: float
    D2G_mean: float
    D2G_std: float
    TS_mean: float
    TS_std: float
    plan_ms_mean: float
    GOAL_ANY: float = 0.0

    @classmethod
    def from_records(cls, config, records):
        if not records:
            raise ValueError("cannot aggregate an empty batch")
        d2g = np.array([r.d2g for r in records])
        ts = np.array([r.time_steps for r in records], dtype=float)
        p = config.planner
        horizon = p.horizon if p.method == "hipbot" else 0
        mode = config.execution.mode if p.method == "hipbot" else "sync"
        return cls(method=p.method, horizon=horizon, mode=mode, env=env_label(config),
                   seeds=len(records), SUC=float(np.mean([r.success for r in records])),
                   SAFE=float(np.mean([r.safe for r in records])), D2G_mean=float(d2g.mean()),
                   D2G_std=float(d2g.std()), TS_mean=float(ts.mean()), TS_std=float(ts.std()),
                   plan_ms_mean=float(np.mean([r.plan_ms for r in records])),
                   GOAL_ANY=float(np.mean([r.reached_goal for r in records])))

    def csv_values(self):
        return [getattr(self, k) for k in METRICS_HEADER]


def env_label(config):
    e = config.environment
    return f"{e.kind}-{'dynamic' if e.is_dynamic else 'static'}"


def run_batch(config, policy_factory=None):
    """Run every seed of ``config`` and aggregate the episodes into a :class:`MetricsRow`.

    An episode that raises aborts the whole batch; the seed is logged first.
    """
    records = []
    for seed in sorted(config.seeds):
        policy = policy_factory() if policy_factory else None
        try:
            records.append(run_episode(config, seed, policy))
        except Exception:
            logger.error("episode with seed %d failed; aborting batch", seed)
            raise
    return MetricsRow.from_records(config, records), records


def stress_sweep(config, velocity_levels, noise_levels):
    """One :class:`MetricsRow` per (velocity, noise) cell, velocities outermost."""
    velocity_levels, noise_levels = list(velocity_levels), list(noise_levels)
    if not velocity_levels or not noise_levels:
        raise ValueError("velocity and noise level lists must be nonempty")
    grid = []
    for v in velocity_levels:
        for s in noise_levels:
            env = replace(config.environment, velocity_level=float(v), noise_std=float(s),
                          dynamic=config.environment.dynamic or (
                              config.environment.kind == "box" and v > 0))
            row, _ = run_batch(replace(config, environment=env))
            grid.append((float(v), float(s), row))
    return grid


def _fmt(value):
    return f"{value:.6g}" if isinstance(value, float) else str(value)


def metrics_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for row in rows:
        writer.writerow([_fmt(v) for v in row.csv_values()])
    return buf.getvalue()


def stress_csv(grid):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(STRESS_HEADER)
    for v, s, row in grid:
        writer.writerow([_fmt(v), _fmt(s)] + [_fmt(x) for x in row.csv_values()]
                        + [_fmt(row.GOAL_ANY)])
    return buf.getvalue()
