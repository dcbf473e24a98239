"""Upper-level blending planner: expert rollouts, cost matrix, UOT temperatures.

At every planning step each expert is shot on its own for ``horizon``
steps through the known point-mass dynamics, with obstacles predicted by
their current velocities. The horizon-averaged goal distance and
collision cost form an ``n x m`` cost matrix; an unbalanced OT solve turns
it into positive temperatures ``beta``, and the action is the
``beta``-weighted RMP blend.
"""

from __future__ import annotations

import json
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from . import ot
from ._validation import check_count, check_positive
from .experts import blend_arrays, make_state
from .rmp import resolve
from .world import WorldContext, WorldState, clamp_speed

logger = logging.getLogger(__name__)

NORMALIZATIONS = ("none", "minmax")
MODES = ("sync", "async")


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 10
    w_goal: float = 3.0
    w_collision: float = 10.0
    collision_margin: float = 3.0
    lambda_entropy: float = 0.05
    lambda_kl: float = 0.4
    row_prior: tuple | None = None
    col_prior: tuple | None = None
    latency: int | None = None
    cost_normalization: str = "minmax"
    max_iterations: int = 1000
    tolerance: float = 1e-6

    def __post_init__(self):
        check_count(self.horizon, "horizon")
        check_positive(self.w_goal, "w_goal", strict=False)
        check_positive(self.w_collision, "w_collision", strict=False)
        check_positive(self.collision_margin, "collision_margin")
        if self.latency is not None:
            check_count(self.latency, "latency", minimum=0)
        if self.cost_normalization not in NORMALIZATIONS:
            raise ValueError(f"cost_normalization must be one of {NORMALIZATIONS}")
        for prior in (self.row_prior, self.col_prior):
            if prior is not None and min(prior) <= 0:
                raise ValueError("priors must be strictly positive")
        ot.SolverConfig(self.lambda_entropy, self.lambda_kl, self.max_iterations, self.tolerance)

    @property
    def effective_latency(self):
        return max(1, self.horizon // 5) if self.latency is None else self.latency

    def priors(self, n, m):
        rows = np.full(n, 1.0 / n) if self.row_prior is None else np.asarray(self.row_prior, float)
        if self.col_prior is not None:
            cols = np.asarray(self.col_prior, float)
        else:
            cols = np.ones(1) if m == 1 else np.full(m, 1.0 / m)
        if rows.shape != (n,) or cols.shape != (m,):
            raise ValueError(f"priors do not match a {n}x{m} temperature matrix")
        return rows, cols

    def solver_config(self):
        return ot.SolverConfig(lambda_entropy=self.lambda_entropy, lambda_kl=self.lambda_kl,
                               max_iterations=self.max_iterations, tolerance=self.tolerance)


@dataclass(frozen=True)
class TemperatureMatrix:
    beta: np.ndarray
    solved_at: int
    iterations: int = 0
    converged: bool = True
    # dual scalings of the solve, used to warm-start the next one
    scalings: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def shape(self):
        return self.beta.shape


@dataclass(frozen=True)
class RolloutTrace:
    positions: np.ndarray
    velocities: np.ndarray
    expert: int
    agent: int = 0
    truncated: bool = False
    min_sdf: np.ndarray = field(default=None, repr=False)

    @property
    def horizon(self):
        return self.positions.shape[0]


def advance(q, q_dot, action, v_max, a_max=np.inf, dt=1.0):
    """Point-mass transition shared by the world and the rollouts."""
    q_dot = clamp_speed(q_dot + clamp_speed(action, a_max) * dt, v_max)
    return q + q_dot * dt, q_dot


def predict_obstacles(obstacles, horizon):
    """Noise-free obstacle snapshots for rollout steps ``1..horizon``."""
    if obstacles.static:
        return [obstacles] * horizon
    out = []
    current = replace(obstacles, noise_std=0.0)
    for _ in range(horizon):
        current = current.propagate()
        out.append(current)
    return out


def _rollout_rows(world, pool, rows, horizon, predicted):
    """Roll out experts ``rows`` side by side; returns positions, velocities, min SDF, finite mask."""
    n = len(rows)
    q = np.repeat(world.q[None, :], n, axis=0)
    qd = np.repeat(world.q_dot[None, :], n, axis=0)
    positions = np.zeros((horizon, n, 2))
    velocities = np.zeros((horizon, n, 2))
    clearance = np.zeros((horizon, n))
    obstacles = world.obstacles
    idx = np.arange(n)
    with np.errstate(all="ignore"):
        for t in range(horizon):
            forces, metrics = pool.evaluate(q, qd, WorldContext(world.goal, obstacles))
            f, M = forces[idx, rows], metrics[idx, rows]
            acc = resolve(f, M)
            free = pool.metric_free[rows]
            acc[free] = f[free]
            q, qd = advance(q, qd, acc, world.arena.v_max, world.arena.a_max)
            obstacles = predicted[t]
            positions[t], velocities[t] = q, qd
            clearance[t] = obstacles.min_sdf(q)
    finite = np.all(np.isfinite(positions), axis=(0, 2)) & np.all(np.isfinite(velocities), axis=(0, 2))
    return positions, velocities, clearance, finite


def rollout_expert(world, pool, expert, horizon, agent=0):
    """Shoot a single expert of ``pool`` for ``horizon`` steps from ``world``.

    A non-finite state truncates the trace at the last finite step.
    """
    check_count(horizon, "horizon")
    predicted = predict_obstacles(world.obstacles, horizon)
    pos, vel, clear, finite = _rollout_rows(world, pool, np.array([expert]), horizon, predicted)
    pos, vel, clear = pos[:, 0], vel[:, 0], clear[:, 0]
    ok = np.all(np.isfinite(pos), axis=1) & np.all(np.isfinite(vel), axis=1)
    if not finite[0]:
        stop = int(np.argmin(ok))
        return RolloutTrace(pos[:stop], vel[:stop], expert, agent, True, clear[:stop])
    return RolloutTrace(pos, vel, expert, agent, False, clear)


def trace_costs(positions, clearance, goal, cfg, agent_radius=0.0):
    """Horizon averages of goal distance and collision cost along traces ``(h, n, 2)``."""
    goal_cost = np.linalg.norm(positions - np.asarray(goal), axis=-1).mean(axis=0)
    gap = np.maximum(np.asarray(clearance) - agent_radius, 0.0)
    collision = np.exp(-gap**2 / (2.0 * cfg.collision_margin**2)).mean(axis=0)
    return goal_cost, collision


def assemble_cost(goal_cost, collision, finite, cfg, d_max):
    """Combine per-expert goal and collision averages into one cost column."""
    goal_cost = np.where(finite, goal_cost, np.nan)
    if cfg.cost_normalization == "minmax":
        lo, hi = np.nanmin(goal_cost), np.nanmax(goal_cost)
        span = hi - lo
        goal_cost = (goal_cost - lo) / span if span > 0 else np.zeros_like(goal_cost)
        d_max = 1.0
    cost = cfg.w_goal * goal_cost + cfg.w_collision * collision
    return np.where(finite, cost, cfg.w_goal * d_max + cfg.w_collision)


def build_cost_matrix(world, pool, cfg, executor="batched", max_workers=None):
    """State-dependent ``n x m`` cost matrix from per-expert rollouts.

    ``executor`` selects how entries are computed: ``"batched"`` rolls all
    experts out in one vectorized pass, ``"sequential"`` one entry at a
    time, ``"threads"`` entries in a thread pool. Entries are reduced in a
    fixed order, so every executor returns the same matrix.
    """
    n, m = len(pool), pool.n_agents
    predicted = predict_obstacles(world.obstacles, cfg.horizon)
    if executor == "batched":
        pos, _, clear, finite = _rollout_rows(world, pool, np.arange(n), cfg.horizon, predicted)
    elif executor in ("sequential", "threads"):
        def one(i):
            return _rollout_rows(world, pool, np.array([i]), cfg.horizon, predicted)

        if executor == "sequential":
            parts = [one(i) for i in range(n)]
        else:
            with ThreadPoolExecutor(max_workers=max_workers) as pool_exec:
                parts = list(pool_exec.map(one, range(n)))
        pos = np.concatenate([p[0] for p in parts], axis=1)
        clear = np.concatenate([p[2] for p in parts], axis=1)
        finite = np.concatenate([p[3] for p in parts])
    else:
        raise ValueError(f"unknown executor {executor!r}")
    with np.errstate(invalid="ignore"):
        goal_cost, collision = trace_costs(pos, clear, world.goal, cfg, world.arena.agent_radius)
    d_max = float(np.hypot(world.arena.width, world.arena.height))
    column = assemble_cost(goal_cost, np.where(finite, collision, 1.0), finite, cfg, d_max)
    # every agent of the planar world shares the same rollouts
    return np.repeat(column[:, None], m, axis=1)


def solve_temperatures(cost, cfg, previous=None, step=0):
    """Positive temperatures from the unbalanced OT solve of ``cost``.

    On non-convergence the previous temperatures are reused (when given) and a
    warning is logged, so the control loop never stalls.
    """
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    rows, cols = cfg.priors(n, m)
    init = None
    if previous is not None and previous.scalings is not None and previous.shape == (n, m):
        init = previous.scalings
    plan = ot.solve_unbalanced(cost, rows, cols, cfg.solver_config(), init=init)
    if not plan.converged:
        logger.warning("temperature solve did not converge after %d iterations", plan.iterations)
        if previous is not None:
            return previous
    return TemperatureMatrix(plan.entries, step, plan.iterations, plan.converged,
                             (plan.log_u, plan.log_v))


def act(state, pool, beta):
    """Blended action ``sum_j M_j^+ f_j`` for temperatures ``beta`` (``n x m``)."""
    beta = beta.beta if isinstance(beta, TemperatureMatrix) else np.asarray(beta, dtype=float)
    if beta.ndim == 1:
        beta = beta[:, None]
    if beta.shape[0] != len(pool):
        raise ValueError(f"temperature rows {beta.shape[0]} do not match {len(pool)} experts")
    forces, metrics = pool.evaluate(state.q, state.q_dot, state.context)
    return sum(blend_arrays(forces[0], metrics[0], beta[:, j]) for j in range(beta.shape[1]))


class RMPflowPolicy(BaseEstimator):
    """Myopic baseline: all experts blended with unit temperatures."""

    def fit(self, pool, arena=None):
        self.pool_ = pool
        self.plan_times_ = []
        return self

    def reset(self):
        self.plan_times_ = []
        return self

    def predict(self, world):
        beta = np.ones((len(self.pool_), 1))
        return act(world_state_view(world), self.pool_, beta)


class HiPBOTPolicy(BaseEstimator):
    """Hierarchical policy blending with UOT temperatures.

    ``fit(pool)`` binds the expert pool and resets the temperature state;
    ``predict(world)`` plans (sync) or polls the in-flight solve (async) and
    returns the blended acceleration. Temperatures start uniform, which
    reproduces the RMPflow action until the first solve lands.

    Parameters
    ----------
    horizon, w_goal, w_collision, collision_margin, lambda_entropy, lambda_kl,
    cost_normalization, latency, max_iterations, tolerance
        See :class:`PlannerConfig`.
    mode : {"sync", "async"}
        ``"async"`` simulates a solver that returns ``latency`` steps after
        it was launched.
    temperature_solver : callable, optional
        ``(cost, cfg, previous, step) -> TemperatureMatrix``; defaults to
        :func:`solve_temperatures`.
    executor : str
        Cost-matrix executor, see :func:`build_cost_matrix`.
    debug_path : str, optional
        Append one JSON line per solve (cost, beta, iterations).
    """

    def __init__(self, horizon=10, w_goal=3.0, w_collision=10.0, collision_margin=3.0,
                 lambda_entropy=0.05, lambda_kl=0.4, cost_normalization="minmax", mode="sync",
                 latency=None, max_iterations=1000, tolerance=1e-6, temperature_solver=None,
                 executor="batched", debug_path=None):
        self.horizon = horizon
        self.w_goal = w_goal
        self.w_collision = w_collision
        self.collision_margin = collision_margin
        self.lambda_entropy = lambda_entropy
        self.lambda_kl = lambda_kl
        self.cost_normalization = cost_normalization
        self.mode = mode
        self.latency = latency
        self.max_iterations = max_iterations
        self.tolerance = tolerance
        self.temperature_solver = temperature_solver
        self.executor = executor
        self.debug_path = debug_path

    def config(self):
        return PlannerConfig(horizon=self.horizon, w_goal=self.w_goal, w_collision=self.w_collision,
                             collision_margin=self.collision_margin,
                             lambda_entropy=self.lambda_entropy, lambda_kl=self.lambda_kl,
                             latency=self.latency, cost_normalization=self.cost_normalization,
                             max_iterations=self.max_iterations, tolerance=self.tolerance)

    def fit(self, pool, arena=None):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.config_ = self.config()
        self.pool_ = pool
        return self.reset()

    def reset(self):
        n, m = len(self.pool_), self.pool_.n_agents
        rows, cols = self.config_.priors(n, m)
        self.beta_ = TemperatureMatrix(np.outer(rows, cols), solved_at=-1)
        self.pending_ = None
        self.history_ = []
        self.plan_times_ = []
        return self

    def _solve(self, world):
        t0 = time.perf_counter()
        cost = build_cost_matrix(world, self.pool_, self.config_, executor=self.executor)
        solver = self.temperature_solver or solve_temperatures
        beta = solver(cost, self.config_, self.beta_, world.step)
        self.plan_times_.append(1e3 * (time.perf_counter() - t0))
        if not np.all(beta.beta > 0):
            raise FloatingPointError("temperature matrix lost positivity")
        if self.debug_path:
            with open(self.debug_path, "a") as fh:
                fh.write(json.dumps({"step": world.step, "cost": cost.tolist(),
                                     "beta": beta.beta.tolist(), "iterations": beta.iterations,
                                     "converged": beta.converged}) + "\n")
        return beta

    def step_planner(self, world):
        """Update temperatures for ``world`` according to the execution mode."""
        if self.mode == "sync":
            self.beta_ = self._solve(world)
        else:
            latency = self.config_.effective_latency
            if self.pending_ is not None and self.pending_[0] <= world.step:
                self.beta_ = self.pending_[1]
                self.pending_ = None
            if self.pending_ is None:
                self.pending_ = (world.step + latency, self._solve(world))
                if latency == 0:
                    self.beta_ = self.pending_[1]
                    self.pending_ = None
        self.history_.append(self.beta_.solved_at)
        return self.beta_

    def predict(self, world):
        beta = self.step_planner(world)
        return act(world_state_view(world), self.pool_, beta)


def world_state_view(world):
    return make_state(world) if isinstance(world, WorldState) else world
