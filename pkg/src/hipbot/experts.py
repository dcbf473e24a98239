"""Expert RMPs for the planar point agent and the RMPflow composition baseline.

Every expert lives on the identity task map, so its task-space output is
already a configuration-space pair. Goal attractor, obstacle repulsor and
damper are regular RMPs ``(f, M)`` whose pullback is ``(M f, M)``. The
curl experts are metric-free: they contribute a force normal to the
potential force and no metric, so a pair of opposing curls with equal
weights cancels exactly inside any blend.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rmp
from .world import Obstacle, ObstacleSet, WorldContext, sdf_and_gradient

GOAL_ATTRACTOR = "goal_attractor"
OBSTACLE_AVOID = "obstacle_avoid"
CURL_CW = "curl_cw"
CURL_CCW = "curl_ccw"
DAMPER = "damper"
KINDS = (GOAL_ATTRACTOR, OBSTACLE_AVOID, CURL_CW, CURL_CCW, DAMPER)

_EYE = np.eye(2)


@dataclass(frozen=True)
class ExpertParams:
    """Gains shared by a pool. Units: px, steps."""

    attractor_gain: float = 1.0
    attractor_damping: float = 0.5
    repulsor_gain: float = 23.0
    length_scale: float = 10.0
    curl_gain: float = 1.5
    damper_gain: float = 0.2
    eps_soft: float = 10.0
    curl_eps_soft: float = 0.01

    def __post_init__(self):
        for name, value in vars(self).items():
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be > 0, got {value!r}")


@dataclass(frozen=True)
class ExpertSpec:
    kind: str
    # obstacle slot for obstacle_avoid; None binds to the nearest obstacle
    obstacle: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown expert kind {self.kind!r}; expected one of {KINDS}")

    @property
    def metric_free(self):
        return self.kind in (CURL_CW, CURL_CCW)

    @property
    def name(self):
        return self.kind if self.obstacle is None else f"{self.kind}[{self.obstacle}]"


def soft_normalize(v, eps):
    v = np.asarray(v, dtype=float)
    return v / (np.linalg.norm(v, axis=-1, keepdims=True) + eps)


def _attractor_potential(q, goal, p):
    return p.attractor_gain * soft_normalize(np.asarray(goal) - q, p.eps_soft)


def _repulsor_terms(q, obstacles, p):
    """Per-obstacle acceleration ``(B, K, 2)``, weight ``(B, K)`` and direction ``(B, K, 2)``."""
    d, u = sdf_and_gradient(q, obstacles)
    w = np.exp(-d / p.length_scale)
    return p.repulsor_gain * w[..., None] * u, w, u


def goal_attractor(state, goal, gain=1.0, damping=0.2, eps_soft=10.0):
    """Soft-normalized pull toward ``goal`` with velocity damping; identity metric."""
    q = np.asarray(state.q, dtype=float)
    f = gain * soft_normalize(np.asarray(goal, dtype=float) - q, eps_soft) - damping * state.q_dot
    return f, _EYE.copy()


def obstacle_repulsor(state, obstacle, gain=2.0, length_scale=10.0):
    """Radial push ``gain * exp(-d / l) * u`` with metric ``exp(-d / l) u u^T``.

    ``obstacle`` is an :class:`~hipbot.world.Obstacle` or a ``(center,
    radius)`` pair; ``d`` is the surface distance and ``u`` the outward SDF
    gradient (``+x`` at the center).
    """
    if not isinstance(obstacle, Obstacle):
        center, radius = obstacle
        obstacle = Obstacle.circle(center, radius)
    d, u = sdf_and_gradient(state.q, ObstacleSet.from_obstacles([obstacle]))
    w = float(np.exp(-d[0, 0] / length_scale))
    u = u[0, 0]
    return gain * w * u, w * np.outer(u, u)


def damper(state, gain=0.2):
    return -gain * np.asarray(state.q_dot, dtype=float), _EYE.copy()


def rotate_quarter(v, orientation):
    """Rotate by +90 degrees (``"ccw"``) or -90 degrees (``"cw"``)."""
    v = np.asarray(v, dtype=float)
    if orientation == "ccw":
        return np.stack([-v[..., 1], v[..., 0]], axis=-1)
    if orientation == "cw":
        return np.stack([v[..., 1], -v[..., 0]], axis=-1)
    raise ValueError(f"orientation must be 'cw' or 'ccw', got {orientation!r}")


def curl_from_potential(potential, orientation, gain=1.0, eps_soft=0.01):
    return gain * rotate_quarter(soft_normalize(potential, eps_soft), orientation)


def curl_expert(state, goal, obstacles, orientation, gain=1.0, params=None):
    """Force normal to the net potential (attractor plus repulsors) at ``state``.

    Returns ``(f, M)`` with a zero metric. ``f`` is zero when the potential
    force vanishes.
    """
    params = params or ExpertParams()
    if not isinstance(obstacles, ObstacleSet):
        obstacles = ObstacleSet.from_obstacles(obstacles)
    q = np.atleast_2d(np.asarray(state.q, dtype=float))
    pot = _attractor_potential(q, goal, params)[0]
    if len(obstacles):
        pot = pot + _repulsor_terms(q, obstacles, params)[0][0].sum(axis=0)
    return curl_from_potential(pot, orientation, gain, params.curl_eps_soft), np.zeros((2, 2))


@dataclass(frozen=True)
class ExpertPool:
    """Ordered experts (rows of the temperature matrix) for ``n_agents`` agents (columns).

    All agents of the planar world share the same expert set, so the pulled
    RMPs are the same for every column.
    """

    experts: tuple
    params: ExpertParams = field(default_factory=ExpertParams)
    n_agents: int = 1

    def __post_init__(self):
        experts = tuple(self.experts)
        if not experts:
            raise ValueError("expert pool must not be empty")
        object.__setattr__(self, "experts", experts)

    def __len__(self):
        return len(self.experts)

    @property
    def names(self):
        return [e.name for e in self.experts]

    @property
    def metric_free(self):
        return np.array([e.metric_free for e in self.experts])

    @classmethod
    def default(cls, n_obstacles, params=None, curls=True, per_obstacle=True, damper=False):
        """Attractor, optional damper, the two curls, then the obstacle repulsors.

        The damper is left out by default: as a stand-alone rollout it always
        predicts "stop safely", which wins the temperature solve next to any
        obstacle and pins the agent in front of it.
        """
        experts = [ExpertSpec(GOAL_ATTRACTOR)]
        if damper:
            experts.append(ExpertSpec(DAMPER))
        if curls:
            experts += [ExpertSpec(CURL_CW), ExpertSpec(CURL_CCW)]
        if per_obstacle:
            experts += [ExpertSpec(OBSTACLE_AVOID, k) for k in range(n_obstacles)]
        elif n_obstacles:
            experts.append(ExpertSpec(OBSTACLE_AVOID))
        return cls(tuple(experts), params or ExpertParams())

    def without(self, *kinds):
        return ExpertPool(tuple(e for e in self.experts if e.kind not in kinds), self.params,
                          self.n_agents)

    def evaluate(self, q, q_dot, context):
        """Pulled forces ``(B, n, 2)`` and metrics ``(B, n, 2, 2)`` at a batch of states."""
        p = self.params
        q = np.atleast_2d(np.asarray(q, dtype=float))
        q_dot = np.atleast_2d(np.asarray(q_dot, dtype=float))
        obstacles = context.obstacles
        b = q.shape[0]
        pot_att = _attractor_potential(q, context.goal, p)
        pot = pot_att
        if len(obstacles):
            rep, w, u = _repulsor_terms(q, obstacles, p)
            uu = u[..., :, None] * u[..., None, :]
            nearest = np.argmax(w, axis=1)
            bound = {e.obstacle for e in self.experts if e.kind == OBSTACLE_AVOID}
            if None in bound:
                pot = pot + rep[np.arange(b), nearest]
            pot = pot + sum(rep[:, k] for k in sorted(k for k in bound if k is not None))
        forces = np.zeros((b, len(self), 2))
        metrics = np.zeros((b, len(self), 2, 2))
        for i, e in enumerate(self.experts):
            if e.kind == GOAL_ATTRACTOR:
                forces[:, i] = pot_att - p.attractor_damping * q_dot
                metrics[:, i] = _EYE
            elif e.kind == DAMPER:
                forces[:, i] = -p.damper_gain * q_dot
                metrics[:, i] = _EYE
            elif e.kind == OBSTACLE_AVOID:
                k = nearest if e.obstacle is None else e.obstacle
                wk = w[np.arange(b), k] if e.obstacle is None else w[:, k]
                mk = wk[:, None, None] * (uu[np.arange(b), k] if e.obstacle is None else uu[:, k])
                fk = rep[np.arange(b), k] if e.obstacle is None else rep[:, k]
                forces[:, i] = np.einsum("bij,bj->bi", mk, fk)
                metrics[:, i] = mk
            else:
                orientation = "cw" if e.kind == CURL_CW else "ccw"
                forces[:, i] = curl_from_potential(pot, orientation, p.curl_gain, p.curl_eps_soft)
        return forces, metrics

    def pulled(self, state):
        """Pulled RMPs at one state through the generic pullback path."""
        context = state.context
        out = []
        for e in self.experts:
            if e.metric_free:
                f, _ = curl_expert(state, context.goal, context.obstacles,
                                   "cw" if e.kind == CURL_CW else "ccw", self.params.curl_gain,
                                   self.params)
                out.append(rmp.PulledRmp(f, np.zeros((2, 2)), e.name))
            else:
                out.append(rmp.pullback(self.task_rmp(e), rmp.TaskMap.identity(), state))
        return out

    def task_rmp(self, expert):
        p = self.params
        if expert.kind == GOAL_ATTRACTOR:
            def fm(x, xd, ctx):
                return goal_attractor(rmp.State(x, xd), ctx.goal, p.attractor_gain,
                                      p.attractor_damping, p.eps_soft)
        elif expert.kind == DAMPER:
            def fm(x, xd, ctx):
                return damper(rmp.State(x, xd), p.damper_gain)
        elif expert.kind == OBSTACLE_AVOID:
            def fm(x, xd, ctx):
                obstacles = ctx.obstacles.to_obstacles()
                if expert.obstacle is None:
                    k = int(np.argmin(ctx.obstacles.sdf(x)[0]))
                else:
                    k = expert.obstacle
                return obstacle_repulsor(rmp.State(x, xd), obstacles[k], p.repulsor_gain,
                                         p.length_scale)
        else:
            raise ValueError(f"{expert.kind} is metric-free and has no task-space form")
        return rmp.TaskRmp(force=lambda x, xd, ctx: fm(x, xd, ctx)[0],
                           metric=lambda x, xd, ctx: fm(x, xd, ctx)[1], name=expert.name)

    def solo_actions(self, q, q_dot, context):
        """Action of expert ``i`` acting alone at row ``i`` of ``q`` (one row per expert).

        Regular experts resolve ``M^+ f``; a metric-free expert has no metric to
        resolve against and its force is applied as the acceleration.
        """
        forces, metrics = self.evaluate(q, q_dot, context)
        idx = np.arange(len(self))
        f, M = forces[idx, idx], metrics[idx, idx]
        acc = rmp.resolve(f, M)
        free = self.metric_free
        acc[free] = f[free]
        return acc


def blend_arrays(forces, metrics, weights):
    """Weighted blend of pulled arrays ``(n, 2)``, ``(n, 2, 2)`` with weights ``(n,)``."""
    weights = np.asarray(weights, dtype=float)
    f = np.einsum("i,ij->j", weights, forces)
    M = np.einsum("i,ijk->jk", weights, metrics)
    return rmp.resolve(f, M)


def rmpflow_baseline(state, pool):
    """Myopic RMPflow action: every expert blended with unit weight."""
    forces, metrics = pool.evaluate(state.q, state.q_dot, state.context)
    return blend_arrays(forces[0], metrics[0], np.ones(len(pool)))


def make_state(world):
    """RMP state view of a :class:`~hipbot.world.WorldState`."""
    return rmp.State(world.q, world.q_dot, WorldContext(world.goal, world.obstacles))
