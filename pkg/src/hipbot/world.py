"""Planar Box and Maze worlds for a double-integrator point agent.

Units are pixels and simulation steps. Obstacles are circles or
axis-aligned boxes moving with constant velocity (plus optional Brownian
acceleration noise) and reflecting off the edges of their motion region.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_count, check_positive, check_vector

CIRCLE = "circle"
BOX = "box"


@dataclass(frozen=True)
class Arena:
    width: float = 200.0
    height: float = 200.0
    episode_cap: int = 500
    goal_radius: float = 10.0
    agent_radius: float = 3.0
    v_max: float = 5.0
    # actuation limit on the commanded acceleration, px/step^2
    a_max: float = 2.0

    def __post_init__(self):
        check_positive(self.width, "width")
        check_positive(self.height, "height")
        check_count(self.episode_cap, "episode_cap")
        check_positive(self.goal_radius, "goal_radius")
        check_positive(self.agent_radius, "agent_radius", strict=False)
        check_positive(self.v_max, "v_max")
        check_positive(self.a_max, "a_max")

    def contains(self, p):
        return 0.0 <= p[0] <= self.width and 0.0 <= p[1] <= self.height


@dataclass(frozen=True)
class Obstacle:
    shape: str
    center: np.ndarray
    radius: float = 0.0
    half_extents: np.ndarray = None
    velocity: np.ndarray = None
    acceleration_noise_std: float = 0.0

    def __post_init__(self):
        if self.shape not in (CIRCLE, BOX):
            raise ValueError(f"unknown obstacle shape {self.shape!r}")
        object.__setattr__(self, "center", check_vector(self.center, 2, "center"))
        vel = np.zeros(2) if self.velocity is None else check_vector(self.velocity, 2, "velocity")
        object.__setattr__(self, "velocity", vel)
        if self.shape == CIRCLE:
            check_positive(self.radius, "radius")
        else:
            half = check_vector(self.half_extents, 2, "half_extents")
            if np.any(half <= 0):
                raise ValueError("half_extents must be > 0")
            object.__setattr__(self, "half_extents", half)
        check_positive(self.acceleration_noise_std, "acceleration_noise_std", strict=False)

    @classmethod
    def circle(cls, center, radius, velocity=None):
        return cls(CIRCLE, center, radius=radius, velocity=velocity)

    @classmethod
    def box(cls, center, half_extents, velocity=None):
        return cls(BOX, center, half_extents=half_extents, velocity=velocity)


@dataclass(frozen=True)
class ObstacleSet:
    """Struct-of-arrays view of a list of obstacles, used by the vectorized SDF."""

    centers: np.ndarray
    velocities: np.ndarray
    radii: np.ndarray
    half_extents: np.ndarray
    is_box: np.ndarray
    # motion region for obstacle centers: (lo_x, lo_y, hi_x, hi_y); None = unbounded
    bounds: tuple = None
    noise_std: float = 0.0
    noise_seed: int = 0

    @classmethod
    def from_obstacles(cls, obstacles, bounds=None):
        obstacles = list(obstacles)
        k = len(obstacles)
        centers = np.array([o.center for o in obstacles], dtype=float).reshape(k, 2)
        vels = np.array([o.velocity for o in obstacles], dtype=float).reshape(k, 2)
        radii = np.array([o.radius if o.shape == CIRCLE else 0.0 for o in obstacles], dtype=float)
        half = np.array([o.half_extents if o.shape == BOX else (0.0, 0.0) for o in obstacles],
                        dtype=float).reshape(k, 2)
        is_box = np.array([o.shape == BOX for o in obstacles], dtype=bool)
        noise = max((o.acceleration_noise_std for o in obstacles), default=0.0)
        return cls(centers, vels, radii, half, is_box, None if bounds is None else tuple(bounds), noise)

    @classmethod
    def empty(cls):
        return cls.from_obstacles([])

    def __len__(self):
        return self.centers.shape[0]

    def to_obstacles(self):
        out = []
        for k in range(len(self)):
            if self.is_box[k]:
                out.append(Obstacle.box(self.centers[k], self.half_extents[k], self.velocities[k]))
            else:
                out.append(Obstacle.circle(self.centers[k], self.radii[k], self.velocities[k]))
        return out

    @property
    def static(self):
        return not np.any(self.velocities) and self.noise_std == 0.0

    def sdf(self, points):
        """Signed distances ``(B, K)`` from points ``(B, 2)`` to every obstacle."""
        return sdf_and_gradient(points, self)[0]

    def min_sdf(self, points):
        """Distance to the closest obstacle, ``+inf`` when there are none."""
        points = np.atleast_2d(points)
        if len(self) == 0:
            return np.full(points.shape[0], np.inf)
        return self.sdf(points).min(axis=1)

    def propagate(self, dt=1.0, velocity_noise=None):
        """Advance centers by explicit Euler and reflect them inside ``bounds``."""
        vel = self.velocities if velocity_noise is None else self.velocities + velocity_noise
        centers = self.centers + vel * dt
        if self.bounds is not None and len(self):
            lo = np.asarray(self.bounds[:2])
            hi = np.asarray(self.bounds[2:])
            below, above = centers < lo, centers > hi
            centers = np.where(below, 2 * lo - centers, centers)
            centers = np.where(above, 2 * hi - centers, centers)
            vel = np.where(below | above, -vel, vel)
        return replace(self, centers=centers, velocities=vel)


def sdf_and_gradient(points, obstacles):
    """Vectorized signed distance and its spatial gradient.

    Returns ``(d, grad)`` of shapes ``(B, K)`` and ``(B, K, 2)``. At a
    circle's center (or a box center) the outward direction is ``+x``.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    rel = p[:, None, :] - obstacles.centers[None, :, :]
    # circles
    norm = np.hypot(rel[..., 0], rel[..., 1])
    safe = np.where(norm > 0, norm, 1.0)
    grad_c = np.where((norm > 0)[..., None], rel / safe[..., None], np.array([1.0, 0.0]))
    d_c = norm - obstacles.radii[None, :]
    if not np.any(obstacles.is_box):
        return d_c, grad_c
    # boxes
    sign = np.where(rel >= 0, 1.0, -1.0)
    excess = np.abs(rel) - obstacles.half_extents[None, :, :]
    outside = np.maximum(excess, 0.0)
    out_norm = np.hypot(outside[..., 0], outside[..., 1])
    inside = np.minimum(np.max(excess, axis=-1), 0.0)
    d_b = out_norm + inside
    axis = np.argmax(excess, axis=-1)
    grad_in = np.zeros_like(rel)
    np.put_along_axis(grad_in, axis[..., None], np.take_along_axis(sign, axis[..., None], -1), -1)
    grad_out = sign * outside / np.where(out_norm > 0, out_norm, 1.0)[..., None]
    grad_b = np.where((out_norm > 0)[..., None], grad_out, grad_in)
    box = obstacles.is_box[None, :]
    return np.where(box, d_b, d_c), np.where(box[..., None], grad_b, grad_c)


def sdf(point, obstacle=None):
    """Signed distance from ``point`` to a single obstacle (``+inf`` for no obstacle)."""
    if obstacle is None:
        return float("inf")
    if isinstance(obstacle, ObstacleSet):
        return float(obstacle.min_sdf(np.asarray(point, dtype=float))[0])
    return float(sdf_and_gradient(point, ObstacleSet.from_obstacles([obstacle]))[0][0, 0])


@dataclass(frozen=True)
class WorldContext:
    goal: np.ndarray
    obstacles: ObstacleSet = field(default_factory=ObstacleSet.empty)


@dataclass(frozen=True)
class WorldState:
    q: np.ndarray
    q_dot: np.ndarray
    goal: np.ndarray
    obstacles: ObstacleSet
    arena: Arena = field(default_factory=Arena)
    step: int = 0
    collided: bool = False
    reached_goal: bool = False

    @property
    def context(self):
        return WorldContext(self.goal, self.obstacles)

    def min_sdf(self):
        return float(self.obstacles.min_sdf(self.q)[0])

    def check_events(self):
        """Latch collision and goal events for the current configuration."""
        collided = self.collided or self.min_sdf() < self.arena.agent_radius
        reached = self.reached_goal or float(np.linalg.norm(self.q - self.goal)) < self.arena.goal_radius
        return replace(self, collided=collided, reached_goal=reached)


def clamp_speed(v, v_max):
    """Scale rows of ``v`` down to at most ``v_max`` in norm."""
    v = np.asarray(v, dtype=float)
    speed = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(speed > v_max, v * (v_max / np.where(speed > 0, speed, 1.0)), v)


def obstacle_noise(obstacles, step, dt=1.0):
    """Velocity increments for one step; a pure function of ``(noise_seed, step)``."""
    rng = np.random.default_rng((obstacles.noise_seed, step))
    return rng.normal(0.0, obstacles.noise_std, size=obstacles.velocities.shape) * dt


def step_world(world, action, dt=1.0):
    """Advance the world by one step of semi-implicit Euler.

    The action is clipped to ``a_max`` in norm, the agent velocity
    integrates it and is clamped to ``v_max``;
    the position then integrates the new velocity. Obstacles move with their
    velocity; with a positive ``noise_std`` each velocity first receives a
    Gaussian increment seeded by ``(noise_seed, step)``.
    """
    action = check_vector(action, 2, "action")
    action = clamp_speed(action, world.arena.a_max)
    q_dot = clamp_speed(world.q_dot + action * dt, world.arena.v_max)
    q = world.q + q_dot * dt
    noise = None
    obstacles = world.obstacles
    if obstacles.noise_std > 0 and len(obstacles):
        noise = obstacle_noise(obstacles, world.step, dt)
    obstacles = obstacles.propagate(dt, noise)
    stepped = replace(world, q=q, q_dot=q_dot, obstacles=obstacles, step=world.step + 1)
    return stepped.check_events()


def inject_acceleration_noise(world, std, seed=0):
    """Return ``world`` with Brownian velocity noise of ``std`` px/step^2 on every obstacle."""
    check_positive(std, "std", strict=False)
    check_count(seed, "seed", minimum=0)
    return replace(world, obstacles=replace(world.obstacles, noise_std=float(std), noise_seed=int(seed)))


def _random_direction(rng):
    angle = rng.uniform(0.0, 2 * np.pi)
    return np.array([np.cos(angle), np.sin(angle)])


def sample_maze(seed, n_obstacles=8, velocity_level=0.0, arena=None, radius_range=(8.0, 14.0),
                min_gap=2.0, max_tries=10000):
    """Random Maze world: circles scattered in the band between start and goal.

    The start lies in the left strip and the goal in the right strip of the
    arena (mirrored for odd draws). Obstacles keep clear of start and goal and
    keep at least ``min_gap`` px between each other. Dynamic obstacles move at
    ``velocity_level`` px/step in random directions and bounce inside the band.
    """
    check_count(n_obstacles, "n_obstacles", minimum=0)
    check_positive(velocity_level, "velocity_level", strict=False)
    arena = arena or Arena()
    rng = np.random.default_rng(seed)
    w, h = arena.width, arena.height
    start = np.array([rng.uniform(0.05 * w, 0.15 * w), rng.uniform(0.2 * h, 0.8 * h)])
    goal = np.array([rng.uniform(0.85 * w, 0.95 * w), rng.uniform(0.2 * h, 0.8 * h)])
    if rng.uniform() < 0.5:
        start[0], goal[0] = w - start[0], w - goal[0]
    band = (0.3 * w, 0.1 * h, 0.7 * w, 0.9 * h)
    clearance = 4.0 * arena.agent_radius
    obstacles = []
    tries = 0
    while len(obstacles) < n_obstacles:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(f"could not place {n_obstacles} obstacles after {max_tries} tries")
        r = rng.uniform(*radius_range)
        c = np.array([rng.uniform(band[0], band[2]), rng.uniform(band[1], band[3])])
        if min(np.linalg.norm(c - start), np.linalg.norm(c - goal)) < r + clearance:
            continue
        if any(np.linalg.norm(c - o.center) < r + o.radius + min_gap for o in obstacles):
            continue
        vel = velocity_level * _random_direction(rng) if velocity_level > 0 else None
        obstacles.append(Obstacle.circle(c, r, vel))
    obs = ObstacleSet.from_obstacles(obstacles, bounds=band)
    return WorldState(start, np.zeros(2), goal, obs, arena).check_events()


def sample_box(seed, dynamic=False, velocity_level=10.0, arena=None, half_extents=(15.0, 40.0),
               sway=10.0, edge_clearance=30.0):
    """Random Box world: one box squarely between start and goal.

    For a static box, start and goal y-coordinates stay within
    ``half_extents[1] - edge_clearance`` of the arena center line, so the
    straight line between them is blocked and both corners are at least
    ``edge_clearance`` px away from it. A dynamic box is shortened by ``sway``
    and slides vertically at ``velocity_level`` px/step, bouncing within
    ``sway`` px of its initial center. The band it sweeps equals the static
    box; start and goal may use the whole band it covers at all times, since
    its moving corners are never at a fixed distance from the line anyway.
    """
    arena = arena or Arena()
    rng = np.random.default_rng(seed)
    w, h = arena.width, arena.height
    half = np.asarray(half_extents, dtype=float)
    center = np.array([0.5 * w, 0.5 * h])
    reach = half[1] - edge_clearance
    if dynamic:
        half = np.array([half[0], half[1] - sway])
        reach = half[1] - sway
    if reach < 0 or half[1] <= 0:
        raise ValueError("box too short for the requested sway and edge clearance")
    start = np.array([rng.uniform(0.1 * w, 0.2 * w), center[1] + rng.uniform(-reach, reach)])
    goal = np.array([rng.uniform(0.8 * w, 0.9 * w), center[1] + rng.uniform(-reach, reach)])
    if rng.uniform() < 0.5:
        start[0], goal[0] = w - start[0], w - goal[0]
    vel = None
    bounds = None
    if dynamic:
        vel = np.array([0.0, velocity_level * (1.0 if rng.uniform() < 0.5 else -1.0)])
        bounds = (center[0], center[1] - sway, center[0], center[1] + sway)
    obs = ObstacleSet.from_obstacles([Obstacle.box(center, half, vel)], bounds=bounds)
    return WorldState(start, np.zeros(2), goal, obs, arena).check_events()


TRAJECTORY_COLUMNS = ("step", "qx", "qy", "vx", "vy", "min_sdf", "collided", "reached")


def trajectory_row(world):
    row = [world.step, *map(float, world.q), *map(float, world.q_dot), world.min_sdf(),
           int(world.collided), int(world.reached_goal)]
    for c in world.obstacles.centers:
        row.extend(map(float, c))
    return row


def write_trajectory_csv(path, worlds):
    """Dump a sequence of world states; obstacle centers follow as ``cx{k}, cy{k}``."""
    worlds = list(worlds)
    k = len(worlds[0].obstacles) if worlds else 0
    header = list(TRAJECTORY_COLUMNS)
    for i in range(k):
        header += [f"cx{i}", f"cy{i}"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for w in worlds:
            writer.writerow(trajectory_row(w))
