import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hipbot import ot
from hipbot.experts import ExpertPool, ExpertSpec, make_state, rmpflow_baseline
from hipbot.planner import (HiPBOTPolicy, PlannerConfig, RMPflowPolicy, TemperatureMatrix, act,
                            assemble_cost, build_cost_matrix, rollout_expert, solve_temperatures,
                            trace_costs)
from hipbot.world import (Arena, Obstacle, ObstacleSet, WorldState, sample_box, sample_maze,
                          step_world)


def free_world(q=(50.0, 50.0), qd=(0.0, 0.0), goal=(150.0, 50.0), obstacles=None):
    obs = obstacles if obstacles is not None else ObstacleSet.empty()
    return WorldState(np.array(q, float), np.array(qd, float), np.array(goal, float), obs,
                      Arena()).check_events()


ATTRACTOR = ExpertPool((ExpertSpec("goal_attractor"),))


def test_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(horizon=0)
    with pytest.raises(ValueError):
        PlannerConfig(collision_margin=0.0)
    with pytest.raises(ValueError):
        PlannerConfig(row_prior=(1.0, 0.0))
    with pytest.raises(ValueError):
        PlannerConfig(cost_normalization="zscore")
    with pytest.raises(ValueError):
        PlannerConfig(lambda_entropy=-1.0)
    assert PlannerConfig(horizon=10).effective_latency == 2
    assert PlannerConfig(horizon=3).effective_latency == 1
    assert PlannerConfig(latency=0).effective_latency == 0


def test_priors():
    rows, cols = PlannerConfig().priors(4, 1)
    np.testing.assert_allclose(rows, 0.25)
    np.testing.assert_allclose(cols, [1.0])
    _, cols = PlannerConfig().priors(4, 2)
    np.testing.assert_allclose(cols, 0.5)
    with pytest.raises(ValueError):
        PlannerConfig(row_prior=(1.0, 1.0)).priors(3, 1)


def test_rollout_at_goal_stays():
    w = free_world(q=(150.0, 50.0))
    trace = rollout_expert(w, ATTRACTOR, 0, horizon=10)
    np.testing.assert_allclose(trace.positions, np.tile(w.goal, (10, 1)), atol=1e-9)
    assert trace.horizon == 10 and not trace.truncated


def test_rollout_one_step_is_euler():
    w = free_world(qd=(1.0, 0.5))
    trace = rollout_expert(w, ATTRACTOR, 0, horizon=1)
    stepped = step_world(w, rmpflow_baseline(make_state(w), ATTRACTOR))
    np.testing.assert_allclose(trace.positions[0], stepped.q)
    np.testing.assert_allclose(trace.velocities[0], stepped.q_dot)


def test_rollout_attractor_distance_decreases():
    w = free_world(q=(50.0, 50.0), goal=(150.0, 50.0))
    trace = rollout_expert(w, ATTRACTOR, 0, horizon=10)
    d = np.linalg.norm(trace.positions - w.goal, axis=1)
    assert np.all(np.diff(np.concatenate([[100.0], d])) < 0)


def test_rollout_matches_simulation_of_single_expert():
    w = sample_maze(2, 4)
    pool = ExpertPool.default(len(w.obstacles))
    k = pool.names.index("obstacle_avoid[1]")
    single = ExpertPool((pool.experts[k],), pool.params)
    trace = rollout_expert(w, pool, k, horizon=6)
    sim = w
    for t in range(6):
        sim = step_world(sim, rmpflow_baseline(make_state(sim), single))
        np.testing.assert_allclose(trace.positions[t], sim.q, atol=1e-12)


def test_cost_entry_zero_at_goal_without_obstacles():
    w = free_world(q=(150.0, 50.0))
    cfg = PlannerConfig(cost_normalization="none")
    cost = build_cost_matrix(w, ATTRACTOR, cfg)
    assert cost.shape == (1, 1)
    assert cost[0, 0] == pytest.approx(0.0, abs=1e-9)


def test_cost_on_surface_is_one():
    cfg = PlannerConfig(w_goal=0.0, w_collision=1.0, cost_normalization="none")
    positions = np.zeros((5, 1, 2))
    goal_cost, coll = trace_costs(positions, np.zeros((5, 1)), [9.0, 9.0], cfg)
    cost = assemble_cost(goal_cost, coll, np.array([True]), cfg, 100.0)
    assert cost[0] == pytest.approx(1.0)


def test_cost_matches_direct_formula():
    # two straight-line traces past a circle, evaluated by hand
    h = 4
    goal = np.array([10.0, 0.0])
    obstacle = Obstacle.circle([0.0, 5.0], 2.0)
    t = np.arange(1, h + 1, dtype=float)
    traces = np.stack([np.stack([t, np.zeros(h)], 1), np.stack([t, 2 * t], 1)], axis=1)
    cfg = PlannerConfig(w_goal=0.5, w_collision=2.0, collision_margin=3.0, cost_normalization="none")
    sdf = ObstacleSet.from_obstacles([obstacle]).min_sdf(traces.reshape(-1, 2)).reshape(h, 2)
    goal_cost, coll = trace_costs(traces, sdf, goal, cfg)
    got = assemble_cost(goal_cost, coll, np.array([True, True]), cfg, 100.0)
    for i in range(2):
        expected = 0.0
        for k in range(h):
            x, y = traces[k, i]
            d_goal = np.hypot(x - goal[0], y - goal[1])
            s = np.hypot(x - 0.0, y - 5.0) - 2.0
            expected += 0.5 * d_goal + 2.0 * np.exp(-s * s / (2 * 3.0**2))
        assert got[i] == pytest.approx(expected / h, rel=1e-12)


def test_minmax_normalization_and_sentinel():
    cfg = PlannerConfig(w_goal=1.0, w_collision=1.0)
    goal_cost = np.array([10.0, 30.0, 20.0, 5.0])
    coll = np.zeros(4)
    finite = np.array([True, True, True, False])
    cost = assemble_cost(goal_cost, coll, finite, cfg, d_max=283.0)
    np.testing.assert_allclose(cost, [0.0, 1.0, 0.5, 2.0])
    raw_cfg = PlannerConfig(w_goal=1.0, w_collision=10.0, cost_normalization="none")
    raw = assemble_cost(goal_cost, coll, finite, raw_cfg, 283.0)
    assert raw[3] == pytest.approx(283.0 + 10.0)


@pytest.mark.parametrize("executor", ["sequential", "threads"])
def test_cost_matrix_executors_agree(executor):
    w = step_world(sample_maze(7, 8, velocity_level=5.0), [1.0, 1.0])
    pool = ExpertPool.default(len(w.obstacles))
    cfg = PlannerConfig()
    batched = build_cost_matrix(w, pool, cfg, executor="batched")
    np.testing.assert_array_equal(build_cost_matrix(w, pool, cfg, executor=executor), batched)
    with pytest.raises(ValueError):
        build_cost_matrix(w, pool, cfg, executor="gpu")


def test_solve_temperature_examples():
    cfg = PlannerConfig()
    beta = solve_temperatures(np.array([[0.1], [0.9]]), cfg)
    assert beta.beta[0, 0] > beta.beta[1, 0]
    same = solve_temperatures(np.array([[0.4, 0.2], [0.4, 0.2]]), cfg)
    np.testing.assert_allclose(same.beta[0], same.beta[1], atol=1e-9)


def test_solve_temperature_balanced_limit():
    rng = np.random.default_rng(0)
    cost = rng.uniform(size=(3, 3))
    cfg = PlannerConfig(lambda_entropy=0.1, lambda_kl=1e4, row_prior=(1 / 3,) * 3,
                        col_prior=(1 / 3,) * 3, tolerance=1e-9, max_iterations=100000)
    beta = solve_temperatures(cost, cfg)
    ref = ot.solve_balanced(cost, np.full(3, 1 / 3), np.full(3, 1 / 3),
                            ot.SolverConfig(lambda_entropy=0.1, tolerance=1e-10))
    np.testing.assert_allclose(beta.beta, ref.entries, atol=1e-3)


def test_solve_temperature_reuses_previous_on_failure(caplog):
    cfg = PlannerConfig(max_iterations=1, tolerance=1e-15)
    prev = TemperatureMatrix(np.full((2, 1), 0.3), solved_at=4)
    with caplog.at_level("WARNING"):
        out = solve_temperatures(np.array([[0.1], [0.9]]), cfg, previous=prev, step=5)
    assert out is prev
    assert "did not converge" in caplog.text


def test_act_examples():
    w = step_world(sample_maze(3, 5), [0.5, -0.5])
    pool = ExpertPool.default(len(w.obstacles))
    s = make_state(w)
    n = len(pool)
    np.testing.assert_allclose(act(s, pool, np.ones((n, 1))), rmpflow_baseline(s, pool))
    rng = np.random.default_rng(0)
    beta = rng.uniform(0.1, 1.0, (n, 1))
    np.testing.assert_allclose(act(s, pool, 7 * beta), act(s, pool, beta), rtol=1e-9, atol=1e-12)
    k = pool.names.index("goal_attractor")
    hot = np.zeros((n, 1))
    hot[k] = 1.0
    single = ExpertPool((pool.experts[k],), pool.params)
    np.testing.assert_allclose(act(s, pool, hot), rmpflow_baseline(s, single), atol=1e-12)
    with pytest.raises(ValueError):
        act(s, pool, np.ones((n + 1, 1)))


def _trajectory(policy, world, pool, steps):
    policy.fit(pool)
    out = []
    for _ in range(steps):
        world = step_world(world, policy.predict(world))
        out.append(np.concatenate([world.q, world.q_dot]))
    return np.array(out), policy


def test_uniform_beta_reproduces_baseline():
    w = sample_box(3)
    pool = ExpertPool.default(1)

    def uniform(cost, cfg, previous, step):
        return TemperatureMatrix(np.ones_like(cost), step)

    a, _ = _trajectory(HiPBOTPolicy(temperature_solver=uniform), w, pool, 60)
    b, _ = _trajectory(RMPflowPolicy(), w, pool, 60)
    np.testing.assert_array_equal(a, b)


def test_async_zero_latency_equals_sync():
    w = sample_maze(1, 6, velocity_level=5.0)
    pool = ExpertPool.default(len(w.obstacles))
    a, _ = _trajectory(HiPBOTPolicy(mode="sync"), w, pool, 25)
    b, _ = _trajectory(HiPBOTPolicy(mode="async", latency=0), w, pool, 25)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("latency", [1, 3, 7])
def test_async_never_reads_fresh_temperatures(latency):
    w = sample_maze(2, 6, velocity_level=5.0)
    pool = ExpertPool.default(len(w.obstacles))
    _, pol = _trajectory(HiPBOTPolicy(mode="async", latency=latency), w, pool, 30)
    for t, solved_at in enumerate(pol.history_):
        assert solved_at == -1 or solved_at <= t - latency


def test_async_matches_sync_once_temperatures_settle():
    # with stationary temperatures the async loop acts exactly like sync after L steps
    w = free_world(q=(20.0, 30.0), goal=(170.0, 160.0))
    pool = ExpertPool((ExpertSpec("goal_attractor"), ExpertSpec("curl_cw"), ExpertSpec("curl_ccw")))

    def fixed(cost, cfg, previous, step):
        return TemperatureMatrix(np.array([[1.0], [0.2], [0.05]]), step)

    sync = HiPBOTPolicy(temperature_solver=fixed).fit(pool)
    lagged = HiPBOTPolicy(temperature_solver=fixed, mode="async", latency=5).fit(pool)
    for t in range(40):
        a = lagged.predict(w)
        if t >= 5:
            np.testing.assert_array_equal(a, sync.predict(w))
        w = step_world(w, a)


def test_beta_positive_every_step_and_deterministic(tmp_path):
    w = sample_maze(5, 8, velocity_level=5.0)
    pool = ExpertPool.default(len(w.obstacles))
    debug = tmp_path / "debug.jsonl"
    a, pol = _trajectory(HiPBOTPolicy(debug_path=str(debug)), w, pool, 30)
    b, _ = _trajectory(HiPBOTPolicy(), w, pool, 30)
    np.testing.assert_array_equal(a, b)
    lines = [json.loads(x) for x in debug.read_text().splitlines()]
    assert len(lines) == 30
    for rec in lines:
        assert np.all(np.array(rec["beta"]) > 0)
        assert np.all(np.isfinite(rec["cost"]))
    assert len(pol.plan_times_) == 30


def test_policy_estimator_api():
    pol = HiPBOTPolicy(horizon=5)
    assert pol.get_params()["horizon"] == 5
    assert pol.set_params(lambda_kl=0.3).lambda_kl == 0.3
    with pytest.raises(ValueError):
        HiPBOTPolicy(mode="parallel").fit(ATTRACTOR)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_cost_matrix_finite_property(seed, horizon):
    w = sample_maze(seed, 6, velocity_level=float(seed % 3) * 5.0)
    pool = ExpertPool.default(len(w.obstacles))
    cost = build_cost_matrix(w, pool, PlannerConfig(horizon=horizon))
    assert cost.shape == (len(pool), 1)
    assert np.all(np.isfinite(cost))
    beta = solve_temperatures(cost, PlannerConfig(horizon=horizon))
    assert np.all(beta.beta > 0)
