import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linprog

from hipbot import oracles, ot
from hipbot.ot import (SinkhornTransport, SolverConfig, UnbalancedSinkhornTransport, entropy,
                       generalized_kl, solve_balanced, solve_unbalanced)


def test_entropy_examples():
    assert entropy(np.array([[1.0]])) == pytest.approx(1.0)
    assert entropy(np.zeros((3, 2))) == 0.0
    p = np.full((2, 2), 0.25)
    assert entropy(p) == pytest.approx(-4 * 0.25 * (np.log(0.25) - 1.0))


def test_entropy_rejects_negative():
    with pytest.raises(ValueError):
        entropy(np.array([[-0.1, 1.0]]))


def test_generalized_kl_examples():
    assert generalized_kl([0.3, 0.7], [0.3, 0.7]) == pytest.approx(0.0, abs=1e-15)
    assert generalized_kl([0.0, 1.0], [1.0, 1.0]) == pytest.approx(1.0)
    assert generalized_kl([2.0, 2.0], [1.0, 1.0]) == pytest.approx(4 * np.log(2) - 4 + 2)


def test_generalized_kl_zero_support_error():
    with pytest.raises(ValueError):
        generalized_kl([1.0, 1.0], [0.0, 1.0])


@given(arrays(float, 4, elements=st.floats(0.01, 5.0)), arrays(float, 4, elements=st.floats(0.01, 5.0)))
def test_generalized_kl_nonnegative(w, z):
    val = generalized_kl(w, z)
    assert val >= 0.0
    assert generalized_kl(w, w) == pytest.approx(0.0, abs=1e-12)


def test_balanced_constant_cost_is_independent_coupling():
    plan = solve_balanced(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5])
    np.testing.assert_allclose(plan.entries, 0.25, atol=1e-12)
    assert plan.converged


def test_balanced_single_cell():
    plan = solve_balanced([[3.7]], [1.0], [1.0])
    np.testing.assert_allclose(plan.entries, [[1.0]])


def test_balanced_mass_mismatch():
    with pytest.raises(ValueError, match="marginal masses differ"):
        solve_balanced(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.6])


def test_balanced_zero_marginal_rows():
    cost = np.random.default_rng(0).uniform(size=(3, 3))
    plan = solve_balanced(cost, [0.5, 0.0, 0.5], [1 / 3] * 3)
    assert np.all(plan.entries[1] == 0)
    assert plan.marginal_error < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_lp_oracle_matches_linprog(seed):
    rng = np.random.default_rng(seed)
    cost = rng.uniform(size=(3, 4))
    a = rng.dirichlet(np.ones(3))
    b = rng.dirichlet(np.ones(4))
    value, plan = oracles.transportation_lp(cost, a, b)
    eq = np.vstack([np.kron(np.eye(3), np.ones(4)), np.kron(np.ones(3), np.eye(4))])
    ref = linprog(cost.ravel(), A_eq=eq, b_eq=np.concatenate([a, b]), bounds=(0, None))
    assert value == pytest.approx(ref.fun, abs=1e-9)
    np.testing.assert_allclose(plan.sum(axis=1), a, atol=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_balanced_near_lp_optimum_small_lambda(seed):
    rng = np.random.default_rng(100 + seed)
    cost = rng.uniform(size=(4, 4))
    marg = np.full(4, 0.25)
    lp, _ = oracles.transportation_lp(cost, marg, marg)
    plan = solve_balanced(cost, marg, marg, SolverConfig(lambda_entropy=1e-3))
    assert plan.converged
    assert plan.transport_cost(cost) <= lp * 1.01 + 1e-12
    assert plan.marginal_error <= 1e-6


def test_balanced_plain_matches_stabilized():
    rng = np.random.default_rng(3)
    cost = rng.uniform(size=(3, 5))
    a, b = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(5))
    cfg = SolverConfig(lambda_entropy=0.1)
    p1 = solve_balanced(cost, a, b, cfg)
    p2 = solve_balanced(cost, a, b, SolverConfig(lambda_entropy=0.1, stabilized=False))
    np.testing.assert_allclose(p1.entries, p2.entries, atol=1e-7)


def test_plain_scaler_falls_back_on_overflow():
    cost = np.array([[50.0, 50.0], [0.0, 0.0]])
    cfg = SolverConfig(lambda_entropy=1e-3, stabilized=False)
    with pytest.warns(RuntimeWarning):
        plan = solve_balanced(cost, [0.5, 0.5], [0.5, 0.5], cfg)
    assert np.all(np.isfinite(plan.entries))
    strict = SolverConfig(lambda_entropy=1e-3, stabilized=False, fallback_to_stabilized=False)
    with pytest.raises(ot.NumericalInstabilityError):
        solve_balanced(cost, [0.5, 0.5], [0.5, 0.5], strict)


def test_nonconvergence_is_flagged():
    rng = np.random.default_rng(1)
    cost = rng.uniform(size=(4, 4))
    plan = solve_balanced(cost, [0.25] * 4, [0.25] * 4,
                          SolverConfig(lambda_entropy=1e-3, max_iterations=1, newton_after=None))
    assert not plan.converged
    assert plan.iterations == 1


def test_gibbs_form():
    rng = np.random.default_rng(2)
    cost = rng.uniform(size=(3, 4))
    cfg = SolverConfig(lambda_entropy=0.2)
    plan = solve_unbalanced(cost, np.ones(3), np.ones(4), cfg)
    rebuilt = np.exp(plan.log_u[:, None] - cost / 0.2 + plan.log_v[None, :])
    np.testing.assert_allclose(plan.entries, rebuilt, rtol=1e-10)


def test_unbalanced_scalar_oracle():
    plan = solve_unbalanced([[0.0]], [1.0], [1.0], SolverConfig(lambda_entropy=1.0, lambda_kl=1.0,
                                                                 tolerance=1e-12))
    ref = oracles.unbalanced_scalar(0.0, 1.0, 1.0, 1.0, 1.0)
    assert plan.entries[0, 0] == pytest.approx(ref, abs=1e-6)


@pytest.mark.parametrize("c,n0,m0,lam,lkl", [(0.3, 2.0, 0.5, 0.5, 1.0), (1.5, 1.0, 1.0, 0.1, 0.3)])
def test_unbalanced_scalar_oracle_general(c, n0, m0, lam, lkl):
    cfg = SolverConfig(lambda_entropy=lam, lambda_kl=lkl, tolerance=1e-13, max_iterations=5000)
    plan = solve_unbalanced([[c]], [n0], [m0], cfg)
    assert plan.entries[0, 0] == pytest.approx(oracles.unbalanced_scalar(c, n0, m0, lam, lkl),
                                               rel=1e-6)


def _uot_objective(p, cost, a, b, lam, lkl):
    return (np.sum(p * cost) - lam * entropy(p) + lkl * (generalized_kl(p.sum(1), a)
                                                         + generalized_kl(p.sum(0), b)))


def test_unbalanced_is_local_minimum():
    rng = np.random.default_rng(4)
    cost = rng.uniform(size=(3, 3))
    a, b = rng.uniform(0.5, 1.5, 3), rng.uniform(0.5, 1.5, 3)
    cfg = SolverConfig(lambda_entropy=0.1, lambda_kl=0.5, tolerance=1e-12, max_iterations=10000)
    p = solve_unbalanced(cost, a, b, cfg).entries
    base = _uot_objective(p, cost, a, b, 0.1, 0.5)
    for _ in range(50):
        q = p * np.exp(1e-3 * rng.normal(size=p.shape))
        assert _uot_objective(q, cost, a, b, 0.1, 0.5) >= base - 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_unbalanced_balanced_limit(seed):
    rng = np.random.default_rng(seed)
    cost = rng.uniform(size=(3, 3))
    marg = np.full(3, 1 / 3)
    cfg = SolverConfig(lambda_entropy=0.1, lambda_kl=1e4, tolerance=1e-9, max_iterations=100000)
    pu = solve_unbalanced(cost, marg, marg, cfg).entries
    pb = solve_balanced(cost, marg, marg, SolverConfig(lambda_entropy=0.1, tolerance=1e-10)).entries
    np.testing.assert_allclose(pu, pb, atol=1e-3)


def test_unbalanced_cost_monotone():
    plan = solve_unbalanced([[0.1], [0.9]], [0.5, 0.5], [1.0])
    assert plan.entries[0, 0] > plan.entries[1, 0]


def test_unbalanced_symmetric_rows():
    cost = np.array([[0.2, 0.4], [0.2, 0.4], [0.9, 0.1]])
    p = solve_unbalanced(cost, np.ones(3), np.ones(2)).entries
    np.testing.assert_allclose(p[0], p[1], atol=1e-9)


def test_unbalanced_rejects_zero_prior():
    with pytest.raises(ValueError):
        solve_unbalanced(np.zeros((2, 2)), [0.0, 1.0], [1.0, 1.0])


def test_cost_shape_checked():
    with pytest.raises(ValueError):
        solve_balanced(np.zeros((2, 3)), [0.5, 0.5], [0.5, 0.5])
    with pytest.raises(ValueError):
        solve_balanced([[np.inf, 0.0], [0.0, 0.0]], [0.5, 0.5], [0.5, 0.5])


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(lambda_entropy=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=0)
    with pytest.raises(ValueError):
        SolverConfig(tolerance=-1.0)


def test_warm_start_reaches_same_plan():
    rng = np.random.default_rng(5)
    cost = rng.uniform(size=(4, 2))
    cfg = SolverConfig(tolerance=1e-10)
    cold = solve_unbalanced(cost, np.full(4, 0.25), np.ones(2), cfg)
    warm = solve_unbalanced(cost + 0.01, np.full(4, 0.25), np.ones(2), cfg,
                            init=(cold.log_u, cold.log_v))
    ref = solve_unbalanced(cost + 0.01, np.full(4, 0.25), np.ones(2), cfg)
    np.testing.assert_allclose(warm.entries, ref.entries, atol=1e-8)
    assert warm.iterations <= ref.iterations


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1),
       st.floats(1e-2, 1.0), st.floats(1e-2, 10.0))
def test_unbalanced_plan_positive_and_finite(n, m, seed, lam, lkl):
    # cost / lambda stays below the float64 exp underflow threshold
    rng = np.random.default_rng(seed)
    cost = rng.uniform(0, 5, size=(n, m))
    plan = solve_unbalanced(cost, rng.uniform(0.1, 2, n), rng.uniform(0.1, 2, m),
                            SolverConfig(lambda_entropy=lam, lambda_kl=lkl))
    assert np.all(np.isfinite(plan.entries))
    assert np.all(plan.entries > 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1), st.floats(1e-2, 1.0))
def test_balanced_marginals_property(n, m, seed, lam):
    rng = np.random.default_rng(seed)
    cost = rng.uniform(size=(n, m))
    a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
    plan = solve_balanced(cost, a, b, SolverConfig(lambda_entropy=lam))
    assert plan.converged
    assert np.all(plan.entries >= 0)
    np.testing.assert_allclose(plan.entries.sum(axis=1), a, atol=1e-6)
    np.testing.assert_allclose(plan.entries.sum(axis=0), b, atol=1e-6)


def test_estimators():
    cost = np.random.default_rng(6).uniform(size=(3, 3))
    est = SinkhornTransport(lambda_entropy=0.1).fit(cost)
    np.testing.assert_allclose(est.plan_.sum(axis=0), 1 / 3, atol=1e-6)
    assert est.get_params()["lambda_entropy"] == 0.1
    uest = UnbalancedSinkhornTransport(lambda_kl=0.5).fit(cost)
    assert np.all(uest.plan_ > 0)
    assert uest.transport_cost_ == pytest.approx(np.sum(uest.plan_ * cost))
    assert uest.set_params(lambda_kl=2.0).lambda_kl == 2.0


def test_plan_to_json_roundtrip():
    import json
    plan = solve_balanced(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5])
    rec = json.loads(ot.plan_to_json(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5], plan, step=3))
    assert rec["step"] == 3
    np.testing.assert_allclose(rec["plan"], plan.entries)
