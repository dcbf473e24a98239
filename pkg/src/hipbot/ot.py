"""Entropic-regularized balanced and unbalanced optimal transport.

Both solvers are Sinkhorn-style diagonal scalings of the Gibbs kernel
``K = exp(-C / lambda)``. The plan always has the form
``diag(u) K diag(v)``; the solvers iterate on ``log u`` and ``log v``.

The unbalanced update raises the standard Sinkhorn ratio to the power
``lambda_kl / (lambda_kl + lambda)``. With that exponent equal to one the
update is the balanced Sinkhorn-Knopp step.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_cost_matrix, check_count, check_mass_vector, check_positive

__all__ = [
    "SolverConfig",
    "TransportPlan",
    "NumericalInstabilityError",
    "entropy",
    "generalized_kl",
    "solve_balanced",
    "solve_unbalanced",
    "plan_to_json",
    "SinkhornTransport",
    "UnbalancedSinkhornTransport",
]


class NumericalInstabilityError(FloatingPointError):
    """Raised when the plain multiplicative scaler over- or underflows."""


@dataclass(frozen=True)
class SolverConfig:
    lambda_entropy: float = 0.05
    lambda_kl: float = 1.0
    max_iterations: int = 1000
    tolerance: float = 1e-6
    stabilized: bool = True
    # balanced only: plain sweeps before each sweep is followed by a Newton step; None disables
    newton_after: int | None = 0
    # plain scaler only: on overflow re-solve in the log domain instead of raising
    fallback_to_stabilized: bool = True

    def __post_init__(self):
        check_positive(self.lambda_entropy, "lambda_entropy")
        check_positive(self.lambda_kl, "lambda_kl")
        check_positive(self.tolerance, "tolerance")
        check_count(self.max_iterations, "max_iterations")
        if self.newton_after is not None:
            check_count(self.newton_after, "newton_after", minimum=0)


@dataclass(frozen=True)
class TransportPlan:
    entries: np.ndarray
    converged: bool
    iterations: int
    marginal_error: float
    log_u: np.ndarray = field(repr=False, default=None)
    log_v: np.ndarray = field(repr=False, default=None)

    @property
    def shape(self):
        return self.entries.shape

    def transport_cost(self, cost):
        """Frobenius product ``<P, C>``."""
        return float(np.sum(self.entries * np.asarray(cost, dtype=float)))


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def entropy(plan):
    """Entropy ``-sum p (log p - 1)`` of a nonnegative plan, with ``0 log 0 = 0``.

    ``plan`` may be a :class:`TransportPlan` or an array.
    """
    p = plan.entries if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    if np.any(p < 0):
        raise ValueError("plan entries must be nonnegative")
    return float(-np.sum(_xlogx(p)) + np.sum(p))


def generalized_kl(w, z):
    """Generalized KL divergence ``w.log(w / z) - sum(w) + sum(z)`` between positive vectors."""
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)
    if w.shape != z.shape:
        raise ValueError(f"shape mismatch: {w.shape} vs {z.shape}")
    if np.any(w < 0) or np.any(z < 0):
        raise ValueError("generalized_kl expects nonnegative vectors")
    if np.any((z == 0) & (w > 0)):
        raise ValueError("generalized_kl undefined: z has a zero where w is positive")
    pos = w > 0
    val = np.sum(w[pos] * np.log(w[pos] / z[pos])) - w.sum() + z.sum()
    return float(max(val, 0.0))


def _logsumexp(a, axis):
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    out = np.log(np.sum(np.exp(a - amax), axis=axis)) + np.squeeze(amax, axis=axis)
    return out


def _gibbs(log_k, log_u, log_v):
    return np.exp(log_u[:, None] + log_k + log_v[None, :])


def _sweep_log(log_k, log_a, log_b, exponent, log_u, log_v):
    log_u = exponent * (log_a - _logsumexp(log_k + log_v[None, :], axis=1))
    log_v = exponent * (log_b - _logsumexp(log_k + log_u[:, None], axis=0))
    return log_u, log_v


def _sweep_plain(kernel, a, b, exponent, log_u, log_v):
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        u = (a / (kernel @ np.exp(log_v))) ** exponent
        v = (b / (kernel.T @ u)) ** exponent
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v)) and np.all(u > 0) and np.all(v > 0)):
            raise NumericalInstabilityError(
                "plain Sinkhorn scaling over/underflowed; use the stabilized (log-domain) solver")
        return np.log(u), np.log(v)


_NEWTON_STEP_CAP = 30.0


def _newton_step(log_k, a, b, log_u, log_v):
    """One damped Newton ascent step on the balanced dual in log-scaling coordinates.

    Sinkhorn alone converges sublinearly on degenerate instances at small
    lambda. The dual is smooth and concave with a single flat direction (a
    constant shift between row and column potentials), which is removed by
    pinning the last column potential.
    """
    n, m = log_k.shape

    def dual(x, y):
        return float(x @ a + y @ b - np.exp(_logsumexp((log_k + x[:, None] + y[None, :]).ravel(), 0)))

    plan = _gibbs(log_k, log_u, log_v)
    r, c = plan.sum(axis=1), plan.sum(axis=0)
    grad = np.concatenate([a - r, b - c])
    hess = np.zeros((n + m, n + m))
    hess[:n, :n] = np.diag(r)
    hess[n:, n:] = np.diag(c)
    hess[:n, n:] = plan
    hess[n:, :n] = plan.T
    step = np.zeros(n + m)
    step[:-1] = np.linalg.lstsq(hess[:-1, :-1], grad[:-1], rcond=1e-12)[0]
    # weakly coupled blocks give huge raw steps; capping keeps exp() finite
    biggest = float(np.max(np.abs(step)))
    if biggest > _NEWTON_STEP_CAP:
        step *= _NEWTON_STEP_CAP / biggest
    value = dual(log_u, log_v)
    slope = float(grad @ step)
    t = 1.0
    while t > 1e-8:
        nu, nv = log_u + t * step[:n], log_v + t * step[n:]
        if dual(nu, nv) >= value + 1e-4 * t * slope:
            return nu, nv
        t *= 0.5
    return log_u, log_v


def _run(cost, a, b, cfg, exponent, balanced, init):
    n, m = cost.shape
    if init is None:
        log_u, log_v = np.zeros(n), np.zeros(m)
    else:
        log_u = np.asarray(init[0], dtype=float).copy()
        log_v = np.asarray(init[1], dtype=float).copy()
        if log_u.shape != (n,) or log_v.shape != (m,):
            raise ValueError("init scalings do not match the cost shape")
    log_k = -cost / cfg.lambda_entropy
    with np.errstate(divide="ignore"):
        log_a, log_b = np.log(a), np.log(b)
    stabilized = cfg.stabilized
    kernel = None if stabilized else np.exp(log_k)
    newton_from = cfg.newton_after if (balanced and cfg.newton_after is not None) else None

    plan = _gibbs(log_k, log_u, log_v)
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        if stabilized:
            log_u, log_v = _sweep_log(log_k, log_a, log_b, exponent, log_u, log_v)
        else:
            try:
                log_u, log_v = _sweep_plain(kernel, a, b, exponent, log_u, log_v)
            except NumericalInstabilityError:
                if not cfg.fallback_to_stabilized:
                    raise
                warnings.warn("plain Sinkhorn scaling overflowed; switching to the log-domain solver",
                              RuntimeWarning, stacklevel=4)
                stabilized = True
                log_u, log_v = _sweep_log(log_k, log_a, log_b, exponent, log_u, log_v)
        if newton_from is not None and it > newton_from:
            log_u, log_v = _newton_step(log_k, a, b, log_u, log_v)
        new_plan = _gibbs(log_k, log_u, log_v)
        change = float(np.max(np.abs(new_plan - plan)))
        plan = new_plan
        if change < cfg.tolerance and (not balanced or _marginal_error(plan, a, b) < cfg.tolerance):
            converged = True
            break
    return plan, log_u, log_v, converged, it


def _marginal_error(plan, a, b):
    return float(max(np.max(np.abs(plan.sum(axis=1) - a)), np.max(np.abs(plan.sum(axis=0) - b))))


def solve_balanced(cost, row_marginal, col_marginal, cfg=None, init=None):
    """Entropic-regularized OT plan between two marginals of equal mass.

    Parameters
    ----------
    cost : array-like of shape (n, m)
    row_marginal : array-like of shape (n,)
    col_marginal : array-like of shape (m,)
        Nonnegative masses; zero entries are allowed and the matching rows or
        columns of the plan are fixed at zero.
    cfg : SolverConfig, optional
        Only ``lambda_entropy``, ``max_iterations``, ``tolerance`` and
        ``stabilized`` are used.
    init : tuple of arrays, optional
        Initial ``(log u, log v)``; defaults to all-ones scalings.

    Returns
    -------
    TransportPlan
        ``converged`` is False when ``max_iterations`` ran out first.
    """
    cfg = cfg or SolverConfig()
    a = check_mass_vector(row_marginal, "row_marginal")
    b = check_mass_vector(col_marginal, "col_marginal")
    cost = check_cost_matrix(cost, shape=(a.size, b.size))
    total = max(a.sum(), b.sum())
    if abs(a.sum() - b.sum()) > cfg.tolerance * max(1.0, total):
        raise ValueError(f"marginal masses differ: {a.sum()!r} vs {b.sum()!r}")

    rows = np.flatnonzero(a > 0)
    cols = np.flatnonzero(b > 0)
    sub_init = None
    if init is not None:
        sub_init = (np.asarray(init[0])[rows], np.asarray(init[1])[cols])
    plan_s, lu, lv, converged, it = _run(
        cost[np.ix_(rows, cols)], a[rows], b[cols], cfg, 1.0, True, sub_init)

    plan = np.zeros_like(cost)
    plan[np.ix_(rows, cols)] = plan_s
    log_u = np.full(a.size, -np.inf)
    log_v = np.full(b.size, -np.inf)
    log_u[rows], log_v[cols] = lu, lv
    return TransportPlan(plan, bool(converged), int(it), _marginal_error(plan, a, b), log_u, log_v)


def solve_unbalanced(cost, row_prior, col_prior, cfg=None, init=None):
    """Entropic-regularized unbalanced OT with generalized-KL marginal penalties.

    Minimizes ``<P, C> - lambda H(P) + lambda_kl (KL~(P1 | n) + KL~(P^T 1 | m))``
    over nonnegative ``P`` by generalized matrix scaling. The solution is
    unique and every entry is strictly positive.

    ``marginal_error`` on the result is the max-norm gap between the plan's
    marginals and the priors; it measures how much mass was relaxed, not
    convergence.
    """
    cfg = cfg or SolverConfig()
    a = check_mass_vector(row_prior, "row_prior", allow_zero=False)
    b = check_mass_vector(col_prior, "col_prior", allow_zero=False)
    cost = check_cost_matrix(cost, shape=(a.size, b.size))
    exponent = cfg.lambda_kl / (cfg.lambda_kl + cfg.lambda_entropy)
    plan, lu, lv, converged, it = _run(cost, a, b, cfg, exponent, False, init)
    return TransportPlan(plan, bool(converged), int(it), _marginal_error(plan, a, b), lu, lv)


def plan_to_json(cost, row_mass, col_mass, plan, **extra):
    """Serialize one solve for diagnostics."""
    record = {
        "cost": np.asarray(cost, dtype=float).tolist(),
        "row_mass": np.asarray(row_mass, dtype=float).tolist(),
        "col_mass": np.asarray(col_mass, dtype=float).tolist(),
        "plan": plan.entries.tolist(),
        "iterations": plan.iterations,
        "converged": plan.converged,
        "marginal_error": plan.marginal_error,
    }
    record.update(extra)
    return json.dumps(record)


class SinkhornTransport(BaseEstimator):
    """Estimator wrapper around :func:`solve_balanced`.

    ``fit(cost, row_marginal, col_marginal)`` stores ``plan_``,
    ``converged_``, ``n_iter_`` and ``marginal_error_``. Marginals default
    to uniform histograms.
    """

    def __init__(self, lambda_entropy=0.05, max_iterations=1000, tolerance=1e-6, stabilized=True):
        self.lambda_entropy = lambda_entropy
        self.max_iterations = max_iterations
        self.tolerance = tolerance
        self.stabilized = stabilized

    def _config(self):
        return SolverConfig(lambda_entropy=self.lambda_entropy, max_iterations=self.max_iterations,
                            tolerance=self.tolerance, stabilized=self.stabilized)

    def _solve(self, cost, a, b):
        return solve_balanced(cost, a, b, self._config())

    def fit(self, cost, row_marginal=None, col_marginal=None):
        cost = check_cost_matrix(cost)
        n, m = cost.shape
        a = np.full(n, 1.0 / n) if row_marginal is None else row_marginal
        b = np.full(m, 1.0 / m) if col_marginal is None else col_marginal
        result = self._solve(cost, a, b)
        self.plan_ = result.entries
        self.converged_ = result.converged
        self.n_iter_ = result.iterations
        self.marginal_error_ = result.marginal_error
        self.transport_cost_ = result.transport_cost(cost)
        return self

    def fit_transform(self, cost, row_marginal=None, col_marginal=None):
        return self.fit(cost, row_marginal, col_marginal).plan_


class UnbalancedSinkhornTransport(SinkhornTransport):
    """Estimator wrapper around :func:`solve_unbalanced`. Priors default to ones."""

    def __init__(self, lambda_entropy=0.05, lambda_kl=1.0, max_iterations=1000, tolerance=1e-6,
                 stabilized=True):
        super().__init__(lambda_entropy=lambda_entropy, max_iterations=max_iterations,
                         tolerance=tolerance, stabilized=stabilized)
        self.lambda_kl = lambda_kl

    def _config(self):
        return SolverConfig(lambda_entropy=self.lambda_entropy, lambda_kl=self.lambda_kl,
                            max_iterations=self.max_iterations, tolerance=self.tolerance,
                            stabilized=self.stabilized)

    def _solve(self, cost, a, b):
        return solve_unbalanced(cost, a, b, self._config())

    def fit(self, cost, row_prior=None, col_prior=None):
        cost = check_cost_matrix(cost)
        n, m = cost.shape
        a = np.ones(n) if row_prior is None else row_prior
        b = np.ones(m) if col_prior is None else col_prior
        result = self._solve(cost, a, b)
        self.plan_ = result.entries
        self.converged_ = result.converged
        self.n_iter_ = result.iterations
        self.marginal_error_ = result.marginal_error
        self.transport_cost_ = result.transport_cost(cost)
        return self
