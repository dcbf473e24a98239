"""Reference computations that are independent of the production solvers.

These are slow, brute-force checks used by the test-suite and by the
``hipbot oracle`` command. None of them call into :mod:`hipbot.ot` or
:mod:`hipbot.rmp`.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import minimize_scalar


def transportation_lp(cost, row_marginal, col_marginal, atol=1e-12):
    """Exact optimum of a small transportation LP by vertex enumeration.

    Every basic feasible solution of the transportation polytope has at most
    ``n + m - 1`` nonzero entries. All column subsets of that size are solved
    against the (rank ``n + m - 1``) equality system; feasible nonnegative
    solutions are vertices and the cheapest one is optimal.

    Returns
    -------
    value : float
    plan : ndarray of shape (n, m)
    """
    cost = np.asarray(cost, dtype=float)
    a = np.asarray(row_marginal, dtype=float)
    b = np.asarray(col_marginal, dtype=float)
    n, m = cost.shape
    if n * m > 25:
        raise ValueError("vertex enumeration is only meant for instances up to 5x5")

    eq = np.zeros((n + m, n * m))
    for i in range(n):
        eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        eq[n + j, j::m] = 1.0
    rhs = np.concatenate([a, b])

    k = n + m - 1
    subsets = np.array(list(itertools.combinations(range(n * m), k)))
    blocks = eq[:, subsets].transpose(1, 0, 2)           # (S, n+m, k)
    sols = np.einsum("sij,j->si", np.linalg.pinv(blocks), rhs)
    resid = np.abs(np.einsum("sij,sj->si", blocks, sols) - rhs).max(axis=1)
    ok = (resid < 1e-9) & np.all(sols > -atol, axis=1)
    if not np.any(ok):
        raise ValueError("no feasible vertex found; marginals must have equal mass")
    values = np.einsum("sk,sk->s", sols, cost.ravel()[subsets])
    values[~ok] = np.inf
    best = int(np.argmin(values))
    plan = np.zeros(n * m)
    plan[subsets[best]] = np.clip(sols[best], 0.0, None)
    return float(values[best]), plan.reshape(n, m)


def unbalanced_scalar(cost, row_prior, col_prior, lambda_entropy, lambda_kl):
    """Minimizer of the 1x1 unbalanced OT objective by golden-section search."""
    c, n0, m0 = float(cost), float(row_prior), float(col_prior)

    def gkl(w, z):
        return w * np.log(w / z) - w + z

    def objective(p):
        if p <= 0:
            return np.inf
        ent = -p * (np.log(p) - 1.0)
        return c * p - lambda_entropy * ent + lambda_kl * (gkl(p, n0) + gkl(p, m0))

    # search over log p; the objective is unimodal there and the bracket can grow freely
    res = minimize_scalar(lambda x: objective(np.exp(x)), bracket=(-1.0, 0.0), method="golden",
                          tol=1e-12)
    return float(np.exp(res.x))


def weighted_quadratic_minimizer(forces, metrics, weights, steps=20000, tol=1e-13):
    """Minimize ``sum_i w_i/2 (a - M_i^-1 f_i)^T M_i (a - M_i^-1 f_i)`` by gradient descent.

    The metrics are assumed invertible. The step size is the inverse of the
    largest eigenvalue of the Hessian, so descent is monotone.
    """
    forces = [np.asarray(f, dtype=float) for f in forces]
    metrics = [np.asarray(mm, dtype=float) for mm in metrics]
    targets = [np.linalg.solve(mm, f) for f, mm in zip(forces, metrics)]
    hess = sum(w * mm for w, mm in zip(weights, metrics))
    step = 1.0 / np.max(np.linalg.eigvalsh(hess))
    a = np.zeros_like(forces[0])
    for _ in range(steps):
        grad = sum(w * mm @ (a - t) for w, mm, t in zip(weights, metrics, targets))
        a = a - step * grad
        if np.max(np.abs(grad)) < tol:
            break
    return a


def finite_difference_jacobian(func, q, eps=1e-6):
    """Central-difference Jacobian of ``func`` at ``q``."""
    q = np.asarray(q, dtype=float)
    f0 = np.atleast_1d(func(q))
    jac = np.zeros((f0.size, q.size))
    for k in range(q.size):
        dq = np.zeros_like(q)
        dq[k] = eps
        jac[:, k] = (np.atleast_1d(func(q + dq)) - np.atleast_1d(func(q - dq))) / (2 * eps)
    return jac


def grid_sdf(inside, xs, ys, point):
    """Brute-force distance from ``point`` to the boundary of a rasterized shape.

    ``inside`` is a boolean grid over ``xs`` x ``ys`` (indexing ``ij``).
    Boundary cells are inside cells with an outside 4-neighbour; the signed
    distance is negative when ``point`` falls in an inside cell.
    """
    pad = np.pad(inside, 1, constant_values=False)
    interior = pad[1:-1, 1:-1] & pad[2:, 1:-1] & pad[:-2, 1:-1] & pad[1:-1, 2:] & pad[1:-1, :-2]
    boundary = inside & ~interior
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    bx, by = gx[boundary], gy[boundary]
    dist = float(np.min(np.hypot(bx - point[0], by - point[1])))
    ix = int(np.argmin(np.abs(xs - point[0])))
    iy = int(np.argmin(np.abs(ys - point[1])))
    return -dist if inside[ix, iy] else dist
