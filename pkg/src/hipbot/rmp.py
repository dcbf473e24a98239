"""Riemannian Motion Policy algebra.

A task-space RMP is a pair ``(f, M)``: a desired task acceleration ``f`` and
a symmetric PSD metric ``M``. Pulling it back through a task map with
Jacobian ``J`` gives the configuration-space pair ``(J^T M f, J^T M J)``.
A set of pulled RMPs with nonnegative weights ``beta`` resolves to the
acceleration ``(sum beta M)^+ (sum beta f)``, which is also the minimizer
of the weighted quadratic energies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from ._validation import check_vector

# eigenvalues below this are treated as zero by the pseudo-inverse
PINV_CUTOFF = 1e-9


@dataclass(frozen=True)
class State:
    """Configuration ``q``, velocity ``q_dot`` and an environment snapshot."""

    q: np.ndarray
    q_dot: np.ndarray
    context: Any = None

    def __post_init__(self):
        q = check_vector(self.q, name="q")
        q_dot = check_vector(self.q_dot, dim=q.size, name="q_dot")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "q_dot", q_dot)

    @property
    def dim(self):
        return self.q.size


@dataclass(frozen=True)
class TaskMap:
    map: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def identity(cls):
        return cls(map=lambda q: np.array(q, dtype=float),
                   jacobian=lambda q: np.eye(np.size(q)))

    @classmethod
    def linear(cls, matrix, offset=None):
        matrix = np.asarray(matrix, dtype=float)
        offset = np.zeros(matrix.shape[0]) if offset is None else np.asarray(offset, dtype=float)
        return cls(map=lambda q: matrix @ q + offset, jacobian=lambda q: matrix)


@dataclass(frozen=True)
class TaskRmp:
    """Task-space policy: ``force(x, x_dot, context)`` and ``metric(x, x_dot, context)``."""

    force: Callable[..., np.ndarray]
    metric: Callable[..., np.ndarray]
    name: str = "rmp"


@dataclass(frozen=True)
class PulledRmp:
    f: np.ndarray
    M: np.ndarray
    name: str = field(default="rmp", compare=False)

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        M = np.asarray(self.M, dtype=float)
        if M.shape != (f.size, f.size):
            raise ValueError(f"metric shape {M.shape} does not match force dimension {f.size}")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "M", M)


def pullback(rmp, task_map, state):
    """Pull a task-space RMP back into configuration space at ``state``."""
    x = np.atleast_1d(task_map.map(state.q))
    J = np.atleast_2d(task_map.jacobian(state.q))
    if J.shape != (x.size, state.dim):
        raise ValueError(f"Jacobian shape {J.shape} inconsistent with map output {x.size} "
                         f"and configuration dimension {state.dim}")
    x_dot = J @ state.q_dot
    f_x = np.atleast_1d(np.asarray(rmp.force(x, x_dot, state.context), dtype=float))
    M_x = np.atleast_2d(np.asarray(rmp.metric(x, x_dot, state.context), dtype=float))
    if not (np.all(np.isfinite(f_x)) and np.all(np.isfinite(M_x))):
        raise ValueError(f"expert {rmp.name!r} produced a non-finite force or metric")
    M = J.T @ M_x @ J
    return PulledRmp(J.T @ M_x @ f_x, 0.5 * (M + M.T), rmp.name)


def psd_pinv(M, cutoff=PINV_CUTOFF):
    """Moore-Penrose pseudo-inverse of a symmetric PSD matrix by eigendecomposition.

    Works on stacks of matrices (``(..., d, d)``).
    """
    M = np.asarray(M, dtype=float)
    w, V = np.linalg.eigh(0.5 * (M + np.swapaxes(M, -1, -2)))
    inv = np.where(w > cutoff, 1.0 / np.where(w > cutoff, w, 1.0), 0.0)
    return (V * inv[..., None, :]) @ np.swapaxes(V, -1, -2)


def resolve(f, M):
    """Acceleration ``M^+ f`` for stacked forces ``(..., d)`` and metrics ``(..., d, d)``."""
    return np.einsum("...ij,...j->...i", psd_pinv(M), f)


def blend(pulled, weights=None):
    """Closed-form weighted blend ``(sum_i w_i M_i)^+ (sum_i w_i f_i)``.

    Parameters
    ----------
    pulled : sequence of PulledRmp, or sequence of ``(PulledRmp, weight)`` pairs
    weights : array-like, optional
        Nonnegative weights when ``pulled`` holds bare RMPs; defaults to ones.

    Returns the zero acceleration when the weighted metric vanishes.
    """
    pulled = list(pulled)
    if not pulled:
        raise ValueError("blend needs at least one RMP")
    if weights is None and isinstance(pulled[0], tuple):
        pulled, weights = zip(*pulled)
    weights = np.ones(len(pulled)) if weights is None else np.asarray(weights, dtype=float)
    if weights.shape != (len(pulled),):
        raise ValueError("one weight per RMP is required")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and nonnegative")
    f = sum(w * p.f for w, p in zip(weights, pulled))
    M = sum(w * p.M for w, p in zip(weights, pulled))
    return resolve(f, M)


def energy(rmp_pulled, a):
    """Quadratic energy ``1/2 (a - M^+ f)^T M (a - M^+ f)``; the Gaussian normalizer is dropped."""
    a = np.asarray(a, dtype=float)
    r = a - resolve(rmp_pulled.f, rmp_pulled.M)
    return float(max(0.5 * r @ rmp_pulled.M @ r, 0.0))
