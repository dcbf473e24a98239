"""Input validation helpers shared by the solvers, geometry and planner."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_mass_vector(values, name="mass", allow_zero=True):
    """Return ``values`` as a finite, nonnegative 1-D float array.

    At least one entry must be positive. With ``allow_zero=False`` every
    entry must be strictly positive.
    """
    arr = check_array(values, ensure_2d=False, dtype=np.float64, input_name=name)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if np.any(arr < 0):
        raise ValueError(f"{name} has negative entries")
    if not np.any(arr > 0):
        raise ValueError(f"{name} must have at least one positive entry")
    if not allow_zero and np.any(arr == 0):
        raise ValueError(f"{name} must be strictly positive")
    return arr


def check_cost_matrix(cost, shape=None):
    """Return ``cost`` as a finite 2-D float array, optionally of ``shape``."""
    arr = check_array(cost, dtype=np.float64, input_name="cost")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"cost has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def check_vector(values, dim=None, name="vector"):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_count(value, name, minimum=1):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)
