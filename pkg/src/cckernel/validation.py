"""Input validation helpers used across the estimator API."""

import numpy as np


def as_1d_array(x, name="array"):
    """Coerce ``x`` to a 1-D float array; a column vector ``(n, 1)`` is accepted."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr.ravel()
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D (or a column vector), got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be nonempty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_nonnegative_times(t, name="t"):
    """Return ``t`` as a float array after checking all entries are >= 0."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0):
        raise ValueError(f"{name} must be nonnegative")
    return arr


def check_strictly_increasing(t, name="instants"):
    arr = as_1d_array(t, name)
    if arr.size > 1 and np.any(np.diff(arr) <= 0):
        raise ValueError(f"{name} must be strictly increasing")
    return arr


def check_positive_scalar(x, name="value", allow_zero=False):
    x = float(x)
    if not np.isfinite(x):
        raise ValueError(f"{name} must be finite")
    if allow_zero:
        if x < 0:
            raise ValueError(f"{name} must be >= 0, got {x}")
    elif x <= 0:
        raise ValueError(f"{name} must be > 0, got {x}")
    return x
