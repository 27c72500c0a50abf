"""Gaussian increment process whose covariance matches a min-kernel Gram.

Sorting the grid by coordinate value turns the kernel into a discrete Wiener
covariance: independent Gaussian increments with variances equal to the gaps
between consecutive sorted values (anchored at zero) accumulate into a
process with covariance ``min(v_i, v_j)``. Sampling is fully counter-based:
the normal draw for (path, step) is a pure function of the seed and the flat
index, so results do not depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .kernels import validate_grid
from .validation import as_1d_array


@dataclass(frozen=True)
class IncrementProcess:
    """Sorted-coordinate increment representation of a min-kernel process."""

    grid: np.ndarray
    order: np.ndarray
    sorted_values: np.ndarray
    increment_std: np.ndarray

    def __post_init__(self):
        if np.any(self.increment_std <= 0):
            raise ValueError("increments must be strictly positive")

    @property
    def size(self):
        return self.grid.size

    def covariance(self):
        """Gram matrix implied by the increments, in user grid order."""
        v = np.empty(self.size)
        v[self.order] = self.sorted_values
        return np.minimum.outer(v, v)


def build_process(kernel, grid, eps=1e-12):
    """Increment process for ``kernel`` on ``grid`` (requires a valid grid)."""
    grid = as_1d_array(grid, "grid")
    order = validate_grid(kernel, grid, eps)
    values = np.asarray(kernel.coordinate_values(grid), dtype=float)[order]
    increments = np.diff(np.concatenate([[0.0], values]))
    return IncrementProcess(
        grid=grid.copy(),
        order=np.asarray(order),
        sorted_values=values,
        increment_std=np.sqrt(increments),
    )


def sample(process, seed, n_paths):
    """Draw ``n_paths`` process realizations, returned in user grid order.

    Uses the counter-based Philox generator keyed by ``seed``; normals come
    from the inverse CDF of counter-addressed uniforms, so the value at
    (path ``p``, step ``s``) depends only on ``(seed, p * n + s)``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    n = process.size
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    uniforms = gen.random((int(n_paths), n))
    normals = ndtri(np.clip(uniforms, 2.0**-64, 1.0 - 2.0**-53))
    sorted_paths = np.cumsum(normals * process.increment_std, axis=1)
    paths = np.empty_like(sorted_paths)
    paths[:, process.order] = sorted_paths
    return paths
