"""Min-composed kernels and closed-form Gram determinant / sparse inverse.

All kernels here have the form ``K(t1, t2) = min(v(t1), v(t2))`` for a
nonnegative coordinate function ``v``:

* first-order spline kernel: ``v(t) = scale * t`` on ``[0, 1]``
* TC kernel: ``v(t) = scale * exp(-decay * t)``
* coordinate-change kernel: ``v(t) = |g0(t)|`` for a stable strictly proper
  rational system with impulse response ``g0``

On a grid whose coordinate values are positive and pairwise distinct, the
Gram matrix has a closed-form determinant and an inverse of the form
``R^T P R`` with a permutation ``R`` and a tridiagonal ``P``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import DegenerateGridError
from .lti import PartialFractionForm, RationalTransferFunction, partial_fraction_decompose
from .validation import as_1d_array, check_nonnegative_times, check_positive_scalar

DEFAULT_GRID_TOL = 1e-12


class MinCoordinateKernel:
    """Base class: ``K(t1, t2) = min(v(t1), v(t2))`` with ``v = coordinate_values``."""

    def coordinate_values(self, t):
        raise NotImplementedError

    def scalar_coordinate(self, t):
        """``v(t)`` for scalar ``t``; overridden where array overhead matters."""
        return float(self.coordinate_values(t))

    def _check_domain(self, t):
        check_nonnegative_times(t, "kernel argument")

    def __call__(self, t1, t2):
        self._check_domain(t1)
        self._check_domain(t2)
        return np.minimum(self.coordinate_values(t1), self.coordinate_values(t2))

    def to_dict(self):
        raise NotImplementedError


class FirstOrderSplineKernel(MinCoordinateKernel):
    """``K(x1, x2) = scale * min(x1, x2)`` on the unit square."""

    def __init__(self, scale=1.0):
        self.scale = check_positive_scalar(scale, "scale")

    def _check_domain(self, t):
        t = check_nonnegative_times(t, "kernel argument")
        if np.any(np.asarray(t) > 1.0):
            raise ValueError("spline kernel arguments must lie in [0, 1]")

    def coordinate_values(self, t):
        return self.scale * np.asarray(t, dtype=float)

    def scalar_coordinate(self, t):
        return self.scale * float(t)

    def to_dict(self):
        return {"type": "spline", "scale": self.scale}


class TCKernel(MinCoordinateKernel):
    """``K(t1, t2) = scale * min(exp(-decay*t1), exp(-decay*t2))``."""

    def __init__(self, scale=1.0, decay=1.0):
        self.scale = check_positive_scalar(scale, "scale")
        self.decay = check_positive_scalar(decay, "decay")

    def coordinate_values(self, t):
        return self.scale * np.exp(-self.decay * np.asarray(t, dtype=float))

    def scalar_coordinate(self, t):
        return self.scale * math.exp(-self.decay * t)

    def to_dict(self):
        return {"type": "tc", "scale": self.scale, "decay": self.decay}


class CoordinateChangeKernel(MinCoordinateKernel):
    """``K(t1, t2) = min(|g0(t1)|, |g0(t2)|)`` for a stable system's response.

    Parameters
    ----------
    system : RationalTransferFunction or PartialFractionForm
        The coordinate change; a transfer function is decomposed once at
        construction.
    theta : dict, optional
        Named hyperparameters recorded for bookkeeping (e.g. by the tuning
        routines); they do not affect evaluation.
    response : PartialFractionForm, optional
        Precomputed decomposition of ``system``, for callers that already
        hold it (must match ``system``); skips the decomposition work.
    """

    def __init__(self, system, theta=None, response=None):
        if isinstance(system, RationalTransferFunction):
            self.system = system
            self.response = response if response is not None else partial_fraction_decompose(system)
        elif isinstance(system, PartialFractionForm):
            self.system = None
            self.response = system
        else:
            raise TypeError("system must be a transfer function or partial fraction form")
        self.theta = dict(theta) if theta else {}

    def coordinate_values(self, t):
        return self.response.magnitude(t)

    def scalar_coordinate(self, t):
        return abs(self.response.evaluate_scalar(t))

    def to_dict(self):
        if self.system is None:
            raise ValueError("kernel built from a bare decomposition is not serializable")
        d = {"type": "coordinate_change", "system": self.system.to_dict()}
        if self.theta:
            d["theta"] = dict(self.theta)
        return d


def kernel_from_dict(d):
    kind = d.get("type")
    if kind == "spline":
        return FirstOrderSplineKernel(d.get("scale", 1.0))
    if kind == "tc":
        return TCKernel(d.get("scale", 1.0), d.get("decay", 1.0))
    if kind == "coordinate_change":
        return CoordinateChangeKernel(
            RationalTransferFunction.from_dict(d["system"]), d.get("theta")
        )
    raise ValueError(f"unknown kernel type: {kind!r}")


def kernel_eval(kernel, t1, t2):
    """Pointwise kernel evaluation (domain-checked)."""
    return kernel(t1, t2)


def gram(kernel, grid):
    """Dense symmetric Gram matrix ``K[i, j] = kernel(grid[i], grid[j])``.

    Zero or repeated coordinate values are allowed here; only the closed-form
    determinant/inverse paths require a non-degenerate grid.
    """
    grid = as_1d_array(grid, "grid")
    kernel._check_domain(grid)
    v = np.asarray(kernel.coordinate_values(grid), dtype=float)
    return np.minimum.outer(v, v)


def validate_grid(kernel, grid, eps=DEFAULT_GRID_TOL):
    """Sort the grid by coordinate value, rejecting degenerate configurations.

    Returns the index permutation ``order`` with ``v[order]`` strictly
    increasing. Raises :class:`DegenerateGridError` when the smallest value or
    any sorted gap is below ``eps * max(v)`` (the Gram matrix is then exactly
    singular, or numerically indistinguishable from singular).
    """
    grid = as_1d_array(grid, "grid")
    kernel._check_domain(grid)
    v = np.asarray(kernel.coordinate_values(grid), dtype=float)
    scale = float(np.max(np.abs(v))) if v.size else 0.0
    if scale <= 0.0:
        raise DegenerateGridError("all coordinate values are zero", indices=(0,))
    order = np.argsort(v, kind="stable")
    v_sorted = v[order]
    if v_sorted[0] <= eps * scale:
        raise DegenerateGridError(
            f"coordinate value at grid index {order[0]} is zero (within tolerance)",
            indices=(int(order[0]),),
        )
    gaps = np.diff(v_sorted)
    bad = np.nonzero(gaps <= eps * scale)[0]
    if bad.size:
        i = int(bad[0])
        raise DegenerateGridError(
            f"coordinate values at grid indices {order[i]} and {order[i + 1]} coincide "
            "(within tolerance)",
            indices=(int(order[i]), int(order[i + 1])),
        )
    return order


@dataclass(frozen=True)
class GramFactorization:
    """Closed-form inverse ``K^{-1} = R^T P R`` of a min-kernel Gram matrix.

    ``order`` encodes the row permutation ``R`` (``order[i]`` is the grid
    index holding the ``i``-th smallest coordinate value), ``sorted_values``
    are those values in increasing order, and ``(sub, diag, sup)`` are the
    three bands of the tridiagonal ``P``.
    """

    grid: np.ndarray
    order: np.ndarray
    sorted_values: np.ndarray
    diag: np.ndarray
    off_diag: np.ndarray
    log_determinant: float

    @property
    def size(self):
        return self.grid.size

    def tridiagonal_dense(self):
        p = np.diag(self.diag)
        if self.size > 1:
            idx = np.arange(self.size - 1)
            p[idx, idx + 1] = self.off_diag
            p[idx + 1, idx] = self.off_diag
        return p

    def dense_inverse(self):
        """Materialize ``R^T P R`` (scatter of the tridiagonal band)."""
        inv = np.zeros((self.size, self.size))
        inv[np.ix_(self.order, self.order)] = self.tridiagonal_dense()
        return inv

    def nonzero_count(self):
        n = self.size
        return n + 2 * (n - 1)

    def coordinate_list(self):
        """Nonzeros of ``K^{-1}`` as ``(row, col, value)`` triples."""
        entries = []
        for i in range(self.size):
            entries.append((int(self.order[i]), int(self.order[i]), float(self.diag[i])))
        for i in range(self.size - 1):
            r, c = int(self.order[i]), int(self.order[i + 1])
            entries.append((r, c, float(self.off_diag[i])))
            entries.append((c, r, float(self.off_diag[i])))
        return sorted(entries)

    def sparsity_pattern(self):
        """0/1 grid marking structurally nonzero entries of ``K^{-1}``."""
        pattern = np.zeros((self.size, self.size), dtype=int)
        for r, c, _ in self.coordinate_list():
            pattern[r, c] = 1
        return pattern

    def shifted_log_det_and_solve(self, shift, rhs):
        """``logdet(K + shift*I)`` and ``(K + shift*I)^{-1} rhs`` in O(n).

        Uses ``K + shift*I = R^T (S + shift*I) R`` with ``S`` the sorted Gram
        matrix: ``det(S + shift*I) = det(S) det(I + shift*P)`` and
        ``(S + shift*I) x = u  <=>  (I + shift*P) x = P u``, where
        ``I + shift*P`` is tridiagonal.
        """
        shift = check_positive_scalar(shift, "shift")
        rhs = as_1d_array(rhs, "rhs")
        if rhs.size != self.size:
            raise ValueError("rhs length does not match the factorization size")
        n = self.size
        d = 1.0 + shift * self.diag
        e = shift * self.off_diag if n > 1 else np.zeros(0)
        # log|det| of the tridiagonal via the scaled continuant recurrence
        log_det_shift = 0.0
        prev, cur = 1.0, d[0]
        for i in range(1, n):
            prev, cur = cur, d[i] * cur - e[i - 1] ** 2 * prev
            mag = max(abs(cur), abs(prev))
            if mag > 1e150 or (0.0 < mag < 1e-150):
                log_det_shift += np.log(mag)
                prev /= mag
                cur /= mag
        if cur <= 0.0:
            raise np.linalg.LinAlgError("shifted Gram matrix is not positive definite")
        log_det_shift += np.log(cur)
        log_det = self.log_determinant + log_det_shift

        u = rhs[self.order]
        pu = self.diag * u
        if n > 1:
            pu[:-1] += self.off_diag * u[1:]
            pu[1:] += self.off_diag * u[:-1]
        ab = np.zeros((3, n))
        ab[1] = d
        if n > 1:
            ab[0, 1:] = e
            ab[2, :-1] = e
        x_sorted = solve_banded((1, 1), ab, pu)
        x = np.empty(n)
        x[self.order] = x_sorted
        return log_det, x


def gram_log_det_closed_form(kernel, grid, eps=DEFAULT_GRID_TOL):
    """``log det K`` from the sorted coordinate values.

    Equals ``log v_(1) + sum_i log(v_(i+1) - v_(i))`` over the ascending
    values; the log form avoids underflow for large grids where the gaps are
    tiny.
    """
    grid = as_1d_array(grid, "grid")
    order = validate_grid(kernel, grid, eps)
    v_sorted = np.asarray(kernel.coordinate_values(grid), dtype=float)[order]
    log_det = float(np.log(v_sorted[0]) + np.sum(np.log(np.diff(v_sorted))))
    return log_det


def gram_inverse_closed_form(kernel, grid, eps=DEFAULT_GRID_TOL):
    """Closed-form Gram inverse as a :class:`GramFactorization`."""
    grid = as_1d_array(grid, "grid")
    order = validate_grid(kernel, grid, eps)
    g = np.asarray(kernel.coordinate_values(grid), dtype=float)[order]
    n = g.size
    diag = np.empty(n)
    if n == 1:
        diag[0] = 1.0 / g[0]
        off = np.zeros(0)
    else:
        gaps = np.diff(g)
        diag[0] = g[1] / (g[0] * gaps[0])
        if n > 2:
            diag[1:-1] = (g[2:] - g[:-2]) / (gaps[1:] * gaps[:-1])
        diag[-1] = 1.0 / gaps[-1]
        off = -1.0 / gaps
    log_det = float(np.log(g[0]) + np.sum(np.log(np.diff(g)))) if n > 1 else float(np.log(g[0]))
    return GramFactorization(
        grid=grid.copy(),
        order=np.asarray(order),
        sorted_values=g,
        diag=diag,
        off_diag=off,
        log_determinant=log_det,
    )
