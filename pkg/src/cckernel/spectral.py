"""Spectral expansion of the multiple-pole spline kernel.

For the coordinate change ``g0(t) = scale * t**n * exp(-alpha*t)`` the kernel
``min(g0(t1), g0(t2))`` admits explicit eigenvalues and eigenfunctions with
respect to a measure built from ``g0`` itself. The coordinate inversion needs
both real branches of the Lambert W function, implemented here with Halley
iteration.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from .errors import DomainError
from .validation import check_nonnegative_times, check_positive_scalar

PRINCIPAL = "principal"
MINOR = "minor"

_BRANCH_POINT = -1.0 / math.e


def _halley(w, z, active, max_iter=50, rtol=1e-15):
    """Halley refinement of ``w * exp(w) = z`` on the ``active`` mask."""
    w = w.copy()
    for _ in range(max_iter):
        if not np.any(active):
            break
        ew = np.exp(w[active])
        f = w[active] * ew - z[active]
        wp1 = w[active] + 1.0
        denom = ew * wp1 - (w[active] + 2.0) * f / (2.0 * wp1)
        safe = (denom != 0.0) & (ew > 0.0)  # exp underflow: no refinement possible
        step = np.where(safe, f / np.where(denom == 0.0, 1.0, denom), 0.0)
        w[active] -= step
        done = ~safe | (np.abs(step) <= rtol * np.maximum(np.abs(w[active]), 1e-300))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return w


def lambert_w(z, branch=PRINCIPAL):
    """Real Lambert W: solve ``w * exp(w) = z`` on the requested branch.

    The principal branch (``w >= -1``) is defined for ``z >= -1/e``; the
    minor branch (``w <= -1``) for ``-1/e <= z < 0``. Values a hair below
    ``-1/e`` from rounding are snapped to the branch point.
    """
    scalar = np.isscalar(z) or np.ndim(z) == 0
    z_arr = np.asarray(z, dtype=float).ravel()
    if branch not in (PRINCIPAL, MINOR):
        raise ValueError(f"unknown branch {branch!r}")
    below = z_arr < _BRANCH_POINT
    snap = below & (z_arr > _BRANCH_POINT * (1.0 + 1e-12))
    z_arr = np.where(snap, _BRANCH_POINT, z_arr)
    if np.any(z_arr < _BRANCH_POINT):
        raise DomainError("lambert_w: z < -1/e has no real solution")

    p_sq = 2.0 * (math.e * z_arr + 1.0)  # 2(ez+1), zero exactly at the branch point
    p_sq = np.maximum(p_sq, 0.0)
    at_branch = p_sq <= 1e-300

    w = np.empty_like(z_arr)
    if branch == PRINCIPAL:
        near = p_sq < 1.0
        p = np.sqrt(p_sq, where=near, out=np.zeros_like(z_arr))
        w_series = -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * (11.0 / 72.0 - p * 43.0 / 540.0)))
        big = z_arr > math.e
        with np.errstate(divide="ignore", invalid="ignore"):
            l1 = np.log(np.where(big, z_arr, math.e))
            w_big = l1 - np.log(l1) + np.log(l1) / l1
        w_mid = np.log1p(np.where(z_arr > -1.0, z_arr, 0.0))
        w = np.where(near, w_series, np.where(big, w_big, w_mid))
    else:
        if np.any(z_arr >= 0.0):
            raise DomainError("lambert_w: minor branch requires z < 0")
        near = p_sq < 0.5
        p = np.sqrt(p_sq, where=near, out=np.zeros_like(z_arr))
        w_series = -1.0 - p * (1.0 + p * (1.0 / 3.0 + p * (11.0 / 72.0 + p * 43.0 / 540.0)))
        # contraction u_{k+1} = ln(u_k) - ln(-z) for u = -w >= 1
        with np.errstate(divide="ignore", invalid="ignore"):
            big_l = -np.log(np.where(near, 0.27, -z_arr))
        u = np.maximum(big_l, 1.5)
        for _ in range(16):
            u = big_l + np.log(u)
        w = np.where(near, w_series, -u)

    active = ~at_branch
    w = _halley(w, z_arr, active)
    w[at_branch] = -1.0
    if branch == PRINCIPAL:
        w[z_arr == 0.0] = 0.0
    return float(w[0]) if scalar else w.reshape(np.shape(z))


def peak_coordinate(n, alpha):
    """Location ``n / alpha`` of the maximum of ``t**n exp(-alpha t)``."""
    return n / alpha


def peak_height(n, alpha):
    """Maximum value ``(n / (alpha e))**n`` of ``t**n exp(-alpha t)``."""
    return (n / (alpha * math.e)) ** n


def coordinate_inverse(y, n, alpha, branch=PRINCIPAL):
    """Invert ``y = t**n exp(-alpha t)`` on one of its two monotone pieces.

    The principal branch returns the solution in ``[0, n/alpha]``, the minor
    branch the one in ``[n/alpha, inf)`` (``inf`` for ``y = 0``). Both use
    ``t = -(n/alpha) W(-(alpha/n) y**(1/n))``.
    """
    n = int(n)
    alpha = check_positive_scalar(alpha, "alpha")
    if n < 1:
        raise ValueError("n must be >= 1")
    scalar = np.isscalar(y) or np.ndim(y) == 0
    y_arr = np.asarray(y, dtype=float).ravel()
    top = peak_height(n, alpha)
    if np.any(y_arr < 0.0) or np.any(y_arr > top * (1.0 + 1e-12)):
        raise DomainError(f"y must lie in [0, {top!r}]")
    y_arr = np.minimum(y_arr, top)
    arg = -(alpha / n) * y_arr ** (1.0 / n)
    if branch == PRINCIPAL:
        out = -(n / alpha) * lambert_w(arg, PRINCIPAL)
        out = np.maximum(out, 0.0)
    elif branch == MINOR:
        out = np.full_like(y_arr, np.inf)
        pos = y_arr > 0.0
        if np.any(pos):
            out[pos] = -(n / alpha) * lambert_w(arg[pos], MINOR)
    else:
        raise ValueError(f"unknown branch {branch!r}")
    return float(out[0]) if scalar else out.reshape(np.shape(y))


def spline_eigenvalue(i):
    """Eigenvalue ``1 / ((i - 1/2)^2 pi^2)`` of ``min(x, x')`` on ``[0, 1]``."""
    if i < 1:
        raise ValueError("eigenindex must be >= 1")
    return 1.0 / ((i - 0.5) ** 2 * math.pi**2)


def spline_eigenfunction(i, x):
    """Eigenfunction ``sqrt(2) sin((i - 1/2) pi x)`` of ``min(x, x')``."""
    if i < 1:
        raise ValueError("eigenindex must be >= 1")
    return math.sqrt(2.0) * np.sin((i - 0.5) * math.pi * np.asarray(x, dtype=float))


class DecayMeasure:
    """Measure induced by ``t**n exp(-alpha t)`` on the half line.

    The cumulative function rises like half the coordinate up to the peak at
    ``t = n/alpha`` and mirrors beyond it; its density vanishes exactly at
    the peak and the total mass is ``(n/alpha)**n exp(-n)``.
    """

    def __init__(self, n, alpha):
        self.n = int(n)
        self.alpha = check_positive_scalar(alpha, "alpha")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def peak(self):
        return peak_coordinate(self.n, self.alpha)

    @property
    def total_mass(self):
        return (self.n / self.alpha) ** self.n * math.exp(-self.n)

    def cumulative(self, t):
        t = np.asarray(check_nonnegative_times(t, "t"), dtype=float)
        coord = 0.5 * t**self.n * np.exp(-self.alpha * t)
        return np.where(t <= self.peak, coord, self.total_mass - coord)

    def density(self, t):
        t = np.asarray(check_nonnegative_times(t, "t"), dtype=float)
        return 0.5 * t ** (self.n - 1) * np.exp(-self.alpha * t) * np.abs(
            self.n - self.alpha * t
        )

    def __call__(self, t):
        return self.cumulative(t)


class MultiPoleSpectralBasis:
    """Eigenpairs of ``min(g0(t1), g0(t2))`` with ``g0 = scale t**n e^{-alpha t}``.

    Eigenvalues are ``scale * (n/(alpha e))**(2n) / ((i-1/2)^2 pi^2)`` and the
    eigenfunctions are the spline eigenfunctions evaluated in the normalized
    coordinate ``t**n e^{-alpha t} (alpha e / n)**n``, orthonormal under the
    ``scale``-free :class:`DecayMeasure`.
    """

    def __init__(self, n, alpha, scale=1.0):
        self.n = int(n)
        self.alpha = check_positive_scalar(alpha, "alpha")
        self.scale = check_positive_scalar(scale, "scale")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        self.measure = DecayMeasure(self.n, self.alpha)
        self._coord_norm = (self.alpha * math.e / self.n) ** self.n
        self._fn_norm = (self.alpha * math.e / self.n) ** (self.n / 2.0)

    @classmethod
    def from_transfer_function(cls, tf):
        """Build the basis for ``G(s) = gain / (s + alpha)**(n+1)`` with n >= 1."""
        if tf.complex_pole_pairs or len(tf.real_poles) != 1:
            raise ValueError("spectral basis requires a single repeated real pole")
        if tf.numerator_degree() != 0:
            raise ValueError("spectral basis requires a constant numerator")
        alpha, mult = tf.real_poles[0]
        if mult < 2:
            raise ValueError("pole multiplicity must be >= 2 (n = multiplicity - 1 >= 1)")
        n = mult - 1
        scale = abs(tf.gain * tf.numerator[0]) / math.factorial(n)
        return cls(n, alpha, scale)

    def coordinate(self, t):
        t = np.asarray(check_nonnegative_times(t, "t"), dtype=float)
        return t**self.n * np.exp(-self.alpha * t)

    def kernel_value(self, t1, t2):
        return self.scale * np.minimum(self.coordinate(t1), self.coordinate(t2))

    def eigenvalue(self, i):
        base = (self.n / (self.alpha * math.e)) ** (2 * self.n)
        return self.scale * base * spline_eigenvalue(i)

    def eigenfunction(self, i):
        if i < 1:
            raise ValueError("eigenindex must be >= 1")

        def phi(t):
            x = self.coordinate(t) * self._coord_norm
            return self._fn_norm * spline_eigenfunction(i, np.minimum(x, 1.0))

        return phi

    def eigenpair(self, i):
        return self.eigenvalue(i), self.eigenfunction(i)

    def truncated_gram(self, grid, m_terms):
        """Rank-``m_terms`` series approximation of the Gram matrix."""
        if m_terms < 1:
            raise ValueError("m_terms must be >= 1")
        grid = np.asarray(check_nonnegative_times(grid, "grid"), dtype=float)
        x = self.coordinate(grid) * self._coord_norm
        idx = np.arange(1, m_terms + 1)
        lam = self.scale * (self.n / (self.alpha * math.e)) ** (2 * self.n) / (
            (idx - 0.5) ** 2 * math.pi**2
        )
        phi = math.sqrt(2.0) * self._fn_norm * np.sin(
            np.outer(idx - 0.5, np.minimum(x, 1.0)) * math.pi
        )
        return (phi * lam[:, None]).T @ phi

    def gram(self, grid):
        grid = np.asarray(check_nonnegative_times(grid, "grid"), dtype=float)
        v = self.scale * self.coordinate(grid)
        return np.minimum.outer(v, v)

    def _tail_cut(self):
        # truncate improper integrals where the envelope of g0 is < 1e-12
        bound_amp = math.factorial(self.n) * (2.0 / self.alpha) ** self.n
        return max(2.0 * self.peak_t, 2.0 * math.log(max(bound_amp, 1.0) * 1e12) / self.alpha)

    @property
    def peak_t(self):
        return peak_coordinate(self.n, self.alpha)


def eigen_relation_residual(basis, i, tau_probe, quad_tol=1e-9):
    """Max residual of the eigen relation at the probe points.

    Integrates ``kernel(t, .) * phi_i * measure density`` over the half line
    with explicit splits at the measure's peak and at the kernel's min
    switch-points, and compares against ``lambda_i * phi_i(t)``.
    """
    lam, phi = basis.eigenpair(i)
    dens = basis.measure.density
    cut = basis._tail_cut()
    worst = 0.0
    for tau1 in np.atleast_1d(np.asarray(tau_probe, dtype=float)):
        v1 = float(basis.coordinate(tau1))

        def integrand(t2):
            return basis.scale * min(v1, float(basis.coordinate(t2))) * float(
                phi(t2)
            ) * float(dens(t2))

        pts = {basis.peak_t}
        if 0.0 < v1 < peak_height(basis.n, basis.alpha):
            pts.add(float(coordinate_inverse(v1, basis.n, basis.alpha, PRINCIPAL)))
            pts.add(float(coordinate_inverse(v1, basis.n, basis.alpha, MINOR)))
        breaks = sorted(p for p in pts if 0.0 < p < cut)
        total = 0.0
        lo = 0.0
        for hi in breaks + [cut]:
            val, _ = integrate.quad(integrand, lo, hi, epsabs=quad_tol, epsrel=quad_tol, limit=200)
            total += val
            lo = hi
        tail, _ = integrate.quad(integrand, cut, np.inf, epsabs=quad_tol, limit=200)
        total += tail
        worst = max(worst, abs(total - lam * float(phi(tau1))))
    return worst


def orthonormality_defect(basis, i, j, quad_tol=1e-9):
    """``|<phi_i, phi_j>_m - delta_ij|`` by adaptive quadrature."""
    phi_i = basis.eigenfunction(i)
    phi_j = basis.eigenfunction(j)
    dens = basis.measure.density
    cut = basis._tail_cut()

    def integrand(t):
        return float(phi_i(t)) * float(phi_j(t)) * float(dens(t))

    val_lo, _ = integrate.quad(integrand, 0.0, basis.peak_t, epsabs=quad_tol, epsrel=quad_tol, limit=200)
    val_mid, _ = integrate.quad(integrand, basis.peak_t, cut, epsabs=quad_tol, epsrel=quad_tol, limit=200)
    val_tail, _ = integrate.quad(integrand, cut, np.inf, epsabs=quad_tol, limit=200)
    total = val_lo + val_mid + val_tail
    return abs(total - (1.0 if i == j else 0.0))


def truncation_error_curve(basis, grid, truncations):
    """Frobenius errors ``||K - K_M||`` for each ``M`` in ``truncations``."""
    exact = basis.gram(grid)
    out = []
    for m in truncations:
        err = np.linalg.norm(exact - basis.truncated_gram(grid, int(m)), "fro")
        out.append((int(m), float(err)))
    return out
