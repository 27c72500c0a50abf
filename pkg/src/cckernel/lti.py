"""Stable strictly-proper rational transfer functions and their impulse responses.

Systems are described by their poles (with multiplicities) plus a gain and an
optional numerator polynomial, which avoids root-finding in the common path.
The impulse response is obtained in closed form through a partial fraction
decomposition into polynomial-times-exponential modes, from which an explicit
exponential envelope ``|g(t)| <= amplitude * exp(-rate * t)`` can be computed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from .errors import SystemDefinitionError
from .validation import check_nonnegative_times


@dataclass(frozen=True)
class RationalTransferFunction:
    """Strictly proper stable rational ``G(s)`` in pole form.

    Parameters
    ----------
    real_poles : list of (decay, multiplicity)
        Each entry places a pole at ``s = -decay`` with ``decay > 0``.
    complex_pole_pairs : list of (decay, frequency, multiplicity)
        Each entry places a conjugate pair at ``s = -decay +/- i*frequency``
        with ``decay > 0`` and ``frequency > 0``.
    gain : float
        Scalar multiplier of the whole transfer function.
    numerator : list of float
        Polynomial coefficients in ascending order (constant term first).
        Its degree must be strictly less than the denominator degree.
    """

    real_poles: tuple = ()
    complex_pole_pairs: tuple = ()
    gain: float = 1.0
    numerator: tuple = (1.0,)

    def __post_init__(self):
        real = tuple((float(a), int(m)) for a, m in self.real_poles)
        comp = tuple((float(a), float(w), int(m)) for a, w, m in self.complex_pole_pairs)
        num = tuple(float(c) for c in self.numerator)
        object.__setattr__(self, "real_poles", real)
        object.__setattr__(self, "complex_pole_pairs", comp)
        object.__setattr__(self, "gain", float(self.gain))
        object.__setattr__(self, "numerator", num)
        if not real and not comp:
            raise SystemDefinitionError("transfer function needs at least one pole")
        for a, m in real:
            if a <= 0:
                raise SystemDefinitionError(f"unstable real pole: decay rate {a} <= 0")
            if m < 1:
                raise SystemDefinitionError("pole multiplicity must be >= 1")
        for a, w, m in comp:
            if a <= 0:
                raise SystemDefinitionError(f"unstable complex pole: decay rate {a} <= 0")
            if w <= 0:
                raise SystemDefinitionError("complex pair frequency must be > 0")
            if m < 1:
                raise SystemDefinitionError("pole multiplicity must be >= 1")
        if self.numerator_degree() >= self.denominator_degree():
            raise SystemDefinitionError(
                "not strictly proper: numerator degree "
                f"{self.numerator_degree()} >= denominator degree {self.denominator_degree()}"
            )

    def denominator_degree(self):
        return sum(m for _, m in self.real_poles) + 2 * sum(
            m for _, _, m in self.complex_pole_pairs
        )

    def numerator_degree(self):
        coeffs = np.trim_zeros(np.asarray(self.numerator, dtype=float), "b")
        return max(len(coeffs) - 1, 0)

    def denominator_polynomial(self):
        """Monic denominator as a real ``numpy`` polynomial."""
        den = Polynomial([1.0])
        for a, m in self.real_poles:
            den = den * Polynomial([a, 1.0]) ** m
        for a, w, m in self.complex_pole_pairs:
            den = den * Polynomial([a * a + w * w, 2.0 * a, 1.0]) ** m
        return den

    def __call__(self, s):
        """Evaluate ``G(s)`` at scalar or array ``s`` (real or complex)."""
        num = Polynomial(list(self.numerator))
        return self.gain * num(s) / self.denominator_polynomial()(s)

    # -- serialization ----------------------------------------------------

    def to_dict(self):
        d = {
            "gain": self.gain,
            "real_poles": [{"alpha": a, "mult": m} for a, m in self.real_poles],
            "complex_poles": [
                {"alpha": a, "omega": w, "mult": m} for a, w, m in self.complex_pole_pairs
            ],
        }
        if tuple(self.numerator) != (1.0,):
            d["numerator"] = list(self.numerator)
        return d

    @classmethod
    def from_dict(cls, d):
        # A "residues" key (annotation written by some exporters) is ignored;
        # the decomposition is always recomputed from the poles.
        return cls(
            real_poles=[(p["alpha"], p.get("mult", 1)) for p in d.get("real_poles", [])],
            complex_pole_pairs=[
                (p["alpha"], p["omega"], p.get("mult", 1)) for p in d.get("complex_poles", [])
            ],
            gain=d.get("gain", 1.0),
            numerator=d.get("numerator", [1.0]),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_coefficients(cls, numerator, denominator, cluster_tol=1e-6):
        """Build from raw polynomial coefficients (ascending order).

        The denominator is factored with a companion-matrix eigenvalue solve
        (``numpy.roots``), and nearby roots are clustered into multiple poles.
        Repeated roots are ill-conditioned under this procedure, so the
        recovered multiplicities are only trustworthy when the true poles are
        separated by clearly more than ``cluster_tol``.
        """
        den = np.trim_zeros(np.asarray(denominator, dtype=float), "b")
        if den.size < 2:
            raise SystemDefinitionError("denominator must have degree >= 1")
        lead = den[-1]
        roots = np.roots(den[::-1])
        clusters = []  # [center, count]
        for r in sorted(roots, key=lambda z: (z.real, abs(z.imag))):
            for c in clusters:
                if abs(r - c[0]) <= cluster_tol * max(1.0, abs(r)):
                    c[0] = (c[0] * c[1] + r) / (c[1] + 1)
                    c[1] += 1
                    break
            else:
                clusters.append([r, 1])
        real_poles, complex_pairs = [], []
        for center, count in clusters:
            if abs(center.imag) <= cluster_tol * max(1.0, abs(center)):
                real_poles.append((-center.real, count))
            elif center.imag > 0:
                complex_pairs.append((-center.real, center.imag, count))
        return cls(
            real_poles=real_poles,
            complex_pole_pairs=complex_pairs,
            gain=1.0 / lead,
            numerator=list(np.asarray(numerator, dtype=float)),
        )


@dataclass(frozen=True)
class RealModeTerm:
    """One ``coefficient * t**power * exp(-decay * t)`` mode."""

    coefficient: float
    power: int
    decay: float


@dataclass(frozen=True)
class OscillatoryModeTerm:
    """One ``t**power * exp(-decay*t) * (B sin(freq t) + C cos(freq t))`` mode."""

    sin_coefficient: float
    cos_coefficient: float
    power: int
    decay: float
    frequency: float


@dataclass(frozen=True)
class PartialFractionForm:
    """Impulse response as a sum of polynomial-exponential modes."""

    real_terms: tuple = ()
    oscillatory_terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "real_terms", tuple(self.real_terms))
        object.__setattr__(self, "oscillatory_terms", tuple(self.oscillatory_terms))
        if not self.real_terms and not self.oscillatory_terms:
            raise ValueError("empty partial fraction form")

    def __call__(self, t):
        return impulse_response_eval(self, t)

    def magnitude(self, t):
        """``|g(t)|``, the coordinate change used by the kernels."""
        return np.abs(impulse_response_eval(self, t))

    def evaluate_scalar(self, t):
        """Scalar evaluation without array overhead (quadrature hot path)."""
        total = 0.0
        for term in self.real_terms:
            total += term.coefficient * t**term.power * math.exp(-term.decay * t)
        for term in self.oscillatory_terms:
            envelope = t**term.power * math.exp(-term.decay * t)
            phase = term.frequency * t
            total += envelope * (
                term.sin_coefficient * math.sin(phase)
                + term.cos_coefficient * math.cos(phase)
            )
        return total

    def system_order(self):
        order = sum(term.power + 1 for term in self.real_terms)
        order += 2 * sum(term.power + 1 for term in self.oscillatory_terms)
        return order


def _rational_derivatives_at(num, den_base, den_power, point, count):
    """Values ``H(p), H'(p), ..`` for ``H = num / den_base**den_power``.

    Differentiation is carried out on the polynomial pair, keeping the
    denominator as a power of ``den_base`` so degrees stay moderate.
    """
    values = []
    n = num
    m = den_power
    base_at_p = den_base(point)
    dbase = den_base.deriv()
    for k in range(count):
        values.append(n(point) / base_at_p**m)
        n = n.deriv() * den_base - m * n * dbase
        m += 1
    return values


def partial_fraction_decompose(tf):
    """Decompose ``tf`` into real and oscillatory polynomial-exponential modes.

    For a pole ``p`` of multiplicity ``M`` the residues of ``1/(s-p)**j``
    terms are ``H^(M-j)(p) / (M-j)!`` with ``H(s) = (s-p)**M G(s)``, and the
    inverse transform of ``1/(s-p)**j`` is ``t**(j-1) e^{pt} / (j-1)!``.
    """
    if not isinstance(tf, RationalTransferFunction):
        raise TypeError("expected a RationalTransferFunction")
    num = Polynomial([c * tf.gain for c in tf.numerator])
    den = tf.denominator_polynomial()

    real_terms = []
    for a, m in tf.real_poles:
        p = -a
        factor = Polynomial([a, 1.0])
        reduced, remainder = divmod(den, factor**m)
        if np.max(np.abs(remainder.coef)) > 1e-8 * max(1.0, np.max(np.abs(den.coef))):
            raise SystemDefinitionError("inconsistent pole factorization")
        derivs = _rational_derivatives_at(num, reduced, 1, p, m)
        for k, hk in enumerate(derivs):
            j = m - k  # order of the 1/(s-p)**j term
            residue = hk / math.factorial(k)
            coeff = residue / math.factorial(j - 1)
            if coeff != 0.0:
                real_terms.append(RealModeTerm(float(coeff), j - 1, a))

    osc_terms = []
    for a, w, m in tf.complex_pole_pairs:
        p = complex(-a, w)
        quad = Polynomial([a * a + w * w, 2.0 * a, 1.0])
        reduced, remainder = divmod(den, quad**m)
        if np.max(np.abs(remainder.coef)) > 1e-8 * max(1.0, np.max(np.abs(den.coef))):
            raise SystemDefinitionError("inconsistent pole factorization")
        # denominator seen from p: reduced(s) * (s - conj(p))**m
        conj_factor = Polynomial([-p.conjugate(), 1.0])
        den_base = Polynomial(reduced.coef.astype(complex)) * conj_factor**m
        derivs = _rational_derivatives_at(Polynomial(num.coef.astype(complex)), den_base, 1, p, m)
        for k, hk in enumerate(derivs):
            j = m - k
            residue = hk / math.factorial(k)
            b = -2.0 * residue.imag / math.factorial(j - 1)
            c = 2.0 * residue.real / math.factorial(j - 1)
            if b != 0.0 or c != 0.0:
                osc_terms.append(OscillatoryModeTerm(float(b), float(c), j - 1, a, w))

    return PartialFractionForm(real_terms, osc_terms)


def impulse_response_eval(pf, t):
    """Evaluate the impulse response of ``pf`` at nonnegative times ``t``."""
    t_arr = check_nonnegative_times(t, "t")
    out = np.zeros_like(t_arr, dtype=float)
    for term in pf.real_terms:
        out += term.coefficient * t_arr**term.power * np.exp(-term.decay * t_arr)
    for term in pf.oscillatory_terms:
        envelope = t_arr**term.power * np.exp(-term.decay * t_arr)
        phase = term.frequency * t_arr
        out += envelope * (
            term.sin_coefficient * np.sin(phase) + term.cos_coefficient * np.cos(phase)
        )
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class ExponentialBound:
    """Envelope constants with ``|g(t)| <= amplitude * exp(-rate * t)``."""

    amplitude: float
    rate: float

    def envelope(self, t):
        return self.amplitude * np.exp(-self.rate * np.asarray(t, dtype=float))


def exponential_bound(pf):
    """Constructive exponential envelope of a stable impulse response.

    Each mode ``t**j e^{-a t}`` is bounded by ``j! (2/a)**j e^{-a t / 2}``;
    summing the mode bounds per class and doubling the larger class gives a
    single valid envelope.
    """
    beta_real = 0.0
    alpha_real = math.inf
    for term in pf.real_terms:
        c_star = math.factorial(term.power) * (2.0 / term.decay) ** term.power
        beta_real += abs(term.coefficient) * c_star
        alpha_real = min(alpha_real, term.decay / 2.0)
    beta_comp = 0.0
    alpha_comp = math.inf
    for term in pf.oscillatory_terms:
        amp = math.hypot(term.sin_coefficient, term.cos_coefficient)
        c_star = math.factorial(term.power) * (2.0 / term.decay) ** term.power
        beta_comp += amp * c_star
        alpha_comp = min(alpha_comp, term.decay / 2.0)
    rate = min(alpha_real, alpha_comp)
    if not math.isfinite(rate):
        raise ValueError("cannot bound an empty decomposition")
    return ExponentialBound(2.0 * max(beta_real, beta_comp), rate)


def annihilation_order(pf, tol=1e-9):
    """Largest ``k`` with all derivatives of order ``0..k`` vanishing at ``t=0``.

    Returns ``-1`` when ``g(0) != 0``. Computed from the Taylor coefficients
    of the polynomial-exponential form; a coefficient counts as zero when its
    magnitude is below ``tol`` times the largest coefficient in the scanned
    range.
    """
    horizon = pf.system_order() + 2
    coeffs = np.zeros(horizon + 1)
    for term in pf.real_terms:
        for k in range(horizon + 1 - term.power):
            coeffs[term.power + k] += term.coefficient * (-term.decay) ** k / math.factorial(k)
    for term in pf.oscillatory_terms:
        length = horizon + 1 - term.power
        if length <= 0:
            continue
        exp_c = np.array([(-term.decay) ** k / math.factorial(k) for k in range(length)])
        trig = np.zeros(length)
        for k in range(length):
            if k % 2 == 1:
                trig[k] += term.sin_coefficient * (-1) ** ((k - 1) // 2) * term.frequency**k / math.factorial(k)
            else:
                trig[k] += term.cos_coefficient * (-1) ** (k // 2) * term.frequency**k / math.factorial(k)
        prod = np.convolve(exp_c, trig)[:length]
        coeffs[term.power : term.power + length] += prod
    scale = np.max(np.abs(coeffs))
    if scale == 0.0:
        return horizon
    nonzero = np.nonzero(np.abs(coeffs) > tol * scale)[0]
    if nonzero.size == 0:
        return horizon
    return int(nonzero[0]) - 1
