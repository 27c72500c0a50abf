import numpy as np
import pytest

from cckernel.lti import RationalTransferFunction, partial_fraction_decompose


def random_stable_system(rng, max_real=2, max_complex=1, max_mult=3,
                         pole_range=(0.1, 10.0), allow_complex=True):
    """Random stable strictly proper system with poles in ``pole_range``."""
    while True:
        n_real = rng.integers(0, max_real + 1)
        n_comp = rng.integers(0, max_complex + 1) if allow_complex else 0
        if n_real + n_comp > 0:
            break
    real_poles = []
    used = []
    for _ in range(n_real):
        while True:
            a = float(np.exp(rng.uniform(np.log(pole_range[0]), np.log(pole_range[1]))))
            if all(abs(a - u) > 0.05 * max(1.0, a) for u in used):
                break
        used.append(a)
        real_poles.append((a, int(rng.integers(1, max_mult + 1))))
    complex_pairs = []
    for _ in range(n_comp):
        a = float(np.exp(rng.uniform(np.log(pole_range[0]), np.log(pole_range[1]))))
        w = float(rng.uniform(0.3, 5.0))
        complex_pairs.append((a, w, int(rng.integers(1, max_mult + 1))))
    gain = float(rng.uniform(0.2, 3.0) * rng.choice([-1.0, 1.0]))
    return RationalTransferFunction(
        real_poles=real_poles, complex_pole_pairs=complex_pairs, gain=gain
    )


def random_valid_grid(rng, pf, n, t_range=(0.05, 8.0), min_gap_rel=1e-3):
    """Grid whose |g0| values are positive and pairwise well separated.

    The separation floor keeps the Gram matrix well enough conditioned that
    dense LU/inversion oracles are trustworthy at the compared tolerances.
    May return fewer than ``n`` points for strongly oscillatory responses.
    """
    chosen_t, chosen_v = [], []
    for _ in range(40):
        candidates = rng.uniform(t_range[0], t_range[1], 50 * n)
        values = pf.magnitude(candidates)
        scale = max(values.max(), np.max(np.abs(chosen_v)) if chosen_v else 0.0)
        if scale <= 0:
            continue
        for t, val in zip(candidates, values):
            if val <= min_gap_rel * scale:
                continue
            if all(abs(val - u) > min_gap_rel * scale for u in chosen_v):
                chosen_t.append(float(t))
                chosen_v.append(float(val))
            if len(chosen_t) == n:
                return np.sort(np.asarray(chosen_t))
    if len(chosen_t) >= 2:
        return np.sort(np.asarray(chosen_t))
    raise RuntimeError("could not find a non-degenerate grid")


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


@pytest.fixture
def te_t_system():
    """G(s) = 1/(s+1)^2, impulse response t*exp(-t)."""
    return RationalTransferFunction(real_poles=[(1.0, 2)])


@pytest.fixture
def te_t_response(te_t_system):
    return partial_fraction_decompose(te_t_system)
