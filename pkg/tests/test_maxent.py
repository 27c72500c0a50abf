import math

import numpy as np
import pytest

from cckernel.errors import DegenerateGridError
from cckernel.kernels import CoordinateChangeKernel, TCKernel, gram
from cckernel.lti import RationalTransferFunction, partial_fraction_decompose
from cckernel.maxent import build_process, sample

from conftest import random_stable_system, random_valid_grid


@pytest.fixture
def decay_kernel():
    return CoordinateChangeKernel(RationalTransferFunction(real_poles=[(1.0, 1)]))


class TestBuildProcess:
    def test_single_instant(self, decay_kernel):
        process = build_process(decay_kernel, [0.5])
        np.testing.assert_allclose(process.increment_std**2, [math.exp(-0.5)])

    def test_sorted_increments(self, decay_kernel):
        process = build_process(decay_kernel, [1.0, 2.0])
        # e^-2 < e^-1, so the t=2 instant comes first in sorted order
        assert list(process.order) == [1, 0]
        np.testing.assert_allclose(
            process.increment_std**2,
            [math.exp(-2.0), math.exp(-1.0) - math.exp(-2.0)],
            rtol=1e-14,
        )

    def test_duplicate_values_rejected(self, te_t_response):
        kernel = CoordinateChangeKernel(te_t_response)
        from cckernel.spectral import coordinate_inverse

        t1 = 0.4
        t2 = coordinate_inverse(t1 * math.exp(-t1), 1, 1.0, branch="minor")
        with pytest.raises(DegenerateGridError):
            build_process(kernel, [t1, t2])

    def test_cumulative_variance_matches_coordinate(self, decay_kernel):
        grid = np.array([0.3, 0.9, 1.8, 3.0])
        process = build_process(decay_kernel, grid)
        cumulative = np.cumsum(process.increment_std**2)
        np.testing.assert_allclose(cumulative, process.sorted_values, rtol=1e-13)

    def test_covariance_equals_gram(self, decay_kernel):
        grid = np.array([0.3, 0.9, 1.8, 3.0])
        process = build_process(decay_kernel, grid)
        np.testing.assert_allclose(process.covariance(), gram(decay_kernel, grid), rtol=1e-14)


class TestSampling:
    def test_deterministic_given_seed(self, decay_kernel):
        process = build_process(decay_kernel, [0.5, 1.5, 2.5])
        a = sample(process, seed=42, n_paths=8)
        b = sample(process, seed=42, n_paths=8)
        np.testing.assert_array_equal(a, b)
        c = sample(process, seed=43, n_paths=8)
        assert not np.array_equal(a, c)

    def test_path_prefix_stable_under_more_paths(self, decay_kernel):
        # counter-based draws: path p does not depend on how many paths follow
        process = build_process(decay_kernel, [0.5, 1.5, 2.5])
        few = sample(process, seed=7, n_paths=3)
        many = sample(process, seed=7, n_paths=10)
        np.testing.assert_array_equal(few, many[:3])

    def test_zero_mean(self, decay_kernel):
        process = build_process(decay_kernel, [0.4, 1.0, 2.0])
        draws = sample(process, seed=0, n_paths=100_000)
        std = np.sqrt(np.diag(process.covariance()))
        assert np.all(np.abs(draws.mean(axis=0)) <= 4.0 * std / math.sqrt(100_000))

    def test_empirical_covariance_matches_gram(self, decay_kernel):
        grid = np.array([0.4, 1.0, 2.0, 3.5])
        process = build_process(decay_kernel, grid)
        n_paths = 100_000
        draws = sample(process, seed=3, n_paths=n_paths)
        empirical = draws.T @ draws / n_paths
        expected = gram(decay_kernel, grid)
        se = np.sqrt(
            (np.outer(np.diag(expected), np.diag(expected)) + expected**2) / n_paths
        )
        assert np.all(np.abs(empirical - expected) <= 4.0 * se)

    @pytest.mark.parametrize("case", range(3))
    def test_empirical_covariance_random_systems(self, case):
        rng = np.random.default_rng(40 + case)
        tf = random_stable_system(rng)
        pf = partial_fraction_decompose(tf)
        kernel = CoordinateChangeKernel(tf)
        grid = random_valid_grid(rng, pf, int(rng.integers(3, 16)), min_gap_rel=1e-4)
        process = build_process(kernel, grid)
        n_paths = 100_000
        draws = sample(process, seed=100 + case, n_paths=n_paths)
        empirical = draws.T @ draws / n_paths
        expected = gram(kernel, grid)
        se = np.sqrt(
            (np.outer(np.diag(expected), np.diag(expected)) + expected**2) / n_paths
        )
        assert np.all(np.abs(empirical - expected) <= 4.0 * se)

    def test_works_for_tc_kernel(self):
        process = build_process(TCKernel(2.0, 0.7), [0.5, 1.5])
        draws = sample(process, seed=1, n_paths=4)
        assert draws.shape == (4, 2)

    def test_rejects_bad_path_count(self, decay_kernel):
        process = build_process(decay_kernel, [1.0])
        with pytest.raises(ValueError):
            sample(process, seed=0, n_paths=0)
