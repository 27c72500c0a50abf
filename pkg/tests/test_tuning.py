import math
from itertools import combinations

import numpy as np
import pytest
from scipy.stats import rankdata

from cckernel.errors import TuningError
from cckernel.estimator import Dataset
from cckernel.kernels import MinCoordinateKernel, TCKernel, gram
from cckernel.lti import RationalTransferFunction, partial_fraction_decompose
from cckernel.tuning import (
    FAMILIES,
    KernelFamily,
    OptimizerConfig,
    TCKernelFamily,
    TwoPoleFamily,
    empirical_bayes_tune,
    neg_log_marginal_likelihood,
    oracle_mse,
    oracle_tune,
    wilcoxon_rank_sum,
)

QUICK = OptimizerConfig(restarts=8, max_iterations=120)


class ZeroKernel(MinCoordinateKernel):
    def coordinate_values(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))


class ZeroFamily(KernelFamily):
    name = "zero"
    param_names = ("unused",)

    def build(self, theta):
        return ZeroKernel()

    def from_unconstrained(self, eta):
        return np.exp(np.asarray(eta))

    def to_unconstrained(self, theta):
        return np.log(np.asarray(theta))

    def search_box(self):
        return [(-1.0, 1.0)]


class ScaleOnlyFamily(KernelFamily):
    """TC kernel with the decay frozen; single free hyperparameter."""

    name = "scale_only"
    param_names = ("scale",)

    def __init__(self, decay=1.0):
        self.decay = decay

    def build(self, theta):
        return TCKernel(float(theta[0]), self.decay)

    def from_unconstrained(self, eta):
        return np.exp(np.asarray(eta))

    def to_unconstrained(self, theta):
        return np.log(np.asarray(theta))

    def search_box(self):
        return [(math.log(1e-4), math.log(10.0))]


@pytest.fixture
def sec7_data():
    target = RationalTransferFunction(real_poles=[(1.0, 1), (3.0, 1)])
    instants = 0.1 * np.arange(1, 101)
    g_star = partial_fraction_decompose(target)(instants)
    rng = np.random.default_rng(11)
    return Dataset(instants, g_star + rng.normal(0.0, 1e-2, 100), 1e-4), g_star


class TestMarginalLikelihood:
    def test_zero_kernel_closed_form(self):
        ds = Dataset([1.0, 2.0, 3.0], [0.5, -0.3, 0.2], 0.25)
        value = neg_log_marginal_likelihood(np.array([1.0]), ds, ZeroFamily())
        expected = 3 * math.log(0.25) + float(ds.outputs @ ds.outputs) / 0.25
        assert value == pytest.approx(expected, rel=1e-12)

    def test_log_det_dominates_for_large_noise(self):
        rng = np.random.default_rng(0)
        instants = np.linspace(0.2, 5.0, 12)
        y = rng.normal(0.0, 1.0, 12)
        family = TCKernelFamily()
        gaps = []
        for sigma2 in (1e2, 1e4, 1e6):
            ds = Dataset(instants, y, sigma2)
            value = neg_log_marginal_likelihood(np.array([1.0, 1.0]), ds, family)
            gaps.append(abs(value - 12 * math.log(sigma2)))
        assert gaps[0] > gaps[1] > gaps[2]

    def test_eigendecomposition_oracle(self, sec7_data):
        ds, _ = sec7_data
        family = TwoPoleFamily()
        theta = np.array([3.0, 1.0, 0.7])
        value = neg_log_marginal_likelihood(theta, ds, family)
        shifted = gram(family.build(theta), ds.instants) + 1e-4 * np.eye(100)
        eigvals, vectors = np.linalg.eigh(shifted)
        projected = vectors.T @ ds.outputs
        oracle = float(np.sum(np.log(eigvals)) + np.sum(projected**2 / eigvals))
        assert value == pytest.approx(oracle, rel=1e-8)

    def test_closed_form_route_matches(self, sec7_data):
        # TC special case: tridiagonal shifted solve equals the dense objective
        ds, _ = sec7_data
        from cckernel.kernels import gram_inverse_closed_form

        theta = np.array([0.01, 1.2])
        dense = neg_log_marginal_likelihood(theta, ds, TCKernelFamily())
        fact = gram_inverse_closed_form(TCKernel(*theta), ds.instants)
        log_det, solution = fact.shifted_log_det_and_solve(1e-4, ds.outputs)
        closed = log_det + float(ds.outputs @ solution)
        assert closed == pytest.approx(dense, rel=1e-9)

    def test_requires_positive_noise(self):
        ds = Dataset([1.0, 2.0], [0.1, 0.2], 0.0)
        with pytest.raises(ValueError):
            neg_log_marginal_likelihood(np.array([1.0, 1.0]), ds, TCKernelFamily())

    def test_functional_input_path(self):
        from cckernel.estimator import FunctionalInput, output_gram

        ds = Dataset([0.4, 0.9, 1.6], [0.2, 0.3, 0.1], 1e-2)
        u = FunctionalInput(lambda t: 1.0, bound=1.0)
        theta = np.array([1.0, 1.0])
        value = neg_log_marginal_likelihood(theta, ds, TCKernelFamily(), u)
        o_matrix = output_gram(TCKernelFamily().build(theta), u, ds.instants)
        shifted = o_matrix + 1e-2 * np.eye(3)
        oracle = np.linalg.slogdet(shifted)[1] + float(
            ds.outputs @ np.linalg.solve(shifted, ds.outputs)
        )
        assert np.isfinite(value)
        assert value == pytest.approx(oracle, rel=1e-9)

    def test_swap_symmetry_of_parameterization(self):
        # swapping poles and negating the scale leaves the response unchanged
        a = RationalTransferFunction(real_poles=[(3.0, 1), (1.0, 1)], gain=0.5 * (3.0 - 1.0))
        b = RationalTransferFunction(real_poles=[(1.0, 1), (3.0, 1)], gain=-0.5 * (1.0 - 3.0))
        t = np.linspace(0.0, 8.0, 161)
        np.testing.assert_allclose(
            partial_fraction_decompose(a)(t), partial_fraction_decompose(b)(t), atol=1e-15
        )


class TestEmpiricalBayes:
    def test_high_snr_recovers_response(self):
        family = TwoPoleFamily()
        theta_true = np.array([3.0, 1.0, 0.5])
        instants = 0.1 * np.arange(1, 101)
        pf = partial_fraction_decompose(family.transfer_function(theta_true))
        truth = pf(instants)
        rng = np.random.default_rng(5)
        sigma2 = 1e-10
        ds = Dataset(instants, truth + rng.normal(0.0, math.sqrt(sigma2), 100), sigma2)
        result = empirical_bayes_tune(ds, family, config=QUICK)
        kernel = family.build(result.theta)
        k_matrix = gram(kernel, instants)
        ghat = k_matrix @ np.linalg.solve(k_matrix + sigma2 * np.eye(100), ds.outputs)
        rel_l2 = np.linalg.norm(ghat - truth) / np.linalg.norm(truth)
        assert rel_l2 < 0.05

    def test_trace_properties(self, sec7_data):
        ds, _ = sec7_data
        result = empirical_bayes_tune(ds, TCKernelFamily(), config=QUICK)
        objectives = np.array([row[-1] for row in result.trace])
        assert result.objective == pytest.approx(np.min(objectives))
        best_so_far = np.minimum.accumulate(objectives)
        assert np.all(np.diff(best_so_far) <= 0.0 + 1e-15)
        thetas = np.array([row[2:-1] for row in result.trace])
        assert np.all(thetas > 0.0)  # log-parameterization keeps the orthant

    def test_two_pole_ordering_enforced(self, sec7_data):
        ds, _ = sec7_data
        result = empirical_bayes_tune(ds, TwoPoleFamily(), config=QUICK)
        assert result.theta_named["theta1"] > result.theta_named["theta2"] > 0.0
        for row in result.trace:
            assert row[2] > row[3] > 0.0

    def test_trace_csv_export(self, tmp_path, sec7_data):
        import csv

        ds, _ = sec7_data
        result = empirical_bayes_tune(ds, TCKernelFamily(), config=OptimizerConfig(restarts=2, max_iterations=30))
        path = tmp_path / "trace.csv"
        result.trace_to_csv(path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["restart", "eval", "scale", "decay", "objective"]
        assert len(rows) == len(result.trace) + 1

    def test_all_restarts_failing_raises(self):
        class BrokenFamily(ZeroFamily):
            def build(self, theta):
                raise ValueError("nope")

        ds = Dataset([1.0, 2.0], [0.1, 0.2], 0.1)
        with pytest.raises(TuningError):
            empirical_bayes_tune(ds, BrokenFamily(), config=OptimizerConfig(restarts=2, max_iterations=10))


def mc_risk(theta, family, instants, g_star, sigma2, n_draws, seed):
    """Monte-Carlo estimate of E||ghat - g*||^2 for the impulse-input estimator."""
    rng = np.random.default_rng(seed)
    k_matrix = gram(family.build(theta), instants)
    n = instants.size
    a_matrix = np.linalg.inv(k_matrix + sigma2 * np.eye(n))
    bias = -sigma2 * a_matrix @ g_star
    noise_map = np.eye(n) - sigma2 * a_matrix
    draws = rng.normal(0.0, math.sqrt(sigma2), (n_draws, n))
    errors = np.sum((bias[None, :] + draws @ noise_map.T) ** 2, axis=1)
    return float(np.mean(errors)), float(np.std(errors) / math.sqrt(n_draws))


class TestOracleMSE:
    def test_zero_noise_is_zero(self, sec7_data):
        _, g_star = sec7_data
        instants = 0.1 * np.arange(1, 101)
        assert oracle_mse(np.array([1.0, 1.0]), TCKernelFamily(), instants, g_star, 0.0) == 0.0

    def test_zero_kernel_reduces_to_signal_energy(self, sec7_data):
        _, g_star = sec7_data
        instants = 0.1 * np.arange(1, 101)
        sigma2 = 1e-4
        value = oracle_mse(np.array([1.0]), ZeroFamily(), instants, g_star, sigma2)
        assert value == pytest.approx(float(g_star @ g_star), rel=1e-10)
        mean, se = mc_risk(np.array([1.0]), ZeroFamily(), instants, g_star, sigma2, 100_000, 1)
        assert abs(value - mean) <= 3.0 * se + 1e-12

    def test_formula_matches_monte_carlo_tc(self, sec7_data):
        _, g_star = sec7_data
        instants = 0.1 * np.arange(1, 101)
        sigma2 = 1e-4
        theta = np.array([0.0032, 1.33])  # near the oracle optimum
        value = oracle_mse(theta, TCKernelFamily(), instants, g_star, sigma2)
        mean, se = mc_risk(theta, TCKernelFamily(), instants, g_star, sigma2, 10_000, 2)
        assert abs(value - mean) <= 3.0 * se

    @pytest.mark.parametrize("case", range(5))
    def test_formula_matches_monte_carlo_small_configs(self, case):
        rng = np.random.default_rng(600 + case)
        n = int(rng.integers(4, 21))
        from cckernel.lti import RationalTransferFunction as RTF

        pf = partial_fraction_decompose(
            RTF(real_poles=[(float(rng.uniform(0.3, 3.0)), 1)], gain=float(rng.uniform(0.5, 2.0)))
        )
        instants = np.sort(rng.uniform(0.1, 5.0, n))
        g_star = pf(instants)
        sigma2 = float(rng.choice([1e-4, 1e-3, 1e-2]))
        theta = np.array([float(rng.uniform(0.005, 0.5)), float(rng.uniform(0.3, 3.0))])
        value = oracle_mse(theta, TCKernelFamily(), instants, g_star, sigma2)
        mean, se = mc_risk(theta, TCKernelFamily(), instants, g_star, sigma2, 100_000, 60 + case)
        assert abs(value - mean) <= 3.0 * se

    def test_oracle_is_optimal_for_its_criterion(self, sec7_data):
        ds, g_star = sec7_data
        family = TCKernelFamily()
        oracle = oracle_tune(family, ds.instants, g_star, 1e-4, QUICK)
        eb = empirical_bayes_tune(ds, family, config=QUICK)
        crit_oracle = oracle_mse(oracle.theta, family, ds.instants, g_star, 1e-4)
        crit_eb = oracle_mse(eb.theta, family, ds.instants, g_star, 1e-4)
        assert crit_oracle <= crit_eb + 1e-12
        assert oracle.method == "OracleMSE"

    def test_single_parameter_family(self, sec7_data):
        _, g_star = sec7_data
        instants = 0.1 * np.arange(1, 101)
        family = ScaleOnlyFamily(decay=1.0)
        result = oracle_tune(family, instants, g_star, 1e-4, QUICK)
        grid = np.geomspace(1e-4, 10.0, 400)
        values = [oracle_mse(np.array([s]), family, instants, g_star, 1e-4) for s in grid]
        assert result.objective <= min(values) + 1e-10


def brute_force_p(a, b, alternative):
    combined = np.concatenate([a, b])
    ranks = rankdata(combined)
    n1 = len(a)
    obs = ranks[:n1].sum()
    stats = np.array([ranks[list(idx)].sum() for idx in combinations(range(len(combined)), n1)])
    p_le = float(np.mean(stats <= obs + 1e-9))
    p_ge = float(np.mean(stats >= obs - 1e-9))
    if alternative == "two_sided":
        return min(1.0, 2.0 * min(p_le, p_ge))
    return p_le


class TestWilcoxon:
    def test_identical_samples(self):
        assert wilcoxon_rank_sum(np.ones(6), np.ones(6)) == 1.0
        assert wilcoxon_rank_sum(np.ones(30), np.ones(25), method="normal") == 1.0

    def test_complete_separation(self):
        p = wilcoxon_rank_sum(np.arange(1, 51), np.arange(101, 151))
        assert p < 1e-10
        assert wilcoxon_rank_sum(np.arange(1, 51), np.arange(101, 151), "a_less") < 1e-10

    def test_worked_example_against_exact_oracle(self):
        a = [1.83, 0.50, 1.62, 2.48, 1.68, 1.88, 1.55, 3.06, 1.30]
        b = [0.878, 0.647, 0.598, 2.05, 1.06, 1.29, 1.06, 3.14, 1.29]
        exact = brute_force_p(np.array(a), np.array(b), "two_sided")
        assert exact == pytest.approx(0.12990538872891813, abs=1e-12)
        assert wilcoxon_rank_sum(a, b) == pytest.approx(exact, abs=1e-12)
        assert wilcoxon_rank_sum(a, b, method="normal") == pytest.approx(exact, abs=0.01)

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_exact_enumeration_small_samples(self, seed):
        rng = np.random.default_rng(700 + seed)
        n1, n2 = rng.integers(2, 9, 2)
        values = rng.integers(0, 6, n1 + n2).astype(float)  # heavy ties
        a, b = values[:n1], values[n1:]
        for alternative in ("two_sided", "a_less"):
            expected = brute_force_p(a, b, alternative)
            assert wilcoxon_rank_sum(a, b, alternative) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_normal_approximation_close_at_moderate_size(self, seed):
        rng = np.random.default_rng(800 + seed)
        a = rng.normal(0.0, 1.0, 10)
        b = rng.normal(0.4, 1.0, 10)
        for alternative in ("two_sided", "a_less"):
            exact = brute_force_p(a, b, alternative)
            approx = wilcoxon_rank_sum(a, b, alternative, method="normal")
            assert approx == pytest.approx(exact, abs=0.02)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            wilcoxon_rank_sum([1.0], [2.0], alternative="bogus")
        with pytest.raises(ValueError):
            wilcoxon_rank_sum([1.0], [2.0], method="bogus")


def test_family_registry():
    assert set(FAMILIES) == {"two_pole", "tc"}
    family = FAMILIES["two_pole"]()
    theta = family.from_unconstrained(family.to_unconstrained([2.5, 0.5, 1.2]))
    np.testing.assert_allclose(theta, [2.5, 0.5, 1.2])
