"""Monte-Carlo experiment harness: simulate, tune, estimate, compare.

A configuration fixes the target system, sampling scheme, noise level, the
kernel-family/tuning-method cells to compare, and a seed. Realizations draw
independent noise from streams keyed ``(seed, realization)``, so results are
reproducible and independent of execution order; realizations may run in
parallel.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .estimator import Dataset, DiracImpulse, FunctionalInput, fit_model
from .lti import PartialFractionForm, RationalTransferFunction, partial_fraction_decompose
from .tuning import (
    FAMILIES,
    OptimizerConfig,
    empirical_bayes_tune,
    oracle_tune,
    wilcoxon_rank_sum,
)
from .validation import check_positive_scalar, check_strictly_increasing

EMPIRICAL_BAYES = "empirical_bayes"
ORACLE = "oracle"


@dataclass(frozen=True)
class CellSpec:
    """One (kernel family, tuning method) comparison cell."""

    family: str
    method: str

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.method not in (EMPIRICAL_BAYES, ORACLE):
            raise ValueError(f"unknown tuning method {self.method!r}")

    @property
    def key(self):
        return f"{self.family}/{self.method}"


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    target: RationalTransferFunction
    sampling_period: float
    n_samples: int
    noise_variance: float
    n_realizations: int
    seed: int
    cells: tuple
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    plot_start: float = 0.0
    plot_stop: float = 10.0
    plot_step: float = 0.05

    def __post_init__(self):
        check_positive_scalar(self.sampling_period, "sampling_period")
        if self.n_samples < 1 or self.n_realizations < 1:
            raise ValueError("n_samples and n_realizations must be >= 1")
        check_positive_scalar(self.noise_variance, "noise_variance", allow_zero=True)
        object.__setattr__(self, "cells", tuple(self.cells))
        if len({c.key for c in self.cells}) != len(self.cells):
            raise ValueError("duplicate comparison cells")

    @property
    def instants(self):
        return self.sampling_period * np.arange(1, self.n_samples + 1)

    @property
    def plot_grid(self):
        n = int(round((self.plot_stop - self.plot_start) / self.plot_step)) + 1
        return np.linspace(self.plot_start, self.plot_stop, n)

    def to_dict(self):
        return {
            "name": self.name,
            "target": self.target.to_dict(),
            "input": {"type": "impulse"},
            "sampling_period": self.sampling_period,
            "n_samples": self.n_samples,
            "noise_variance": self.noise_variance,
            "n_realizations": self.n_realizations,
            "seed": self.seed,
            "cells": [{"family": c.family, "method": c.method} for c in self.cells],
            "optimizer": self.optimizer.to_dict(),
            "plot_grid": {
                "start": self.plot_start,
                "stop": self.plot_stop,
                "step": self.plot_step,
            },
        }

    @classmethod
    def from_dict(cls, d):
        input_spec = d.get("input", {"type": "impulse"})
        if input_spec.get("type") != "impulse":
            raise ValueError("only the impulsive input is supported in experiment configs")
        plot = d.get("plot_grid", {})
        return cls(
            name=d.get("name", "experiment"),
            target=RationalTransferFunction.from_dict(d["target"]),
            sampling_period=d["sampling_period"],
            n_samples=d["n_samples"],
            noise_variance=d["noise_variance"],
            n_realizations=d["n_realizations"],
            seed=d.get("seed", 0),
            cells=[CellSpec(c["family"], c["method"]) for c in d["cells"]],
            optimizer=OptimizerConfig.from_dict(d.get("optimizer", {})),
            plot_start=plot.get("start", 0.0),
            plot_stop=plot.get("stop", 10.0),
            plot_step=plot.get("step", 0.05),
        )

    @classmethod
    def from_file(cls, path_or_name):
        """Load a config from a JSON file or a builtin name like ``paper-sec7``."""
        path = Path(str(path_or_name))
        if path.exists():
            return cls.from_dict(json.loads(path.read_text()))
        builtin = str(path_or_name).replace("-", "_") + ".json"
        ref = resources.files("cckernel").joinpath("configs", builtin)
        if ref.is_file():
            return cls.from_dict(json.loads(ref.read_text()))
        raise FileNotFoundError(f"no config file or builtin named {path_or_name!r}")


def paper_sec7_config():
    return ExperimentConfig.from_file("paper-sec7")


def realization_rng(seed, realization):
    """Independent stream keyed (seed, realization); order independent."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(realization),)))
    )


def simulate_output(target, input_signal, instants, noise_variance, seed, realization=0):
    """Draw one noisy output record ``y(t_k) = (u * g)(t_k) + w(t_k)``.

    ``target`` may be a transfer function or an already decomposed impulse
    response. With a Dirac input the convolution is the impulse response
    itself, evaluated in closed form.
    """
    instants = check_strictly_increasing(instants, "instants")
    pf = target if isinstance(target, PartialFractionForm) else partial_fraction_decompose(target)
    if isinstance(input_signal, DiracImpulse):
        mean = pf(instants)
    elif isinstance(input_signal, FunctionalInput):
        from scipy import integrate

        u = input_signal.u
        mean = np.array(
            [
                integrate.quad(lambda tau, tk=tk: u(tk - tau) * pf(tau), 0.0, tk, limit=200)[0]
                for tk in instants
            ]
        )
    else:
        raise TypeError("unsupported input signal")
    sigma2 = check_positive_scalar(noise_variance, "noise_variance", allow_zero=True)
    if sigma2 > 0:
        noise = realization_rng(seed, realization).normal(0.0, np.sqrt(sigma2), instants.size)
        outputs = mean + noise
    else:
        outputs = mean
    return Dataset(instants, outputs, sigma2)


def _run_realization(config, r, g_star, oracle_thetas):
    rng = realization_rng(config.seed, r)
    sigma2 = config.noise_variance
    noise = rng.normal(0.0, np.sqrt(sigma2), g_star.size) if sigma2 > 0 else 0.0
    dataset = Dataset(config.instants, g_star + noise, sigma2)
    plot_grid = config.plot_grid
    out = {}
    for cell in config.cells:
        family = FAMILIES[cell.family]()
        try:
            if cell.method == ORACLE:
                theta = oracle_thetas[cell.family]
            else:
                theta = empirical_bayes_tune(
                    dataset, family, DiracImpulse(), config.optimizer
                ).theta
            kernel = family.build(theta)
            model = fit_model(kernel, DiracImpulse(), dataset)
            residual = model.predict(config.instants) - g_star
            out[cell.key] = {
                "sq_error": float(residual @ residual),
                "theta": family.named(theta),
                "curve": model.predict(plot_grid),
            }
        except Exception as exc:
            out[cell.key] = {"error": f"{type(exc).__name__}: {exc}"}
    return r, dataset if r == 0 else None, out


@dataclass
class RunResult:
    config: ExperimentConfig
    true_values: np.ndarray
    squared_errors: dict  # cell key -> array (nan where failed)
    thetas: dict  # cell key -> list of dicts (None where failed)
    curves: dict  # cell key -> (R, len(plot_grid)) array
    observed: Dataset
    failures: dict  # cell key -> list of (realization, message)
    p_values: dict

    def cell_keys(self):
        return [c.key for c in self.config.cells]

    def summary(self):
        cells = {}
        for key in self.cell_keys():
            errs = self.squared_errors[key]
            valid = errs[np.isfinite(errs)]
            if valid.size:
                q1, med, q3 = (float(q) for q in np.percentile(valid, [25, 50, 75]))
                mean = float(np.mean(valid))
            else:
                q1 = med = q3 = mean = None
            cells[key] = {
                "median_sq_error": med,
                "q1_sq_error": q1,
                "q3_sq_error": q3,
                "mean_sq_error": mean,
                "n_valid": int(valid.size),
                "n_failures": len(self.failures.get(key, [])),
            }
        return {
            "name": self.config.name,
            "seed": self.config.seed,
            "n_realizations": self.config.n_realizations,
            "cells": cells,
            "p_values": {k: float(v) for k, v in sorted(self.p_values.items())},
        }


def run_experiment(config, n_jobs=1, verbose=0):
    """Run the full study: per-realization tuning plus the rank-sum tests."""
    target_pf = partial_fraction_decompose(config.target)
    g_star = target_pf(config.instants)

    oracle_thetas = {}
    for cell in config.cells:
        if cell.method == ORACLE and cell.family not in oracle_thetas:
            family = FAMILIES[cell.family]()
            result = oracle_tune(
                family, config.instants, g_star, config.noise_variance, config.optimizer
            )
            oracle_thetas[cell.family] = result.theta

    runs = Parallel(n_jobs=n_jobs, verbose=verbose)(
        delayed(_run_realization)(config, r, g_star, oracle_thetas)
        for r in range(config.n_realizations)
    )

    n_r = config.n_realizations
    keys = [c.key for c in config.cells]
    sq = {k: np.full(n_r, np.nan) for k in keys}
    thetas = {k: [None] * n_r for k in keys}
    curves = {k: np.full((n_r, config.plot_grid.size), np.nan) for k in keys}
    failures = {k: [] for k in keys}
    observed = None
    for r, dataset, out in runs:
        if dataset is not None:
            observed = dataset
        for k in keys:
            record = out[k]
            if "error" in record:
                failures[k].append((r, record["error"]))
            else:
                sq[k][r] = record["sq_error"]
                thetas[k][r] = record["theta"]
                curves[k][r] = record["curve"]

    failed_realizations = {r for k in keys for r, _ in failures[k]}
    if len(failed_realizations) > 0.05 * n_r:
        raise RuntimeError(
            f"{len(failed_realizations)} of {n_r} realizations failed tuning (> 5%)"
        )

    p_values = {}
    for i, key_a in enumerate(keys):
        for key_b in keys[i + 1 :]:
            mask = np.isfinite(sq[key_a]) & np.isfinite(sq[key_b])
            p_values[f"two_sided:{key_a}|{key_b}"] = wilcoxon_rank_sum(
                sq[key_a][mask], sq[key_b][mask], "two_sided"
            )
    proposed_key, tc_key = "two_pole/oracle", "tc/oracle"
    if proposed_key in keys and tc_key in keys:
        mask = np.isfinite(sq[proposed_key]) & np.isfinite(sq[tc_key])
        p_values[f"one_sided:{proposed_key}<{tc_key}"] = wilcoxon_rank_sum(
            sq[proposed_key][mask], sq[tc_key][mask], "a_less"
        )

    return RunResult(
        config=config,
        true_values=g_star,
        squared_errors=sq,
        thetas=thetas,
        curves=curves,
        observed=observed,
        failures=failures,
        p_values=p_values,
    )


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


def export_result(result, out_dir, formats=("csv", "json")):
    """Write the per-figure data files; returns the list of paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    keys = result.cell_keys()

    if "csv" in formats:
        rows = []
        for key in keys:
            family, method = key.split("/")
            for r, err in enumerate(result.squared_errors[key]):
                if np.isfinite(err):
                    rows.append((family, method, r, float(err)))
        path = out_dir / "boxplot.csv"
        _write_csv(path, ["family", "method", "realization", "sq_error"], rows)
        written.append(path)

        rows = []
        grid = result.config.plot_grid
        for key in keys:
            family, method = key.split("/")
            for r in range(result.config.n_realizations):
                curve = result.curves[key][r]
                if not np.all(np.isfinite(curve)):
                    continue
                for t, value in zip(grid, curve):
                    rows.append((family, method, r, float(t), float(value)))
        path = out_dir / "curves.csv"
        _write_csv(path, ["family", "method", "realization", "t", "value"], rows)
        written.append(path)

        path = out_dir / "true_response.csv"
        _write_csv(
            path,
            ["t", "value"],
            [(float(t), float(v)) for t, v in zip(result.config.instants, result.true_values)],
        )
        written.append(path)

        if result.observed is not None:
            path = out_dir / "observed.csv"
            result.observed.to_csv(path)
            written.append(path)

        rows = []
        for key in keys:
            family, method = key.split("/")
            for r, theta in enumerate(result.thetas[key]):
                if theta is None:
                    continue
                for name, value in theta.items():
                    rows.append((family, method, r, name, float(value)))
        path = out_dir / "thetas.csv"
        _write_csv(path, ["family", "method", "realization", "param", "value"], rows)
        written.append(path)

    if "json" in formats:
        path = out_dir / "summary.json"
        path.write_text(json.dumps(result.summary(), indent=2, sort_keys=True))
        written.append(path)

    return written


def load_summary(path):
    return json.loads(Path(path).read_text())
