"""Command-line surface: estimation, experiments, and diagnostic exports."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import click
import numpy as np

from .errors import DegenerateGridError
from .estimator import Dataset, DiracImpulse, fit_model
from .experiment import ExperimentConfig, export_result, run_experiment
from .kernels import gram, gram_inverse_closed_form, gram_log_det_closed_form, kernel_from_dict
from .maxent import build_process, sample
from .spectral import MultiPoleSpectralBasis, truncation_error_curve


def _parse_grid(text):
    """Parse ``start:stop:step`` (inclusive stop) or a comma list of instants."""
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        n = int(round((stop - start) / step)) + 1
        return start + step * np.arange(n)
    return np.array([float(x) for x in text.split(",")])


def _load_kernel(path):
    return kernel_from_dict(json.loads(Path(path).read_text()))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


@click.group()
def main():
    """Coordinate-change spline kernels for impulse response estimation."""


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True), help="CSV with header t,y.")
@click.option("--kernel", "kernel_path", required=True, type=click.Path(exists=True))
@click.option("--noise-variance", type=float, required=True)
@click.option("--gamma", type=float, default=None, help="Defaults to the noise variance.")
@click.option("--out", type=click.Path(), default="model.json")
def estimate(data, kernel_path, noise_variance, gamma, out):
    """Fit a single dataset and write the model as JSON."""
    dataset = Dataset.from_csv(data, noise_variance)
    kernel = _load_kernel(kernel_path)
    model = fit_model(kernel, DiracImpulse(), dataset, gamma=gamma)
    Path(out).write_text(model.to_json())
    click.echo(f"wrote {out}")


@main.command()
@click.option("--config", default="paper-sec7", help="Config file path or builtin name.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out-dir", type=click.Path(), default="experiment-out")
@click.option("--threads", type=int, default=1, help="Parallel workers over realizations.")
def experiment(config, seed, out_dir, threads):
    """Run the Monte-Carlo comparison study and export its figures' data."""
    cfg = ExperimentConfig.from_file(config)
    if seed is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "seed": seed})
    result = run_experiment(cfg, n_jobs=threads)
    written = export_result(result, out_dir)
    for key, stats in sorted(result.summary()["cells"].items()):
        click.echo(f"{key}: median squared error {stats['median_sq_error']:.3e}")
    for name, p in sorted(result.p_values.items()):
        click.echo(f"{name}: p = {p:.3g}")
    for path in written:
        click.echo(f"wrote {path}")


@main.command()
@click.option("--n", type=int, default=1, help="Coordinate exponent (pole multiplicity - 1).")
@click.option("--alpha", type=float, default=1.0)
@click.option("--scale", type=float, default=1.0)
@click.option("--modes", type=int, default=3, help="Eigenfunctions to export.")
@click.option("--truncations", default="1,5,10,20,50,100,150,200")
@click.option("--grid", default="0.1:4.0:0.1")
@click.option("--curve-grid", default="0.0:8.0:0.02", help="Grid for measure/mode curves.")
@click.option("--out-dir", type=click.Path(), default="spectral-out")
def spectral(n, alpha, scale, modes, truncations, grid, curve_grid, out_dir):
    """Export measure, eigenfunction, and series-convergence curves as CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    basis = MultiPoleSpectralBasis(n, alpha, scale)
    taus = _parse_grid(curve_grid)
    _write_csv(
        out / "measure.csv",
        ["tau", "cumulative", "density"],
        [
            (float(t), float(basis.measure.cumulative(t)), float(basis.measure.density(t)))
            for t in taus
        ],
    )
    rows = []
    for i in range(1, modes + 1):
        phi = basis.eigenfunction(i)
        rows.extend((i, float(t), float(phi(t))) for t in taus)
    _write_csv(out / "eigenfunctions.csv", ["mode", "tau", "value"], rows)
    trunc = [int(x) for x in truncations.split(",")]
    curve = truncation_error_curve(basis, _parse_grid(grid), trunc)
    _write_csv(out / "convergence.csv", ["terms", "frobenius_error"], curve)
    click.echo(f"wrote measure.csv, eigenfunctions.csv, convergence.csv in {out}")


@main.command("maxent-sample")
@click.option("--kernel", "kernel_path", required=True, type=click.Path(exists=True))
@click.option("--grid", required=True)
@click.option("--paths", type=int, default=10)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default="paths.csv")
def maxent_sample(kernel_path, grid, paths, seed, out):
    """Sample the covariance-matching Gaussian increment process."""
    kernel = _load_kernel(kernel_path)
    instants = _parse_grid(grid)
    process = build_process(kernel, instants)
    draws = sample(process, seed, paths)
    rows = []
    for p in range(paths):
        rows.extend(
            (float(t), p, float(v)) for t, v in zip(instants, draws[p])
        )
    _write_csv(out, ["instant", "path_id", "value"], rows)
    click.echo(f"wrote {out}")


@main.command("gram")
@click.option("--kernel", "kernel_path", required=True, type=click.Path(exists=True))
@click.option("--grid", required=True)
@click.option("--out-dir", type=click.Path(), default="gram-out")
@click.option("--eps", type=float, default=1e-12, help="Degeneracy tolerance.")
def gram_export(kernel_path, grid, out_dir, eps):
    """Export the dense Gram matrix plus its closed-form inverse and pattern."""
    kernel = _load_kernel(kernel_path)
    instants = _parse_grid(grid)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    matrix = gram(kernel, instants)
    np.savetxt(out / "gram.csv", matrix, delimiter=",")
    try:
        fact = gram_inverse_closed_form(kernel, instants, eps)
    except DegenerateGridError as exc:
        raise click.ClickException(f"grid is degenerate for the closed forms: {exc}")
    _write_csv(out / "inverse_coo.csv", ["row", "col", "value"], fact.coordinate_list())
    np.savetxt(out / "sparsity.csv", fact.sparsity_pattern(), fmt="%d", delimiter=",")
    log_det = gram_log_det_closed_form(kernel, instants, eps)
    inv = fact.dense_inverse()
    n = instants.size
    residual = np.linalg.norm(2 * np.eye(n) - matrix @ inv - inv @ matrix, "fro")
    meta = {"log_determinant": log_det, "identity_residual_fro": residual, "nonzeros": fact.nonzero_count()}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    click.echo(json.dumps(meta, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
