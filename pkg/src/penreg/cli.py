"""Command-line interface: simulation experiments, ad-hoc tuning on CSV
datasets, bound calculators, and the empirical Lipschitz check."""

from __future__ import annotations

import json
import sys

import click
import numpy as np

from penreg.bounds import (
    BoundInputs,
    cv_remainder,
    empirical_lipschitz_ratio,
    theorem1_delta2,
)
from penreg.data import (
    Dataset,
    LambdaBox,
    load_dataset_csv,
    make_kfold,
    split_train_val,
    tying_nested,
)
from penreg.enet import enet_penalty_total
from penreg.experiment import ExperimentConfig, preset_config, run_simulation_experiment
from penreg.ridge import GroupedDesign, ridge_penalty_total
from penreg.tuner import (
    EnetFamily,
    GamFamily,
    RidgeFamily,
    TuneConfig,
    averaged_predict,
    tune_kfold,
    tune_train_val,
)


@click.group()
def main() -> None:
    """Penalized regression with tuned per-group penalty parameters."""


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _parse_ints(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


@main.command()
@click.option("--sim", type=click.Choice(["1", "2"]), default="1", show_default=True)
@click.option("--reps", type=int, default=None)
@click.option("--n-train", type=int, default=None)
@click.option("--n-val", type=int, default=None)
@click.option("--dims", "j_dim", type=int, default=8, show_default=True)
@click.option("--free", default="1,2,4,8", show_default=True,
              help="Comma list of free penalty parameter counts.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--lambda-min", type=float, default=1e-6, show_default=True)
@click.option("--lambda-max", type=float, default=1e2, show_default=True)
@click.option("--method", type=click.Choice(["grad", "neldermead"]), default="grad",
              show_default=True)
@click.option("--preset", type=click.Choice(["paper", "desk"]), default=None)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=".", show_default=True)
@click.option("--quiet", is_flag=True, default=False)
def simulate(sim, reps, n_train, n_val, j_dim, free, seed, lambda_min, lambda_max,
             method, preset, jobs, out_dir, quiet) -> None:
    """Run the replicate-by-k simulation experiment and write reports."""
    overrides = dict(
        sim=int(sim), J=j_dim, free_ks=_parse_ints(free), seed=seed,
        lambda_min=lambda_min, lambda_max=lambda_max, method=method,
        out_dir=out_dir, jobs=jobs,
    )
    if reps is not None:
        overrides["reps"] = reps
    if n_train is not None:
        overrides["n_train"] = n_train
    if n_val is not None:
        overrides["n_val"] = n_val
    try:
        if preset is not None:
            config = preset_config(preset, **overrides)
        else:
            config = ExperimentConfig(**overrides)
    except ValueError as exc:
        raise click.UsageError(str(exc))

    def progress(row):
        if not quiet:
            click.echo(
                f"rep {row['rep']} k {row['k']} excess {row['excess']:.6g}",
                err=True,
            )

    summary = run_simulation_experiment(config, progress=progress)
    click.echo(json.dumps(
        {k: summary.get(k) for k in
         ("slope_excl_k1", "stderr_excl_k1", "slope_incl_k1", "stderr_incl_k1",
          "dropped_rows_excl_k1", "dropped_rows_incl_k1")},
        indent=2,
    ))


def _build_family(model: str, dataset: Dataset, groups: str | None, w: float):
    if model == "gam":
        return GamFamily(dataset.domain_bounds)
    sizes = _parse_ints(groups) if groups else [1] * dataset.n_features
    design = GroupedDesign(sizes)
    if design.p != dataset.n_features:
        raise click.UsageError(
            f"group sizes cover {design.p} columns, dataset has {dataset.n_features}"
        )
    if model == "ridge":
        return RidgeFamily(design)
    return EnetFamily(design, w)


@main.command()
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--model", type=click.Choice(["ridge", "gam", "enet"]), required=True)
@click.option("--groups", default=None, help="Comma list of covariate group sizes.")
@click.option("--w", type=float, default=1.0, show_default=True,
              help="Quadratic weight of the elastic net penalty.")
@click.option("--free-k", type=int, default=1, show_default=True,
              help="Number of free penalty parameters (must divide the group count).")
@click.option("--grid", default=None, help="Comma list of penalty values to search.")
@click.option("--folds", type=int, default=None,
              help="Use averaged K-fold cross-validation instead of a split.")
@click.option("--val-frac", type=float, default=0.25, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--lambda-min", type=float, default=1e-6, show_default=True)
@click.option("--lambda-max", type=float, default=1e2, show_default=True)
@click.option("--method", type=click.Choice(["grad", "neldermead"]), default="grad",
              show_default=True)
def tune(data_path, model, groups, w, free_k, grid, folds, val_frac, seed,
         lambda_min, lambda_max, method) -> None:
    """Tune penalty parameters for a CSV dataset and print a JSON report."""
    try:
        dataset = load_dataset_csv(data_path)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    family = _build_family(model, dataset, groups, w)
    j_dim = dataset.n_features if model == "gam" else family.design.J
    if j_dim % free_k != 0:
        raise click.UsageError(f"--free-k {free_k} must divide {j_dim}")
    tmap = tying_nested(j_dim, free_k)
    box = LambdaBox(lambda_min, lambda_max, j_dim)
    cfg = TuneConfig(method=method)
    if grid is not None:
        cfg.grid = [np.full(free_k, v) for v in _parse_floats(grid)]
    if folds is not None:
        plan = make_kfold(dataset.n, folds, seed)
        cv = tune_kfold(family, dataset, plan, box, tmap, cfg)
        report = {
            "mode": "kfold",
            "folds": folds,
            "selected_lambda": [float(v) for v in cv.selected_lambda],
            "selected_free": [float(v) for v in cv.selected_free],
            "cv_loss": cv.cv_loss,
            "fold_losses": [
                float(0.5 * np.mean(
                    (dataset.subset(plan.folds[i]).y
                     - family.predict_many(f, dataset.subset(plan.folds[i]).x)) ** 2))
                for i, f in enumerate(cv.fold_fits)
            ],
            "averaged_prediction_first_row": float(
                averaged_predict(cv, dataset.x[:1])[0]
            ),
            "evaluations": len(cv.trace),
        }
    else:
        n_v = max(1, int(round(val_frac * dataset.n)))
        n_t = dataset.n - n_v
        split = split_train_val(dataset, n_t, n_v, seed)
        result = tune_train_val(family, dataset, split, box, tmap, cfg)
        report = {
            "mode": "train_val",
            "n_train": n_t,
            "n_val": n_v,
            "selected_lambda": [float(v) for v in result.selected_lambda],
            "selected_free": [float(v) for v in result.selected_free],
            "val_loss": result.val_loss,
            "evaluations": len(result.trace),
            "warning_no_improvement": result.warning,
        }
    click.echo(json.dumps(report, indent=2))


@main.group()
def bounds() -> None:
    """Bound-shape calculators."""


@bounds.command("theorem1")
@click.option("--j", "j_dim", type=int, required=True)
@click.option("--n", type=int, required=True)
@click.option("--n-val", type=int, required=True)
@click.option("--delta", type=float, required=True, help="Penalty box width.")
@click.option("--c-norm", type=float, required=True)
@click.option("--oracle-risk", type=float, default=0.0, show_default=True)
@click.option("--c", type=float, default=1.0, show_default=True)
def bounds_theorem1(j_dim, n, n_val, delta, c_norm, oracle_risk, c) -> None:
    """Split-tuning selection-error bound shape."""
    try:
        inputs = BoundInputs(J=j_dim, n=n, n_V=n_val, delta_lambda=delta,
                             c_norm=c_norm, oracle_risk=oracle_risk, c=c)
        value = theorem1_delta2(inputs)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    click.echo(json.dumps({"delta2": value, "note": "bound shape, constant c caller-set"}))


@bounds.command("cv")
@click.option("--j", "j_dim", type=int, required=True)
@click.option("--n", type=int, required=True)
@click.option("--n-val", type=int, required=True)
@click.option("--delta", type=float, required=True)
@click.option("--a", type=float, required=True)
@click.option("--k0", type=float, default=1.0, show_default=True)
@click.option("--sigma0", type=float, default=1.0, show_default=True)
@click.option("--h-tilde", type=float, default=1.0, show_default=True)
@click.option("--c1", type=float, default=1.0, show_default=True)
@click.option("--c-k0b", type=float, default=1.0, show_default=True)
def bounds_cv(j_dim, n, n_val, delta, a, k0, sigma0, h_tilde, c1, c_k0b) -> None:
    """Averaged cross-validation remainder shape."""
    try:
        inputs = BoundInputs(J=j_dim, n=n, n_V=n_val, delta_lambda=delta, c_norm=1.0,
                             a=a, K0=k0, sigma0=sigma0, h_tilde=h_tilde, c1=c1,
                             c_K0b=c_k0b)
        value = cv_remainder(inputs)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    click.echo(json.dumps({"remainder": value, "note": "bound shape, constants caller-set"}))


@main.command("verify-lipschitz")
@click.option("--family", "family_name", type=click.Choice(["ridge", "enet"]),
              required=True)
@click.option("--pairs", type=int, default=200, show_default=True)
@click.option("--points", type=int, default=50, show_default=True)
@click.option("--dims", "j_dim", type=int, default=4, show_default=True)
@click.option("--n-train", type=int, default=50, show_default=True)
@click.option("--w", type=float, default=1.0, show_default=True)
@click.option("--lambda-min", type=float, default=0.1, show_default=True)
@click.option("--lambda-max", type=float, default=10.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def verify_lipschitz(family_name, pairs, points, j_dim, n_train, w,
                     lambda_min, lambda_max, seed) -> None:
    """Check the prediction-stability inequality on a random instance."""
    report = run_lipschitz_check(family_name, pairs, points, j_dim, n_train, w,
                                 lambda_min, lambda_max, seed)
    click.echo(json.dumps({
        "family": family_name,
        "max_ratio": report.empirical_max_ratio,
        "pairs_tested": report.pairs_tested,
        "m_T": report.m_t,
        "c_star": report.c_star,
        "holds": report.empirical_max_ratio <= 1.0 + 1e-9,
    }, indent=2))
    if report.empirical_max_ratio > 1.0 + 1e-9:
        sys.exit(1)


def run_lipschitz_check(family_name: str, pairs: int, points: int, j_dim: int,
                        n_train: int, w: float, lambda_min: float,
                        lambda_max: float, seed: int):
    """Build a random linear instance with known coefficients and run the
    refit-based ratio harness."""
    from penreg.enet import enet_lipschitz
    from penreg.ridge import fit_ridge, ridge_lipschitz

    rng = np.random.default_rng(seed)
    design = GroupedDesign([1] * j_dim)
    x = rng.standard_normal((n_train, j_dim))
    theta_star = rng.standard_normal(j_dim)
    noise = 0.5 * rng.standard_normal(n_train)
    dataset = Dataset(x=x, y=x @ theta_star + noise, noise=noise)
    box = LambdaBox(lambda_min, lambda_max, j_dim)
    noise_sq = float(np.mean(noise**2))
    if family_name == "ridge":
        family = RidgeFamily(design)
        factor = ridge_lipschitz(dataset, design, box,
                                 ridge_penalty_total(design, theta_star), noise_sq)
    else:
        family = EnetFamily(design, w)
        factor = enet_lipschitz(dataset, design, box, w,
                                enet_penalty_total(design, theta_star, w), noise_sq)
    test_points = rng.standard_normal((points, j_dim))
    return empirical_lipschitz_ratio(family, dataset, box, factor, test_points,
                                     pairs, seed + 1)


if __name__ == "__main__":
    main()
