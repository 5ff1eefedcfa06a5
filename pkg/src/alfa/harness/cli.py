"""Command line entry point: ``alfa <command> [CONFIG] [options]``.

Every command writes ``<command>.csv`` (long format, one record per line) and
``<command>.json`` (summary with the config hash) into ``--out-dir``, plus
``<command>.png`` with ``--plot``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from pathlib import Path

import click

from alfa import __version__
from alfa.acquisition import traces_to_csv
from alfa.errors import (
    DataError,
    DegenerateData,
    DimensionMismatch,
    EmptyPool,
    EmptyTrainingSet,
    InvalidConfig,
    MissingClass,
    UnknownClass,
)
from alfa.harness import config as cfgmod
from alfa.harness import experiments as exp

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DATA_ERRORS = (DataError, DegenerateData, DimensionMismatch, EmptyPool, EmptyTrainingSet, MissingClass, UnknownClass, OSError)


def _number(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return v


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_csv(path: Path, fields, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields))
        w.writeheader()
        for r in rows:
            w.writerow({k: _number(r[k]) for k in fields})


def write_summary(path: Path, command: str, cfg: dict, results) -> None:
    doc = {
        "schema_version": exp.RESULT_SCHEMA_VERSION,
        "command": command,
        "package_version": __version__,
        "config_hash": cfgmod.config_hash(cfg),
        "config": {k: v for k, v in cfg.items() if not k.startswith("_")},
        "results": results,
    }
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def common(f):
    f = click.option("--plot", is_flag=True, help="Also render <command>.png (needs matplotlib).")(f)
    f = click.option("--workers", type=int, default=None, help=f"Worker processes (default ${exp.WORKERS_ENV} or all CPUs).")(f)
    f = click.option("--alpha", type=float, default=None, help="Risk level for threshold calibration.")(f)
    f = click.option("--method", type=click.Choice(exp.METHODS), default=None, help="Uncertainty backend.")(f)
    f = click.option("--out-dir", type=click.Path(file_okay=False), default=".", show_default=True)(f)
    f = click.option("--seed", type=int, default=None, help="First seed (seeds are seed .. seed+n_seeds-1).")(f)
    f = click.argument("config_path", required=False, type=click.Path(dir_okay=False))(f)
    return f


def _setup(config_path, out_dir, **overrides):
    cfg = cfgmod.apply_overrides(cfgmod.load_config(config_path), **overrides)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _dataset(cfg, default="wine"):
    cfg.setdefault("dataset", default)
    return cfgmod.resolve_dataset(cfg["dataset"], cfg["_base"], int(cfg["seed"]))


@click.group()
@click.version_option(__version__, prog_name="alfa")
def cli():
    """Uncertainty-driven label and modality acquisition experiments."""


@cli.command()
@common
def curve(config_path, seed, out_dir, method, alpha, workers, plot):
    """Learning curves with robust-prediction counts."""
    cfg, out = _setup(config_path, out_dir, seed=seed, method=method, alpha=alpha)
    ds = _dataset(cfg)
    methods = cfg.get("methods") or [cfg["method"]]
    if method is not None:
        methods = [method]
    vf = float(cfg["validation_fraction"])
    pool = len(exp.carve(exp.split(len(ds), cfg["split"], 0).train, vf)[0])
    sizes = cfg.get("sizes") or exp.default_sizes(pool)
    res = exp.run_learning_curve(
        ds, tuple(methods), cfg.get("modalities"), sizes, cfgmod.seeds(cfg), float(cfg["alpha"]),
        validation_fraction=vf, split_ratios=cfg["split"], config=cfgmod.backend(cfg, methods[0]), workers=workers,
    )
    write_csv(out / "curve.csv", exp.RECORD_FIELDS, res.rows())
    write_summary(out / "curve.json", "curve", cfg, [c.__dict__ for c in res.cells()])
    if plot:
        from alfa.harness.figures import plot_curve

        plot_curve(res, out / "curve.png")
    click.echo(f"{len(res.records)} records -> {out / 'curve.csv'}")


@cli.command()
@common
def disentangle(config_path, seed, out_dir, method, alpha, workers, plot):
    """Pearson correlation between per-instance EU and AU."""
    cfg, out = _setup(config_path, out_dir, seed=seed, method=method, alpha=alpha)
    specs = cfg.get("datasets") or [cfg.get("dataset", "wine")]
    datasets = {}
    for spec in specs:
        ds = cfgmod.resolve_dataset(spec, cfg["_base"], int(cfg["seed"]))
        datasets[ds.name] = ds
    results = exp.run_disentanglement(datasets, cfg["method"], cfgmod.seeds(cfg), config=cfgmod.backend(cfg), workers=workers)
    rows = [
        {"dataset": r.dataset, "seed": s, "r": rv, "p": pv}
        for r in results for s, rv, pv in r.per_seed
    ]
    write_csv(out / "disentangle.csv", ("dataset", "seed", "r", "p"), rows)
    summary = [
        {"dataset": r.dataset, "r": r.r, "p": r.p, "significant": r.significant, "n_seeds": r.n_seeds, "diagnostic": r.diagnostic}
        for r in results
    ]
    write_summary(out / "disentangle.json", "disentangle", cfg, summary)
    if plot:
        from alfa.harness.figures import plot_correlations

        plot_correlations(results, out / "disentangle.png")
    for r in results:
        flag = "significant" if r.significant else "not significant"
        note = f"  [{r.diagnostic}]" if r.diagnostic else ""
        click.echo(f"{r.dataset}: r = {r.r:.3f}, p = {r.p:.3g} ({flag}){note}")


@cli.command()
@common
def monotonicity(config_path, seed, out_dir, method, alpha, workers, plot):
    """Mean test EU as the nested training set grows."""
    cfg, out = _setup(config_path, out_dir, seed=seed, method=method, alpha=alpha)
    ds = _dataset(cfg)
    res = exp.run_monotonicity(
        ds, cfg["method"], cfg.get("sizes"), cfgmod.seeds(cfg), modality=int(cfg.get("modality", -1)),
        config=cfgmod.backend(cfg), split_ratios=cfg["split"], workers=workers,
    )
    rows = [{"seed": s, "size": n, "mean_eu": eu} for s, eus in res.per_seed for n, eu in zip(res.sizes, eus)]
    write_csv(out / "monotonicity.csv", ("seed", "size", "mean_eu"), rows)
    write_summary(out / "monotonicity.json", "monotonicity", cfg, {"sizes": res.sizes, "mean_eu": res.mean_eu, "spearman": res.spearman})
    if plot:
        from alfa.harness.figures import plot_monotonicity

        plot_monotonicity(res, out / "monotonicity.png")
    click.echo(f"spearman(size, mean EU) = {res.spearman:.3f}")


@cli.command()
@common
@click.option("--disable-thresholds", is_flag=True, help="Accept every first prediction (t_e = t_a = inf).")
def alfa(config_path, seed, out_dir, method, alpha, workers, plot, disable_thresholds):
    """Acquisition episodes, one per test instance."""
    cfg, out = _setup(config_path, out_dir, seed=seed, method=method, alpha=alpha)
    ds = _dataset(cfg, default="synthetic")
    opts = cfg.get("episodes", {}) or {}
    known = {"mode", "n_initial", "split", "calibration", "calibration_labels", "min_support", "standardize", "strategy", "batch", "max_episodes"}
    unknown = set(opts) - known
    if unknown:
        raise InvalidConfig(f"unknown episode options {sorted(unknown)}")
    if "split" in opts:
        opts = {**opts, "split_ratios": opts.pop("split")}
    mode = opts.pop("mode", "independent")
    batch = exp.run_alfa_episode_batch(
        ds, cfg["method"], None if disable_thresholds else float(cfg["alpha"]), cfgmod.budgets(cfg), mode,
        seed=int(cfg["seed"]), config=cfgmod.backend(cfg), **opts,
    )
    (out / "alfa.csv").write_text(traces_to_csv(batch.traces), encoding="utf-8")
    write_summary(out / "alfa.json", "alfa", cfg, batch.summary.to_dict())
    if plot:
        from alfa.harness.figures import plot_episodes

        plot_episodes(batch.summary, out / "alfa.png")
    s = batch.summary
    click.echo(f"{s.n_episodes} episodes, reliable {s.fraction_reliable:.3f}, reliable accuracy {s.reliable_accuracy:.3f}")


@cli.command()
@common
def calibrate(config_path, seed, out_dir, method, alpha, workers, plot):
    """Per-modality thresholds on the validation split."""
    cfg, out = _setup(config_path, out_dir, seed=seed, method=method, alpha=alpha)
    ds = _dataset(cfg)
    rows = exp.run_calibration(
        ds, cfg["method"], cfgmod.seeds(cfg), float(cfg["alpha"]),
        validation_fraction=float(cfg["validation_fraction"]), split_ratios=cfg["split"], config=cfgmod.backend(cfg),
    )
    write_csv(out / "calibrate.csv", exp.CALIBRATION_FIELDS, rows)
    write_summary(out / "calibrate.json", "calibrate", cfg, rows)
    if plot:
        click.echo("calibrate has no figure", err=True)
    for r in rows:
        click.echo(f"seed {r['seed']} modality {r['modality']}: t_e = {r['t_e']:.6g}, t_a = {r['t_a']:.6g}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="alfa", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except click.exceptions.Abort:
        return 1
    except InvalidConfig as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except DATA_ERRORS as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except ArithmeticError as exc:
        click.echo(f"numerical error: {exc}", err=True)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
