"""Command-line entry point for reproducible experiment runs.

Subcommands: ``simulate`` (write a synthetic dataset CSV), ``train`` (fit a
model and write the model file plus loss trace), ``evaluate`` (metrics CSV
and JSON for a model on a test set), ``cv`` (repeated k-fold
cross-validation), ``predict`` (per-subject survival curves on a time
grid).  Every run writes a manifest with the effective config, the seed,
and sha256 digests of the artifacts it produced.

Configuration is a flat INI file; every key has a default (see DEFAULTS
below and ``--help``).  Identical config and seed give byte-identical
output files.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

import numpy as np

from .data import ColumnSpec, Dataset, DatasetSchema, read_csv, write_csv
from .errors import ConfigError, MetasurvError
from .estimation import FitRecipe, TrainConfig, export_trace_csv, fit_recipe
from .evaluation import (
    ChrSpec,
    EvalReport,
    cross_validate,
    integrated_squared_error,
    metrics_over_time,
    write_reports_csv,
    write_reports_json,
)
from .modelio import load_model, save_model, write_manifest
from .models import survival_curve
from .synthetic import SyntheticSpec, sample_dataset, true_survival_grid

DEFAULTS = {
    "dataset": {
        "numeric": "x0 x1",
        "boolean": "",
        "categorical": "",
        "events": "2",
    },
    "model": {
        "kind": "ph",
        "basis": "linear",
        "knots": "0 2 4 6 8 10",
        "hidden": "32",
        "hidden_dropout": "0.1",
        "embedding_width": "10",
        "embedding_dropout": "0.7",
        "positivity": "exp",
    },
    "train": {
        "iterations": "1500",
        "step_size": "0.001",
        "batch_size": "256",
        "event_batch_size": "128",
        "clip_norm": "10",
        "seed": "0",
    },
    "evaluate": {
        "truth": "synthetic",
        "horizon": "10",
        "ise_step": "0.1",
        "chr_attribute": "x0",
        "chr_centers": "-1.5 -1 -0.5 0 0.5 1 1.5",
        "chr_width": "4",
        "chr_times": "2 4 6 8",
    },
    "cv": {
        "folds": "5",
        "repetitions": "2",
    },
}


def load_config(path: str | None) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    cfg.read_dict(DEFAULTS)
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                cfg.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
    return cfg


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def schema_from_config(cfg) -> DatasetSchema:
    columns: list[ColumnSpec] = []
    for name in cfg["dataset"]["numeric"].split():
        columns.append(ColumnSpec(name, "numeric"))
    for name in cfg["dataset"]["boolean"].split():
        columns.append(ColumnSpec(name, "boolean"))
    for token in cfg["dataset"]["categorical"].split():
        if ":" not in token:
            raise ConfigError(f"categorical column {token!r} needs a name:cardinality form")
        name, card = token.split(":", 1)
        columns.append(ColumnSpec(name, "categorical", cardinality=int(card)))
    return DatasetSchema(columns=tuple(columns), event_count=cfg["dataset"].getint("events"))


def _recipe_from_section(cfg, section: str, schema: DatasetSchema, seed: int | None) -> FitRecipe:
    model = cfg[section]
    trainsec = cfg["train"]
    train_config = TrainConfig(
        iterations=trainsec.getint("iterations"),
        step_size=trainsec.getfloat("step_size"),
        batch_size=trainsec.getint("batch_size"),
        event_batch_size=trainsec.getint("event_batch_size"),
        clip_norm=trainsec.getfloat("clip_norm"),
        seed=trainsec.getint("seed") if seed is None else seed,
    )
    name = section.split(":", 1)[1] if ":" in section else model.get("kind")
    return FitRecipe(
        name=name,
        kind=model.get("kind"),
        knots=_floats(model.get("knots")),
        basis_kind=model.get("basis"),
        hidden_widths=_ints(model.get("hidden")),
        hidden_dropout=model.getfloat("hidden_dropout"),
        embedding_width=model.getint("embedding_width"),
        embedding_dropout=model.getfloat("embedding_dropout"),
        categorical_cardinalities=tuple(c.cardinality for c in schema.categorical_columns()),
        positivity=model.get("positivity"),
        train=train_config,
    )


def recipes_from_config(cfg, schema: DatasetSchema, seed: int | None) -> list[FitRecipe]:
    sections = [s for s in cfg.sections() if s.startswith("model:")]
    if not sections:
        sections = ["model"]
    else:
        for s in sections:
            # variant sections inherit unset keys from [model]
            merged = dict(cfg["model"])
            merged.update(cfg[s])
            cfg[s].update(merged)
    return [_recipe_from_section(cfg, s, schema, seed) for s in sections]


def _chr_spec(cfg, schema: DatasetSchema) -> ChrSpec:
    attr = cfg["evaluate"]["chr_attribute"]
    numeric = schema.numeric_names()
    if attr not in numeric:
        raise ConfigError(f"chr_attribute {attr!r} is not a numeric column")
    return ChrSpec(
        attribute=numeric.index(attr),
        centers=_floats(cfg["evaluate"]["chr_centers"]),
        width=cfg["evaluate"].getfloat("chr_width"),
    )


def _config_echo(cfg) -> dict:
    return {s: dict(cfg[s]) for s in cfg.sections()}


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    schema = schema_from_config(cfg)
    spec = SyntheticSpec(
        n=args.n, seed=args.seed, horizon=args.horizon, uniform_censoring=args.uniform_censoring
    )
    data = sample_dataset(spec)
    out = _outdir(args)
    dataset_path = out / "dataset.csv"
    write_csv(dataset_path, data, schema)
    write_manifest(
        out / "manifest.json",
        "simulate",
        {**_config_echo(cfg), "simulate": {"n": args.n, "horizon": args.horizon}},
        args.seed,
        {"dataset": dataset_path},
    )
    print(f"wrote {dataset_path} ({data.n} records)")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    schema = schema_from_config(cfg)
    data = read_csv(args.data, schema)
    recipe = recipes_from_config(cfg, schema, args.seed)[0]
    model, trace = fit_recipe(recipe, data)
    out = _outdir(args)
    model_path = out / "model.json"
    trace_path = out / "trace.csv"
    save_model(model_path, model)
    export_trace_csv(trace_path, trace)
    write_manifest(
        out / "manifest.json",
        "train",
        _config_echo(cfg),
        recipe.train.seed,
        {"model": model_path, "trace": trace_path},
    )
    final = trace[-1] if trace.size else float("nan")
    print(f"trained {recipe.kind} model ({recipe.train.iterations} iterations, final objective {final:.6g})")
    print(f"wrote {model_path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    schema = schema_from_config(cfg)
    data = read_csv(args.data, schema)
    model = load_model(args.model)
    out = _outdir(args)
    chr_spec = _chr_spec(cfg, schema)
    times = _floats(cfg["evaluate"]["chr_times"])
    truth = None
    if cfg["evaluate"]["truth"] == "synthetic":
        truth = lambda d, ts: true_survival_grid(d.numeric, ts)  # noqa: E731
    metrics, curves = metrics_over_time(model, data, times, chr_spec, ise_truth=truth)

    reports = []
    for metric, values in sorted(metrics.items()):
        tgrid = np.asarray(times) if metric != "ise" else np.asarray([0.0])
        finite = values[np.isfinite(values)]
        reports.append(
            EvalReport(
                metric=metric,
                config="model",
                times=tgrid,
                values=values,
                aggregate=float(finite.max()) if finite.size else float("nan"),
                half_width=0.0,
                runs=1,
            )
        )
    csv_path = out / "metrics.csv"
    json_path = out / "metrics.json"
    write_reports_csv(csv_path, reports, {"model": curves})
    write_reports_json(json_path, reports)
    write_manifest(
        out / "manifest.json",
        "evaluate",
        _config_echo(cfg),
        args.seed,
        {"metrics_csv": csv_path, "metrics_json": json_path},
    )
    if truth is not None:
        ise = metrics["ise"][0]
        print(f"ISE {ise:.6g}")
    for rep in reports:
        if rep.metric != "ise":
            print(f"max {rep.metric} over time: {rep.aggregate:.6g}")
    return 0


def cmd_cv(args) -> int:
    cfg = load_config(args.config)
    schema = schema_from_config(cfg)
    data = read_csv(args.data, schema)
    recipes = recipes_from_config(cfg, schema, None)
    chr_spec = _chr_spec(cfg, schema)
    times = _floats(cfg["evaluate"]["chr_times"])
    reports, failures = cross_validate(
        data,
        recipes,
        folds=cfg["cv"].getint("folds"),
        repetitions=cfg["cv"].getint("repetitions"),
        seed=args.seed if args.seed is not None else cfg["train"].getint("seed"),
        time_grid=times,
        chr_spec=chr_spec,
        threads=args.threads,
        synthetic_truth=cfg["evaluate"]["truth"] == "synthetic",
    )
    out = _outdir(args)
    csv_path = out / "cv_metrics.csv"
    json_path = out / "cv_metrics.json"
    write_reports_csv(csv_path, reports)
    write_reports_json(json_path, reports, failures)
    write_manifest(
        out / "manifest.json",
        "cv",
        _config_echo(cfg),
        args.seed,
        {"metrics_csv": csv_path, "metrics_json": json_path},
    )
    for rep in reports:
        print(
            f"{rep.config} {rep.metric}: max-over-time {rep.aggregate:.6g} "
            f"+/- {rep.half_width:.2g} ({rep.runs} runs, {rep.failures} failed)"
        )
    if failures:
        print(f"{len(failures)} run(s) failed; see {json_path}")
    return 0


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    schema = schema_from_config(cfg)
    data = read_csv(args.data, schema)
    model = load_model(args.model)
    times = np.asarray(_floats(args.times))
    surv = survival_curve(model, data, times)
    out = _outdir(args)
    pred_path = out / "predictions.csv"
    with open(pred_path, "w") as fh:
        fh.write("subject,time,survival\n")
        for i in range(data.n):
            for t, s in zip(times, surv[i]):
                fh.write(f"{i},{t:.17g},{s:.17g}\n")
    write_manifest(
        out / "manifest.json",
        "predict",
        _config_echo(cfg),
        args.seed,
        {"predictions": pred_path},
    )
    print(f"wrote {pred_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    epilog_lines = ["configuration defaults:"]
    for section, keys in DEFAULTS.items():
        for key, value in keys.items():
            epilog_lines.append(f"  [{section}] {key} = {value}")
    parser = argparse.ArgumentParser(
        prog="metasurv",
        description="survival models with network-parameterized time bases",
        epilog="\n".join(epilog_lines),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_data=False, needs_model=False):
        p.add_argument("--config", default=None, help="INI config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="parallel workers (cv only)")
        if needs_data:
            p.add_argument("--data", required=True, help="dataset CSV path")
        if needs_model:
            p.add_argument("--model", required=True, help="model file path")

    p = sub.add_parser("simulate", help="write a synthetic competing-risks dataset CSV")
    common(p)
    p.add_argument("--n", type=int, default=10000, help="sample count")
    p.add_argument("--horizon", type=float, default=10.0, help="administrative censoring horizon")
    p.add_argument("--uniform-censoring", action="store_true", help="add independent uniform censoring")
    p.set_defaults(func=cmd_simulate, _needs_seed_default=0)

    p = sub.add_parser("train", help="fit a model and write model file + loss trace")
    common(p, needs_data=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics CSV/JSON for a model file on a test set")
    common(p, needs_data=True, needs_model=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cv", help="repeated k-fold cross-validation reports")
    common(p, needs_data=True)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("predict", help="per-subject survival curves on a time grid")
    common(p, needs_data=True, needs_model=True)
    p.add_argument("--times", required=True, help="comma- or space-separated time grid")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate" and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except MetasurvError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io-error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
