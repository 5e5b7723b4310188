"""Error metrics and the cross-validation harness.

Two metric families: integrated squared survival error against a known
truth oracle (synthetic data only), and the sliding-window marginal
cumulative hazard ratio compared against windowed Kaplan-Meier curves,
summarized by an RMSE that splits exactly into an unbiased part and a bias.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .data import Dataset
from .errors import ConfigError, UsageError
from .estimation import FitRecipe, fit_recipe, kaplan_meier
from .models import MnnModel, survival_curve


def _survival_matrix(source, data: Dataset, times: np.ndarray) -> np.ndarray:
    """Survival values (n, m) from a model, a callable, or a precomputed matrix."""
    if source is None:
        raise UsageError("a survival source (model, callable, or matrix) is required")
    if isinstance(source, MnnModel):
        out = survival_curve(source, data, times)
    elif isinstance(source, np.ndarray):
        out = source
    elif callable(source):
        out = np.asarray(source(data, times), dtype=np.float64)
    else:
        raise UsageError(f"cannot interpret {type(source).__name__} as a survival source")
    if out.shape != (data.n, times.size):
        raise UsageError(f"survival matrix must be (n, m) = ({data.n}, {times.size})")
    return out


def integrated_squared_error(model, data: Dataset, truth, horizon: float = 10.0, step: float = 0.1) -> float:
    """Mean over subjects of the time-averaged squared survival error.

    ``truth`` is the oracle: a precomputed (n, m) matrix or a callable
    (data, times) -> matrix; it is required, there is no default.
    Trapezoidal rule on a uniform grid over [0, horizon].
    """
    times = np.arange(0.0, horizon + 0.5 * step, step)
    s_model = _survival_matrix(model, data, times)
    s_true = _survival_matrix(truth, data, times)
    per_subject = trapezoid((s_model - s_true) ** 2, times, axis=1) / horizon
    return float(per_subject.mean())


@dataclass
class ChrCurves:
    """Marginal cumulative-hazard-ratio tracks over attribute windows at one time."""

    centers: np.ndarray
    model_chr: np.ndarray  # NaN where the window is empty
    km_chr: np.ndarray
    weights: np.ndarray  # subjects per window
    t: float


def marginal_chr(model, data: Dataset, attribute: int, centers, t: float, width: float = 4.0) -> ChrCurves:
    """Sliding-window marginal CHR of a model and of Kaplan-Meier.

    For each window: a windowed Kaplan-Meier curve, the window-averaged
    model survival, and both ratios of log-survival against the population
    Kaplan-Meier at ``t``.  Empty windows are flagged missing (NaN), never
    zero.
    """
    if t <= 0.0:
        raise UsageError("the comparison time must be positive")
    centers = np.asarray(centers, dtype=np.float64)
    values = data.numeric[:, attribute]
    pop = kaplan_meier(data)(t)
    if not (0.0 < pop < 1.0):
        raise UsageError("population Kaplan-Meier needs at least one event before t")
    log_pop = np.log(pop)

    model_chr = np.full(centers.size, np.nan)
    km_chr = np.full(centers.size, np.nan)
    weights = np.zeros(centers.size)
    half = 0.5 * width
    for i, w in enumerate(centers):
        sel = np.abs(values - w) <= half
        count = int(sel.sum())
        weights[i] = count
        if count == 0:
            continue
        window = data.subset(sel)
        s_km = kaplan_meier(window)(t)
        s_model = float(_survival_matrix(model, window, np.asarray([t])).mean())
        with np.errstate(divide="ignore"):
            km_chr[i] = np.log(s_km) / log_pop
            model_chr[i] = np.log(s_model) / log_pop
    return ChrCurves(centers=centers, model_chr=model_chr, km_chr=km_chr, weights=weights, t=t)


def rmse_urmse_bias(model_chr, km_chr, weights) -> tuple[float, float, float]:
    """Weighted RMSE of log CHR ratios and its exact bias decomposition.

    e(w) = log(model CHR / KM CHR); rmse**2 = urmse**2 + bias**2 holds to
    rounding.  Windows whose ratio is undefined (a survival value at or
    beyond a log boundary upstream, or an empty window) are excluded with a
    warning.
    """
    model_chr = np.asarray(model_chr, dtype=np.float64)
    km_chr = np.asarray(km_chr, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if model_chr.shape != km_chr.shape or model_chr.shape != weights.shape:
        raise UsageError("curves and weights must share one window grid")
    if np.any(weights < 0.0):
        raise UsageError("window weights must be nonnegative")
    valid = (
        np.isfinite(model_chr)
        & np.isfinite(km_chr)
        & (model_chr > 0.0)
        & (km_chr > 0.0)
        & (weights > 0.0)
    )
    dropped = int(np.sum(~valid & (weights > 0.0)))
    if dropped:
        warnings.warn(f"excluded {dropped} window(s) with degenerate log ratios", stacklevel=2)
    if not valid.any():
        raise UsageError("no usable windows: all weights zero or ratios degenerate")
    e = np.log(model_chr[valid] / km_chr[valid])
    p = weights[valid] / weights[valid].sum()
    rmse = float(np.sqrt(np.sum(p * e**2)))
    bias = float(np.sum(p * e))
    urmse = float(np.sqrt(np.sum(p * (e - bias) ** 2)))
    return rmse, urmse, abs(bias)


# ---------------------------------------------------------------------------
# cross-validation harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChrSpec:
    attribute: int
    centers: tuple[float, ...]
    width: float = 4.0


@dataclass
class EvalReport:
    metric: str
    config: str
    times: np.ndarray
    values: np.ndarray  # per-time means over runs (NaN where a time had no usable windows)
    aggregate: float  # mean over runs of the per-run max over time
    half_width: float  # normal-approximation 95% half width over runs
    runs: int
    failures: int = 0

    def __post_init__(self):
        if self.half_width < 0.0:
            raise UsageError("half width must be nonnegative")


_CHR_METRICS = ("rmse", "urmse", "abs_bias")


def metrics_over_time(model, test: Dataset, time_grid, chr_spec: ChrSpec, ise_truth=None):
    """Per-time CHR error metrics (plus optional ISE) for one fitted model."""
    time_grid = np.asarray(time_grid, dtype=np.float64)
    out = {m: np.full(time_grid.size, np.nan) for m in _CHR_METRICS}
    curves = {}
    for i, t in enumerate(time_grid):
        try:
            c = marginal_chr(model, test, chr_spec.attribute, chr_spec.centers, float(t), chr_spec.width)
        except UsageError:
            continue
        curves[float(t)] = c
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                r, u, b = rmse_urmse_bias(c.model_chr, c.km_chr, c.weights)
            except UsageError:
                continue
        out["rmse"][i], out["urmse"][i], out["abs_bias"][i] = r, u, b
    if ise_truth is not None:
        out["ise"] = np.asarray([integrated_squared_error(model, test, ise_truth)])
    return out, curves


def _fold_assignments(n: int, folds: int, repetitions: int, seed: int) -> np.ndarray:
    """(repetitions, n) fold labels; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    labels = np.empty((repetitions, n), dtype=np.int64)
    base = np.arange(n) % folds
    for r in range(repetitions):
        labels[r] = base[rng.permutation(n)]
    return labels


def _cv_task(args):
    recipe, data, train_idx, test_idx, run_seed, time_grid, chr_spec, want_ise = args
    from .synthetic import true_survival_grid  # local import keeps the dependency one-way

    try:
        model, _ = fit_recipe(recipe, data.subset(train_idx), seed=run_seed)
        test = data.subset(test_idx)
        truth = None
        if want_ise:
            truth = lambda d, ts: true_survival_grid(d.numeric, ts)  # noqa: E731
        metrics, _ = metrics_over_time(model, test, time_grid, chr_spec, ise_truth=truth)
        return None, metrics
    except Exception as exc:  # noqa: BLE001 - failures are reported, not raised
        return f"{type(exc).__name__}: {exc}", None


def cross_validate(
    data: Dataset,
    recipes,
    folds: int,
    repetitions: int,
    seed: int,
    time_grid,
    chr_spec: ChrSpec,
    threads: int = 1,
    synthetic_truth: bool = False,
):
    """Repeated k-fold cross-validation of every recipe.

    Returns (reports, failures): one :class:`EvalReport` per (recipe,
    metric) pair aggregated over repetitions x folds, and a list of
    (config, rep, fold, message) for runs that failed.  Deterministic in
    ``seed``; fold runs may execute in parallel.
    """
    if folds < 2:
        raise ConfigError("cross-validation needs at least two folds")
    if data.n < folds:
        raise ConfigError("dataset smaller than the fold count")
    time_grid = np.asarray(time_grid, dtype=np.float64)
    labels = _fold_assignments(data.n, folds, repetitions, seed)

    tasks = []
    keys = []
    for ridx, recipe in enumerate(recipes):
        for rep in range(repetitions):
            for fold in range(folds):
                test_idx = np.flatnonzero(labels[rep] == fold)
                train_idx = np.flatnonzero(labels[rep] != fold)
                run_seed = seed + 100003 * ridx + 1009 * rep + fold
                keys.append((recipe.name, rep, fold))
                tasks.append(
                    (recipe, data, train_idx, test_idx, run_seed, time_grid, chr_spec, synthetic_truth)
                )

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_cv_task, tasks))
    else:
        outcomes = [_cv_task(t) for t in tasks]

    per_config: dict[str, dict[str, list[np.ndarray]]] = {}
    failures = []
    for (name, rep, fold), (err, metrics) in zip(keys, outcomes):
        if err is not None:
            failures.append((name, rep, fold, err))
            continue
        bucket = per_config.setdefault(name, {})
        for metric, values in metrics.items():
            bucket.setdefault(metric, []).append(values)

    reports = []
    fail_counts = {}
    for name, rep, fold, _ in failures:
        fail_counts[name] = fail_counts.get(name, 0) + 1
    for name in sorted(per_config):
        for metric in sorted(per_config[name]):
            stack = np.vstack(per_config[name][metric])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                per_run_max = np.nanmax(stack, axis=1)
                per_time_mean = np.nanmean(stack, axis=0)
            per_run_max = per_run_max[np.isfinite(per_run_max)]
            runs = per_run_max.size
            mean = float(per_run_max.mean()) if runs else float("nan")
            hw = float(1.96 * per_run_max.std(ddof=1) / np.sqrt(runs)) if runs > 1 else 0.0
            reports.append(
                EvalReport(
                    metric=metric,
                    config=name,
                    times=time_grid if metric != "ise" else np.asarray([0.0]),
                    values=per_time_mean,
                    aggregate=mean,
                    half_width=hw,
                    runs=runs,
                    failures=fail_counts.get(name, 0),
                )
            )
    return reports, failures


def write_reports_csv(path, reports, chr_curves=None) -> None:
    """Long-format metrics CSV: metric, config, time, window, value."""
    with open(path, "w") as fh:
        fh.write("metric,config,time,window,value\n")
        for rep in reports:
            for t, v in zip(rep.times, rep.values):
                fh.write(f"{rep.metric},{rep.config},{t:.17g},,{v:.17g}\n")
        if chr_curves:
            for config, curves in chr_curves.items():
                for t, c in sorted(curves.items()):
                    for w, m, k in zip(c.centers, c.model_chr, c.km_chr):
                        fh.write(f"chr_model,{config},{t:.17g},{w:.17g},{m:.17g}\n")
                        fh.write(f"chr_km,{config},{t:.17g},{w:.17g},{k:.17g}\n")


def write_reports_json(path, reports, failures=()) -> None:
    """Summary mirroring a per-config table of max-over-time metric values."""
    summary: dict = {"configs": {}, "failures": [list(f) for f in failures]}
    for rep in reports:
        cfg = summary["configs"].setdefault(rep.config, {})
        cfg[rep.metric] = {
            "max_over_time": rep.aggregate,
            "half_width": rep.half_width,
            "runs": rep.runs,
            "failures": rep.failures,
        }
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
