"""Training procedures and nonparametric estimators.

The proportional-hazards variant is trained on the partial likelihood with
two independent mini-batches: a general batch approximating risk-set sums
and an uncensored batch supplying the event terms; each risk-set sum is
replaced by the average over at-risk members of the general batch rescaled
by the true risk-set size, so full-size batches reproduce the full-batch
objective and gradient exactly.  The quantile and direct-hazard variants
maximize the censored competing-risks log-likelihood with plain
mini-batches.  All objectives are maximized with Adam under a global
gradient-norm clip.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .basis import make_basis
from .data import Dataset
from .errors import ConfigError, DataError, EstimationError, UsageError
from .models import (
    DH,
    PH,
    QR,
    BaselineHazard,
    DhMnnModel,
    PhMnnModel,
    PositivityMap,
    QrMnnModel,
    StepFunction,
)
from .network import EVAL, TRAIN, GradientBuffer, NetworkSpec, backward, forward, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    step_size: float = 1e-3
    final_step_size: float | None = None  # linear decay target; None keeps it constant
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 256
    event_batch_size: int = 128
    clip_norm: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.step_size <= 0.0:
            raise ConfigError("step size must be positive")
        if self.final_step_size is not None and self.final_step_size <= 0.0:
            raise ConfigError("final step size must be positive")
        if self.batch_size < 1 or self.event_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("moment decays must lie in [0, 1)")
        if self.clip_norm <= 0.0:
            raise ConfigError("clip norm must be positive")

    def step_at(self, iteration: int) -> float:
        if self.final_step_size is None or self.iterations <= 1:
            return self.step_size
        frac = iteration / (self.iterations - 1)
        return self.step_size + (self.final_step_size - self.step_size) * frac


class AdamState:
    """Adaptive-moment ascent on the parameter arrays, updated in place."""

    def __init__(self, params):
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def ascend(self, params, grads: GradientBuffer, config: TrainConfig) -> None:
        garrays = grads.arrays()
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in garrays))
        scale = config.clip_norm / norm if norm > config.clip_norm else 1.0
        step = config.step_at(self.t)
        self.t += 1
        correction1 = 1.0 - config.beta1**self.t
        correction2 = 1.0 - config.beta2**self.t
        for p, g, m, v in zip(params.arrays(), garrays, self.m, self.v):
            g = g * scale
            m *= config.beta1
            m += (1.0 - config.beta1) * g
            v *= config.beta2
            v += (1.0 - config.beta2) * g * g
            p += step * (m / correction1) / (np.sqrt(v / correction2) + config.epsilon)


def _event_mask(data: Dataset, event_type: int) -> np.ndarray:
    return (data.event == 1) & (data.event_type == event_type)


# ---------------------------------------------------------------------------
# partial likelihood (proportional-hazards variant)
# ---------------------------------------------------------------------------


def cox_objective(model: PhMnnModel, data: Dataset, mode=EVAL, rng=None):
    """Full-batch normalized partial log-likelihood and its gradient.

    Risk-set sums are folded with per-basis suffix accumulations over the
    time-sorted data, so the cost is O(n (K + log n)) plus one network pass.
    """
    if data.n == 0:
        raise DataError("empty dataset")
    raw, tape = forward(model.params, *data.covariates(), mode=mode, rng=rng)
    slices = model.output_slices()
    order = np.argsort(-data.time, kind="stable")
    times_desc = np.ascontiguousarray(data.time[order])

    total = 0.0
    n_events = 0
    cot_raw = np.zeros_like(raw)
    for j in range(1, model.event_count + 1):
        basis = model.bases[j - 1]
        sl = slices[j - 1]
        is_event = np.ascontiguousarray(_event_mask(data, j)[order])
        if not is_event.any():
            continue
        coefs = model.positivity(raw[:, sl])
        hmat = np.ascontiguousarray(coefs[order])
        numat = np.ascontiguousarray(basis.evaluate(times_desc))
        denoms, own = _kernels.cox_risk_terms(times_desc, hmat, numat, is_event)
        ev = is_event.astype(bool)
        total += float(np.sum(np.log(own[ev]) - np.log(denoms[ev])))
        n_events += int(ev.sum())
        cot_desc = _kernels.cox_risk_cotangents(times_desc, hmat, numat, is_event, denoms)
        cot_h = np.empty_like(cot_desc)
        cot_h[order] = cot_desc
        cot_raw[:, sl] = cot_h * model.positivity.derivative(raw[:, sl])
    if n_events == 0:
        raise EstimationError("partial likelihood undefined: no uncensored subjects")
    value = total / n_events
    grad = backward(model.params, tape, cot_raw / n_events)
    return value, grad


def cox_partial_loglik(model: PhMnnModel, data: Dataset) -> float:
    """Partial log-likelihood normalized by the number of uncensored subjects."""
    value, _ = cox_objective(model, data)
    return value


def _cox_minibatch_objective(model: PhMnnModel, data: Dataset, idx_general, idx_events, mode, rng):
    """Dual mini-batch estimate of the partial likelihood and its gradient.

    ``idx_general`` indexes the risk-set batch, ``idx_events`` the
    uncensored batch.  Event subjects whose risk set does not intersect the
    general batch are skipped (and logged); the loss is averaged over the
    contributing event subjects.
    """
    idx1 = np.asarray(idx_general, dtype=np.int64)
    idx2 = np.asarray(idx_events, dtype=np.int64)
    if idx1.size == 0 or idx2.size == 0:
        raise UsageError("both mini-batches must be nonempty")
    if np.any(data.event[idx2] != 1):
        raise UsageError("the event batch may contain only uncensored subjects")

    raw1, tape1 = forward(
        model.params, data.numeric[idx1], data.boolean[idx1], data.categorical[idx1], mode=mode, rng=rng
    )
    raw2, tape2 = forward(
        model.params, data.numeric[idx2], data.boolean[idx2], data.categorical[idx2], mode=mode, rng=rng
    )
    t1 = data.time[idx1]
    t2 = data.time[idx2]
    slices = model.output_slices()

    total = 0.0
    used = 0
    skipped = 0
    cot1 = np.zeros_like(raw1)
    cot2 = np.zeros_like(raw2)
    for j in range(1, model.event_count + 1):
        rows = np.flatnonzero(data.event_type[idx2] == j)
        if rows.size == 0:
            continue
        sl = slices[j - 1]
        basis = model.bases[j - 1]
        c1 = model.positivity(raw1[:, sl])
        c2 = model.positivity(raw2[rows][:, sl])
        te = t2[rows]
        nu = basis.evaluate(te)  # (e, K)
        own = (c2 * nu).sum(axis=1)

        pair = nu @ c1.T  # hazard ratios of batch-1 members at each event time
        at_risk = t1[None, :] >= te[:, None]
        counts = at_risk.sum(axis=1)
        good = counts > 0
        if not good.all():
            skipped += int((~good).sum())
            log.warning(
                "risk set of %d event subject(s) misses the general batch; skipped", int((~good).sum())
            )
        if not good.any():
            continue
        risk_full = data.risk_counts(te[good]).astype(np.float64)
        masked = np.where(at_risk[good], pair[good], 0.0)
        means = masked.sum(axis=1) / counts[good]
        denoms = risk_full * means
        total += float(np.sum(np.log(own[good]) - np.log(denoms)))
        used += int(good.sum())

        # d/d(own coefficients): nu / own per contributing event row
        drows = rows[good]
        cot2[drows, sl.start : sl.stop] += nu[good] / own[good][:, None]
        # d/d(batch-1 coefficients): -(mask^T) (R/(count*denom)) nu
        alpha = risk_full / (counts[good] * denoms)
        cot1[:, sl.start : sl.stop] += -(at_risk[good].T.astype(np.float64) @ (nu[good] * alpha[:, None]))

    if used == 0:
        log.warning("no event subject had an at-risk partner; zero-gradient step")
        return 0.0, GradientBuffer.zeros_like(model.params), skipped

    value = total / used
    for sl in slices:
        cot1[:, sl] *= model.positivity.derivative(raw1[:, sl])
        cot2[:, sl] *= model.positivity.derivative(raw2[:, sl])
    grad = backward(model.params, tape1, cot1 / used)
    grad.add(backward(model.params, tape2, cot2 / used))
    return value, grad, skipped


def cox_minibatch_step(model: PhMnnModel, data: Dataset, config: TrainConfig, rng, opt: AdamState):
    """Samples the two batches, applies one Adam update, returns the loss estimate."""
    uncensored = np.flatnonzero(data.event == 1)
    if uncensored.size == 0:
        raise EstimationError("no uncensored subjects to sample the event batch from")
    if config.batch_size > data.n:
        raise UsageError("batch size exceeds the dataset size")
    idx1 = rng.choice(data.n, size=config.batch_size, replace=False)
    idx2 = rng.choice(uncensored, size=min(config.event_batch_size, uncensored.size), replace=False)
    value, grad, _ = _cox_minibatch_objective(model, data, idx1, idx2, TRAIN, rng)
    opt.ascend(model.params, grad, config)
    return value


# ---------------------------------------------------------------------------
# extended Kalbfleisch-Prentice baseline
# ---------------------------------------------------------------------------


def kalbfleisch_prentice_baseline(model: PhMnnModel, data: Dataset):
    """Per-event cumulative baseline hazards from the fitted hazard ratios.

    Jumps sit at uncensored times; tied times share one risk set.  A jump
    whose risk-set ratio reaches 1 (last subject is an event) becomes an
    absorbing infinite jump.  Runs the network in eval mode.
    """
    if data.n == 0:
        raise DataError("empty dataset")
    raw, _ = forward(model.params, *data.covariates())
    slices = model.output_slices()
    order = np.argsort(-data.time, kind="stable")
    times_desc = np.ascontiguousarray(data.time[order])

    baselines = []
    for j in range(1, model.event_count + 1):
        basis = model.bases[j - 1]
        is_event = np.ascontiguousarray(_event_mask(data, j)[order])
        if not is_event.any():
            empty = StepFunction(times=np.empty(0), values=np.empty(0))
            baselines.append(
                BaselineHazard(
                    step=empty,
                    jump_times=np.empty(0),
                    jump_sizes=np.empty(0),
                    cum_basis=np.empty((0, basis.size)),
                )
            )
            continue
        coefs = model.positivity(raw[:, slices[j - 1]])
        hmat = np.ascontiguousarray(coefs[order])
        numat = np.ascontiguousarray(basis.evaluate(times_desc))
        denoms, own = _kernels.cox_risk_terms(times_desc, hmat, numat, is_event)
        ev = is_event.astype(bool)
        ratio = np.minimum(own[ev] / denoms[ev], 1.0)
        with np.errstate(divide="ignore"):
            jumps = -np.log1p(-ratio) / own[ev]
        etimes = times_desc[ev]

        asc = np.argsort(etimes, kind="stable")
        etimes, jumps = etimes[asc], jumps[asc]
        nus = numat[ev][asc]
        finite = np.isfinite(jumps)
        infinite_from = float(etimes[~finite][0]) if (~finite).any() else None
        step = StepFunction.from_increments(etimes, jumps)
        cum_basis = np.cumsum(jumps[finite][:, None] * nus[finite], axis=0)
        baselines.append(
            BaselineHazard(
                step=step,
                jump_times=etimes[finite],
                jump_sizes=jumps[finite],
                cum_basis=cum_basis,
                infinite_from=infinite_from,
            )
        )
    return tuple(baselines)


# ---------------------------------------------------------------------------
# full censored competing-risks likelihood (quantile and direct variants)
# ---------------------------------------------------------------------------


def _full_objective(model, data: Dataset, idx, mode, rng):
    """Mean log-likelihood over ``idx`` rows and its gradient."""
    idx = np.arange(data.n) if idx is None else np.asarray(idx, dtype=np.int64)
    n = idx.size
    if n == 0:
        raise DataError("empty dataset")
    raw, tape = forward(
        model.params, data.numeric[idx], data.boolean[idx], data.categorical[idx], mode=mode, rng=rng
    )
    slices = model.output_slices()
    times = data.time[idx]
    value = 0.0
    cot_raw = np.zeros_like(raw)
    for j in range(1, model.event_count + 1):
        sl = slices[j - 1]
        basis = model.bases[j - 1]
        coefs = model.positivity(raw[:, sl])
        rows = np.flatnonzero((data.event[idx] == 1) & (data.event_type[idx] == j))
        if isinstance(model, DhMnnModel):
            integ = basis.integrate(times)
            value -= float(np.sum(coefs * integ))
            cot = -integ
            if rows.size:
                nu = basis.evaluate(times[rows])
                lam = (coefs[rows] * nu).sum(axis=1)
                if np.any(lam <= 0.0):
                    bad = int(idx[rows[np.argmax(lam <= 0.0)]])
                    raise EstimationError(
                        f"hazard is zero at the observed event of record {bad}; "
                        "the basis grid does not cover its time"
                    )
                value += float(np.sum(np.log(lam)))
                cot[rows] += nu / lam[:, None]
        elif isinstance(model, QrMnnModel):
            ustar = basis.invert_weighted(coefs, times)
            integ = basis.integrate(ustar)
            nu_u = basis.evaluate(ustar)
            g = (coefs * nu_u).sum(axis=1)
            value -= float(np.sum(ustar))
            cot = integ / g[:, None]
            if rows.size:
                slope = basis.integrand_slope(coefs, ustar)[rows]
                gev = g[rows]
                value -= float(np.sum(np.log(gev)))
                cot[rows] += (
                    -nu_u[rows] / gev[:, None] + slope[:, None] * integ[rows] / (gev**2)[:, None]
                )
        else:
            raise UsageError("full likelihood applies to quantile and direct-hazard models")
        cot_raw[:, sl] = cot * model.positivity.derivative(raw[:, sl])
    grad = backward(model.params, tape, cot_raw / n)
    return value / n, grad


def full_loglik(model, data: Dataset) -> float:
    """Censored competing-risks log-likelihood averaged over the dataset."""
    value, _ = _full_objective(model, data, None, EVAL, None)
    return value


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def make_model(kind: str, params, bases, positivity: str = "exp"):
    cls = {PH: PhMnnModel, QR: QrMnnModel, DH: DhMnnModel}.get(kind)
    if cls is None:
        raise ConfigError(f"unknown model kind {kind!r}")
    return cls(params=params, bases=tuple(bases), positivity=PositivityMap(positivity))


def train(
    kind: str,
    spec: NetworkSpec,
    bases,
    data: Dataset,
    config: TrainConfig,
    positivity: str = "exp",
):
    """Fits a model of the requested kind; returns (model, objective trace).

    Deterministic given ``config.seed``.  The proportional-hazards variant
    finishes by estimating the baseline on the full dataset in eval mode.
    Aborts with the partial trace attached if the objective turns
    non-finite.
    """
    if data.n == 0:
        raise DataError("empty dataset")
    rng = np.random.default_rng(config.seed)
    params = init_params(spec, seed=config.seed)
    model = make_model(kind, params, bases, positivity)

    opt = AdamState(params)
    trace = np.empty(config.iterations)
    uncensored = np.flatnonzero(data.event == 1)
    if kind == PH and uncensored.size == 0:
        raise EstimationError("cannot fit a proportional-hazards model without events")

    batch = min(config.batch_size, data.n)
    event_batch = min(config.event_batch_size, uncensored.size) if uncensored.size else 0
    for it in range(config.iterations):
        if kind == PH:
            idx1 = rng.choice(data.n, size=batch, replace=False)
            idx2 = rng.choice(uncensored, size=event_batch, replace=False)
            value, grad, _ = _cox_minibatch_objective(model, data, idx1, idx2, TRAIN, rng)
        else:
            idx = rng.choice(data.n, size=batch, replace=False)
            value, grad = _full_objective(model, data, idx, TRAIN, rng)
        if not np.isfinite(value):
            raise EstimationError(
                f"objective diverged at iteration {it}", trace=trace[:it].copy()
            )
        opt.ascend(params, grad, config)
        trace[it] = value

    if kind == PH:
        model = model.with_baseline(kalbfleisch_prentice_baseline(model, data))
    return model, trace


@dataclass(frozen=True)
class FitRecipe:
    """Everything needed to fit one model configuration on a dataset.

    Recipes are plain data (picklable) so cross-validation folds can run in
    worker processes.  The same knot grid is used for every event type.
    """

    name: str
    kind: str
    knots: tuple[float, ...]
    basis_kind: str = "linear"
    hidden_widths: tuple[int, ...] = (100, 100)
    hidden_dropout: float = 0.1
    embedding_width: int = 10
    embedding_dropout: float = 0.7
    categorical_cardinalities: tuple[int, ...] = ()
    positivity: str = "exp"
    train: TrainConfig = TrainConfig(iterations=1000)


def fit_recipe(recipe: FitRecipe, data: Dataset, seed: int | None = None):
    """Builds the network spec from the data dimensions and trains the model."""
    config = recipe.train if seed is None else replace(recipe.train, seed=seed)
    bases = tuple(
        make_basis(recipe.basis_kind, recipe.knots) for _ in range(data.event_count)
    )
    spec = NetworkSpec(
        numeric_inputs=data.numeric.shape[1],
        boolean_inputs=data.boolean.shape[1],
        categorical_cardinalities=recipe.categorical_cardinalities,
        embedding_width=recipe.embedding_width,
        embedding_dropout=recipe.embedding_dropout,
        hidden_widths=recipe.hidden_widths,
        hidden_dropout=recipe.hidden_dropout,
        output_count=sum(b.size for b in bases),
    )
    return train(recipe.kind, spec, bases, data, config, recipe.positivity)


# ---------------------------------------------------------------------------
# Kaplan-Meier product-limit estimator
# ---------------------------------------------------------------------------


def kaplan_meier(data: Dataset, event_type: int | None = None) -> StepFunction:
    """Product-limit survival curve; ties grouped, right-continuous.

    With ``event_type`` given, only events of that type count as events;
    everything else (censoring and competing events) leaves the risk set
    without a survival drop.
    """
    if data.n == 0:
        raise DataError("empty dataset")
    is_event = data.event == 1
    if event_type is not None:
        is_event = is_event & (data.event_type == event_type)
    if not is_event.any():
        return StepFunction(times=np.empty(0), values=np.empty(0), initial=1.0)
    etimes = data.time[is_event]
    distinct, counts = np.unique(etimes, return_counts=True)
    at_risk = data.risk_counts(distinct)
    factors = 1.0 - counts / at_risk
    return StepFunction(times=distinct, values=np.cumprod(factors), initial=1.0)


def export_trace_csv(path, trace) -> None:
    """Loss trace as two CSV columns: iteration, objective."""
    with open(path, "w") as fh:
        fh.write("iteration,objective\n")
        for i, v in enumerate(np.asarray(trace)):
            fh.write(f"{i},{v:.17g}\n")
