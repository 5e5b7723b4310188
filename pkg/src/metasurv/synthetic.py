"""Two-covariate, two-risk synthetic benchmark with a ground-truth oracle.

Cause 1 couples a cosine-modulated baseline with an arctan covariate effect
that switches from x[0] to x[1] at t = 5; cause 2 uses a sine-modulated
baseline with sine effects switching from x[1] to x[0].  At exactly t = 5
both indicator windows are closed, leaving the baseline factor alone.

Event times are drawn by thinning: candidate times arrive at the constant
rate ``LAMBDA_BAR`` (which dominates both cause-specific hazards, since the
arctan and sine exponents are bounded by pi/2 and 1) and are accepted with
probability hazard/LAMBDA_BAR; the first accepted candidate across risks
wins.  Censoring is administrative at the horizon, optionally combined with
independent uniform censoring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .data import ColumnSpec, Dataset, DatasetSchema
from .errors import ConfigError, UsageError

BASE_RATE = 0.03
PERIOD = 10.0
LAMBDA_BAR = 1.5 * BASE_RATE * np.exp(0.5 * np.pi)
SWITCH_TIME = 5.0

SYNTHETIC_SCHEMA = DatasetSchema(
    columns=(ColumnSpec("x0", "numeric"), ColumnSpec("x1", "numeric")),
    event_count=2,
)


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    seed: int
    horizon: float = 10.0
    uniform_censoring: bool = False

    def __post_init__(self):
        if self.n < 0:
            raise ConfigError("sample count must be nonnegative")
        if self.horizon <= 0.0:
            raise ConfigError("horizon must be positive")


def true_hazards(t, x):
    """Cause-specific hazards (lambda_1, lambda_2); broadcasts over t and x rows."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0):
        raise UsageError("hazards are defined for nonnegative times")
    x = np.asarray(x, dtype=np.float64)
    x0, x1 = x[..., 0], x[..., 1]
    early = t < SWITCH_TIME
    late = t > SWITCH_TIME
    phase = 2.0 * np.pi * t / PERIOD
    lam1 = (
        BASE_RATE
        * (1.0 + 0.5 * np.cos(phase))
        * np.exp(np.arctan(2.0 * x0) * early + np.arctan(2.0 * x1) * late)
    )
    lam2 = (
        BASE_RATE
        * (1.0 + 0.5 * np.sin(phase))
        * np.exp(np.sin(x1) * early + np.sin(x0) * late)
    )
    return lam1, lam2


def sample_event_times(x, horizon, rng):
    """Thinning sampler: returns (first event time or inf, cause in {1, 2} or 0)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    accepted = np.full((n, 2), np.inf)
    clocks = np.zeros((n, 2))
    active = np.ones((n, 2), dtype=bool)
    while active.any():
        rows, risks = np.nonzero(active)
        clocks[rows, risks] += rng.exponential(1.0 / LAMBDA_BAR, size=rows.size)
        u = rng.uniform(size=rows.size)
        t_cand = clocks[rows, risks]
        lam1, lam2 = true_hazards(t_cand, x[rows])
        lam = np.where(risks == 0, lam1, lam2)
        beyond = t_cand > horizon
        accept = (u * LAMBDA_BAR < lam) & ~beyond
        accepted[rows[accept], risks[accept]] = t_cand[accept]
        done = accept | beyond
        active[rows[done], risks[done]] = False
    event_time = accepted.min(axis=1)
    cause = np.where(np.isinf(event_time), 0, np.argmin(accepted, axis=1) + 1)
    return event_time, cause


def sample_dataset(spec: SyntheticSpec) -> Dataset:
    """Draws covariates i.i.d. standard normal and event data by thinning."""
    rng = np.random.default_rng(spec.seed)
    x = rng.standard_normal((spec.n, 2))
    event_time, cause = sample_event_times(x, spec.horizon, rng)
    censor = np.full(spec.n, spec.horizon)
    if spec.uniform_censoring:
        censor = np.minimum(censor, rng.uniform(0.0, spec.horizon, size=spec.n))
    observed = event_time <= censor
    return Dataset(
        numeric=x,
        boolean=np.zeros((spec.n, 0)),
        categorical=np.zeros((spec.n, 0), dtype=np.int64),
        time=np.where(observed, event_time, censor),
        event_type=np.where(observed, cause, 0),
        event=observed.astype(np.int64),
        event_count=2,
    )


def _total_hazard(x):
    def integrand(u):
        lam1, lam2 = true_hazards(u, x)
        return float(lam1 + lam2)

    return integrand


def true_survival(t, x) -> float:
    """Oracle S(t, x) by adaptive quadrature of the total hazard (abs tol 1e-9)."""
    t = float(t)
    if t < 0.0:
        raise UsageError("time must be nonnegative")
    if t == 0.0:
        return 1.0
    x = np.asarray(x, dtype=np.float64)
    kwargs = {"points": [SWITCH_TIME]} if t > SWITCH_TIME else {}
    total, _ = quad(_total_hazard(x), 0.0, t, epsabs=1e-9, limit=200, **kwargs)
    return float(np.exp(-total))


def true_survival_grid(x, times) -> np.ndarray:
    """Oracle survival matrix (n, m) on a shared time grid.

    Integrates the total hazard cell by cell (splitting at the effect
    switch) and accumulates, so each row costs one quadrature per grid cell.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    times = np.asarray(times, dtype=np.float64)
    if np.any(times < 0.0) or np.any(np.diff(times) <= 0.0):
        raise UsageError("grid times must be nonnegative and increasing")
    prepended = times[0] > 0.0
    edges = np.concatenate([[0.0], times]) if prepended else times
    out = np.empty((x.shape[0], times.size))
    for i in range(x.shape[0]):
        integrand = _total_hazard(x[i])
        incs = np.empty(edges.size - 1)
        for c, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
            kwargs = {"points": [SWITCH_TIME]} if a < SWITCH_TIME < b else {}
            incs[c], _ = quad(integrand, a, b, epsabs=1e-9, limit=200, **kwargs)
        surv = np.exp(-np.cumsum(incs))
        out[i] = surv if prepended else np.concatenate([[1.0], surv])
    return out
