"""Model families that compose network outputs with time bases.

Three variants share one structure: a covariate network emits one raw
output per basis coefficient and per event type, a strictly positive map
``h`` turns raw outputs into nonnegative coefficients, and a basis set per
event type spreads those coefficients over time.

* proportional-hazards ("ph"): the coefficient expansion is a
  time-dependent hazard ratio multiplying a nonparametric step baseline,
* quantile-regression ("qr"): the expansion is the integrand of the
  quantile function on the u = -log(tau) axis,
* direct-hazard ("dh"): the expansion is the cause-specific hazard itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .basis import BasisSet
from .errors import ConfigError, StateError, UsageError
from .network import EVAL, NetworkParams, forward

PH = "ph"
QR = "qr"
DH = "dh"
MODEL_KINDS = (PH, QR, DH)

_EXP_CLAMP = 30.0


@dataclass(frozen=True)
class PositivityMap:
    """Strictly positive monotone map applied to raw network outputs."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("exp", "softplus"):
            raise ConfigError(f"unknown positivity map {self.kind!r}")

    def __call__(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "exp":
            return np.exp(np.clip(y, -_EXP_CLAMP, _EXP_CLAMP))
        return np.log1p(np.exp(-np.abs(y))) + np.maximum(y, 0.0)

    def derivative(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "exp":
            inside = np.abs(y) < _EXP_CLAMP
            return np.exp(np.clip(y, -_EXP_CLAMP, _EXP_CLAMP)) * inside
        return expit(y)


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step map of time; ``values[i]`` holds on [times[i], times[i+1])."""

    times: np.ndarray
    values: np.ndarray
    initial: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.shape != v.shape or t.ndim != 1:
            raise UsageError("times and values must be matching 1-d arrays")
        if t.size and np.any(np.diff(t) <= 0.0):
            raise UsageError("step times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_increments(cls, times, increments, initial: float = 0.0) -> "StepFunction":
        """Cumulative step function from jump locations and nonnegative jumps."""
        times = np.asarray(times, dtype=np.float64)
        increments = np.asarray(increments, dtype=np.float64)
        if np.any(increments < 0.0):
            raise UsageError("increments must be nonnegative")
        order = np.argsort(times, kind="stable")
        times, increments = times[order], increments[order]
        distinct, start = np.unique(times, return_index=True)
        summed = np.add.reduceat(increments, start) if times.size else increments
        return cls(times=distinct, values=initial + np.cumsum(summed), initial=initial)

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if not self.times.size:
            out = np.full(t.shape, self.initial)
        else:
            idx = np.searchsorted(self.times, t, side="right") - 1
            out = np.where(idx >= 0, self.values[np.maximum(idx, 0)], self.initial)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BaselineHazard:
    """Cumulative baseline hazard of one event type, with a fast query path.

    ``cum_basis[i]`` is the running sum over jump rows <= i of
    (jump size) * (basis values at the jump time), so the model cumulative
    hazard at time t is a dot product with the subject's coefficients after
    one binary search.  An infinite terminal jump is kept separately.
    """

    step: StepFunction
    jump_times: np.ndarray  # finite jumps, ascending, may repeat
    jump_sizes: np.ndarray  # increment at each jump row
    cum_basis: np.ndarray  # (len(jump_times), basis size)
    infinite_from: float | None = None

    def cum_basis_at(self, times) -> tuple[np.ndarray, np.ndarray]:
        """Returns (cum basis rows (m, K), infinite mask (m,)) for query times."""
        t = np.atleast_1d(np.asarray(times, dtype=np.float64))
        k = self.cum_basis.shape[1] if self.cum_basis.size else 0
        idx = np.searchsorted(self.jump_times, t, side="right") - 1
        rows = np.zeros((t.shape[0], k))
        got = idx >= 0
        if self.cum_basis.size:
            rows[got] = self.cum_basis[idx[got]]
        infinite = np.zeros(t.shape[0], dtype=bool)
        if self.infinite_from is not None:
            infinite = t >= self.infinite_from
        return rows, infinite


def _knot_count_checks(output_count: int, bases) -> None:
    total = sum(b.size for b in bases)
    if output_count != total:
        raise ConfigError(
            f"network output count {output_count} must equal the total basis size {total}"
        )


@dataclass(frozen=True)
class MnnModel:
    params: NetworkParams
    bases: tuple[BasisSet, ...]
    positivity: PositivityMap

    def __post_init__(self):
        object.__setattr__(self, "bases", tuple(self.bases))
        if not self.bases:
            raise ConfigError("a model needs at least one event type")
        _knot_count_checks(self.params.spec.output_count, self.bases)

    @property
    def event_count(self) -> int:
        return len(self.bases)

    def output_slices(self) -> list[slice]:
        slices, offset = [], 0
        for b in self.bases:
            slices.append(slice(offset, offset + b.size))
            offset += b.size
        return slices

    def coefficients(self, numeric, boolean, categorical, mode=EVAL, rng=None):
        """Positive per-event coefficient blocks h(raw outputs); list of (n, K_j)."""
        raw, _ = forward(self.params, numeric, boolean, categorical, mode=mode, rng=rng)
        return [self.positivity(raw[:, s]) for s in self.output_slices()]


@dataclass(frozen=True)
class PhMnnModel(MnnModel):
    baseline: tuple[BaselineHazard, ...] | None = None

    def with_baseline(self, baseline) -> "PhMnnModel":
        return PhMnnModel(
            params=self.params,
            bases=self.bases,
            positivity=self.positivity,
            baseline=tuple(baseline),
        )


@dataclass(frozen=True)
class QrMnnModel(MnnModel):
    pass


@dataclass(frozen=True)
class DhMnnModel(MnnModel):
    pass


def _as_batch(x):
    """Accepts a SurvivalRecord-like object or a covariate triple."""
    if hasattr(x, "covariates"):
        return x.covariates()
    if hasattr(x, "numeric"):
        return (
            np.atleast_2d(x.numeric),
            np.atleast_2d(x.boolean),
            np.atleast_2d(np.asarray(x.categorical, dtype=np.int64)),
        )
    numeric, boolean, categorical = x
    return np.atleast_2d(numeric), np.atleast_2d(boolean), np.atleast_2d(categorical)


def _check_time(t) -> float:
    t = float(t)
    if not np.isfinite(t) or t < 0.0:
        raise UsageError("time must be finite and nonnegative")
    return t


def ph_hazard_ratio(model: PhMnnModel, x, t, mode=EVAL, rng=None) -> np.ndarray:
    """Time-dependent hazard ratio per event type; (n, J)."""
    t = _check_time(t)
    coefs = model.coefficients(*_as_batch(x), mode=mode, rng=rng)
    cols = [c @ b.evaluate(t) for c, b in zip(coefs, model.bases)]
    return np.stack(cols, axis=1)


def ph_cumulative_hazard(model: PhMnnModel, x, t) -> np.ndarray:
    """Stieltjes sum of the hazard ratio against the step baseline; (n, J)."""
    t = _check_time(t)
    if model.baseline is None:
        raise StateError("baseline hazard has not been estimated yet")
    coefs = model.coefficients(*_as_batch(x))
    cols = []
    for c, base in zip(coefs, model.baseline):
        rows, infinite = base.cum_basis_at([t])
        lam = c @ rows[0]
        if infinite[0]:
            lam = np.full_like(lam, np.inf)
        cols.append(lam)
    return np.stack(cols, axis=1)


def qr_quantile(model: QrMnnModel, x, tau, event: int) -> np.ndarray:
    """Cause-specific quantile at survival level ``tau``.

    The returned time satisfies Lambda_event(t, x) = -log(tau); it is
    strictly increasing in -log(tau).
    """
    tau = float(tau)
    if not (0.0 < tau < 1.0):
        raise UsageError("tau must lie strictly inside (0, 1)")
    _check_event(model, event)
    coefs = model.coefficients(*_as_batch(x))[event - 1]
    integrals = model.bases[event - 1].integrate(-np.log(tau))
    return coefs @ integrals


def _check_event(model, event: int) -> None:
    if not (1 <= int(event) <= model.event_count):
        raise UsageError(f"event type must lie in 1..{model.event_count}")


def qr_cumulative_hazard(model: QrMnnModel, x, t, event: int | None = None) -> np.ndarray:
    """Inverts the weighted quantile integral; (n,) for one event or (n, J)."""
    t = _check_time(t)
    coefs = model.coefficients(*_as_batch(x))
    events = range(1, model.event_count + 1) if event is None else [int(event)]
    cols = []
    for j in events:
        _check_event(model, j)
        c = coefs[j - 1]
        targets = np.full(c.shape[0], t)
        cols.append(model.bases[j - 1].invert_weighted(c, targets))
    out = np.stack(cols, axis=1)
    return out[:, 0] if event is not None else out


def qr_hazard(model: QrMnnModel, x, t, event: int | None = None) -> np.ndarray:
    """Hazard recovered from the quantile map: reciprocal slope at the inversion point."""
    t = _check_time(t)
    coefs = model.coefficients(*_as_batch(x))
    events = range(1, model.event_count + 1) if event is None else [int(event)]
    cols = []
    for j in events:
        _check_event(model, j)
        c = coefs[j - 1]
        b = model.bases[j - 1]
        ustar = b.invert_weighted(c, np.full(c.shape[0], t))
        slope = (c * b.evaluate(ustar)).sum(axis=1)
        cols.append(1.0 / slope)
    out = np.stack(cols, axis=1)
    return out[:, 0] if event is not None else out


def dh_hazard(model: DhMnnModel, x, t, mode=EVAL, rng=None) -> np.ndarray:
    """Cause-specific hazard as a direct basis expansion; (n, J)."""
    t = _check_time(t)
    coefs = model.coefficients(*_as_batch(x), mode=mode, rng=rng)
    cols = [c @ b.evaluate(t) for c, b in zip(coefs, model.bases)]
    return np.stack(cols, axis=1)


def dh_cumulative_hazard(model: DhMnnModel, x, t) -> np.ndarray:
    """Closed-form integral of the direct hazard; (n, J)."""
    t = _check_time(t)
    coefs = model.coefficients(*_as_batch(x))
    cols = [c @ b.integrate(t) for c, b in zip(coefs, model.bases)]
    return np.stack(cols, axis=1)


def cumulative_hazard(model, x, t) -> np.ndarray:
    if isinstance(model, PhMnnModel):
        return ph_cumulative_hazard(model, x, t)
    if isinstance(model, QrMnnModel):
        return qr_cumulative_hazard(model, x, t)
    if isinstance(model, DhMnnModel):
        return dh_cumulative_hazard(model, x, t)
    raise UsageError(f"not a model: {type(model).__name__}")


def survival(model, x, t) -> np.ndarray:
    """S(t, x) = exp(-sum of cause-specific cumulative hazards); (n,)."""
    lam = cumulative_hazard(model, x, t)
    return np.exp(-lam.sum(axis=1))


def survival_curve(model, x, times) -> np.ndarray:
    """Survival over a whole time grid; (n, m).  Vectorized per model kind."""
    times = np.asarray(times, dtype=np.float64)
    if np.any(times < 0.0):
        raise UsageError("grid times must be nonnegative")
    batch = _as_batch(x)
    coefs = model.coefficients(*batch)
    n = coefs[0].shape[0]
    total = np.zeros((n, times.size))
    if isinstance(model, DhMnnModel):
        for c, b in zip(coefs, model.bases):
            total += c @ b.integrate(times).T
    elif isinstance(model, QrMnnModel):
        for c, b in zip(coefs, model.bases):
            w = np.repeat(c, times.size, axis=0)
            tg = np.tile(times, n)
            total += b.invert_weighted(w, tg).reshape(n, times.size)
    elif isinstance(model, PhMnnModel):
        if model.baseline is None:
            raise StateError("baseline hazard has not been estimated yet")
        for c, base in zip(coefs, model.baseline):
            rows, infinite = base.cum_basis_at(times)
            lam = c @ rows.T
            lam[:, infinite] = np.inf
            total += lam
    else:
        raise UsageError(f"not a model: {type(model).__name__}")
    return np.exp(-total)
