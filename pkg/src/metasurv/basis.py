"""Time-basis sets over a knot grid.

A :class:`BasisSet` bundles a strictly increasing knot grid with a family
kind (piecewise-constant indicators or piecewise-linear hats) and exposes
pointwise evaluation, exact integration from zero, and the inverse of a
nonnegatively weighted integral.  Beyond the last knot the last basis
function holds its boundary value 1, so weighted integrals grow without
bound whenever the tail weight is positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, DomainError, UsageError

CONSTANT = "constant"
LINEAR = "linear"
KINDS = (CONSTANT, LINEAR)


@dataclass(frozen=True)
class KnotGrid:
    knots: np.ndarray

    def __post_init__(self):
        k = np.ascontiguousarray(np.asarray(self.knots, dtype=np.float64))
        if k.ndim != 1 or k.size < 2:
            raise ConfigError("knot grid needs at least two knots")
        if not np.all(np.isfinite(k)):
            raise ConfigError("knots must be finite")
        if k[0] < 0.0:
            raise ConfigError("knot grid must start at a nonnegative value")
        if np.any(np.diff(k) <= 0.0):
            raise ConfigError("knots must be strictly increasing")
        object.__setattr__(self, "knots", k)

    @property
    def interval_count(self) -> int:
        return self.knots.size - 1


@dataclass(frozen=True)
class BasisSet:
    grid: KnotGrid
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown basis kind {self.kind!r}")

    @property
    def size(self) -> int:
        """Number of basis functions (K for constant, K+1 for linear)."""
        k = self.grid.interval_count
        return k if self.kind == CONSTANT else k + 1

    def _times(self, t) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if np.any(ts < 0.0) or not np.all(np.isfinite(ts)):
            raise UsageError("basis queries require finite nonnegative times")
        return np.ascontiguousarray(ts)

    def evaluate(self, t):
        """Basis values at ``t``; scalar in, vector out; batch in, matrix out."""
        ts = self._times(t)
        fn = _kernels.pwc_values if self.kind == CONSTANT else _kernels.pwl_values
        out = fn(self.grid.knots, ts)
        return out[0] if np.isscalar(t) or np.ndim(t) == 0 else out

    def integrate(self, t):
        """Exact integrals of each basis function over [0, t]."""
        ts = self._times(t)
        fn = _kernels.pwc_integrals if self.kind == CONSTANT else _kernels.pwl_integrals
        out = fn(self.grid.knots, ts)
        return out[0] if np.isscalar(t) or np.ndim(t) == 0 else out

    def integrand_slope(self, weights, t):
        """Right derivative of sum_k w_k nu_k at ``t`` (batched).

        Zero for the constant family and beyond the grid; inside interval i
        of the linear family it is (w_{i+1} - w_i) / width_i.
        """
        ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
        w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
        if self.kind == CONSTANT:
            return np.zeros(ts.shape[0])
        knots = self.grid.knots
        idx = np.searchsorted(knots, ts, side="right") - 1
        inside = (idx >= 0) & (idx < knots.size - 1)
        out = np.zeros(ts.shape[0])
        rows = np.flatnonzero(inside)
        if rows.size:
            i = idx[rows]
            out[rows] = (w[rows, i + 1] - w[rows, i]) / (knots[i + 1] - knots[i])
        return out

    def inverse_weighted_integral(self, weights, target):
        """Smallest t with sum_k weights_k * integral_0^t nu_k = target."""
        w = np.asarray(weights, dtype=np.float64)
        out = self.invert_weighted(w[None, :], np.asarray([target], dtype=np.float64))
        return float(out[0])

    def invert_weighted(self, weights, targets):
        """Row-wise inverse of the weighted integral (batched).

        ``weights`` is (n, size) nonnegative, ``targets`` (n,) nonnegative.
        Raises :class:`DomainError` naming the attainable supremum when a
        target exceeds the total mass of a row with zero tail weight.
        """
        w = np.ascontiguousarray(np.asarray(weights, dtype=np.float64))
        tg = np.ascontiguousarray(np.asarray(targets, dtype=np.float64))
        if w.ndim != 2 or w.shape[1] != self.size or w.shape[0] != tg.shape[0]:
            raise UsageError("weights must be (n, size) matching targets (n,)")
        if np.any(w < 0.0):
            raise UsageError("weights must be nonnegative")
        if np.any(tg < 0.0) or not np.all(np.isfinite(tg)):
            raise UsageError("targets must be finite and nonnegative")
        fn = _kernels.pwc_invert if self.kind == CONSTANT else _kernels.pwl_invert
        out = fn(self.grid.knots, w, tg)
        bad = np.isnan(out)
        if np.any(bad):
            row = int(np.flatnonzero(bad)[0])
            sup = float(self._total_mass(w[row]))
            raise DomainError(
                f"target {tg[row]:g} unreachable: zero tail weight limits the "
                f"weighted integral to {sup:g}",
                supremum=sup,
            )
        return out

    def _total_mass(self, w) -> float:
        widths = np.diff(self.grid.knots)
        if self.kind == CONSTANT:
            return float(np.sum(w * widths))
        return float(np.sum(0.5 * (w[:-1] + w[1:]) * widths))


def make_basis(kind: str, knots) -> BasisSet:
    return BasisSet(grid=KnotGrid(np.asarray(knots, dtype=np.float64)), kind=kind)


# Default grids for the two-risk simulation benchmark: time knots every two
# units on [0, 10]; the quantile-model grid lives on the -log(tau) axis with
# the origin prepended.
def default_time_knots(horizon: float = 10.0, spacing: float = 2.0) -> np.ndarray:
    return np.arange(0.0, horizon + 0.5 * spacing, spacing)


DEFAULT_QUANTILE_KNOTS = np.asarray([0.0, 0.01, 0.03, 0.06, 0.1, 0.2])
