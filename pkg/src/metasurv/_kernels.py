"""Hot numeric kernels with paired numba and pure-numpy implementations.

Every kernel exists twice: a ``*_nb`` version compiled with ``numba.njit``
and a ``*_np`` version written in vectorized numpy.  The active backend is
chosen once at import time:

* ``METASURV_NUMBA=0`` forces the numpy path,
* ``METASURV_NUMBA=1`` requires numba and fails loudly if it is missing,
* unset: numba is used when importable, numpy otherwise.

Both paths accumulate in the same order, so results agree to the last few
ulps; ``benchmarks/bench_kernels.py`` compares their speed.

Basis-function conventions (knots ``[k_0 < k_1 < ... < k_K]``):

* piecewise-constant: K functions, function ``i`` is the indicator of
  ``[k_i, k_{i+1})``; the last one holds value 1 for all ``t >= k_K``.
* piecewise-linear: K+1 hat functions, hat ``i`` peaks at ``k_i``; the last
  hat holds value 1 for all ``t >= k_K``.  Below ``k_0`` everything is 0.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    _HAVE_NUMBA = False

_FLAG = os.environ.get("METASURV_NUMBA", "").strip().lower()
if _FLAG in ("0", "false", "no", "off"):
    NUMBA_ENABLED = False
elif _FLAG in ("1", "true", "yes", "on"):
    if not _HAVE_NUMBA:
        raise ImportError("METASURV_NUMBA=1 but numba is not importable")
    NUMBA_ENABLED = True
else:
    NUMBA_ENABLED = _HAVE_NUMBA


def _identity_jit(*args, **kwargs):
    def wrap(fn):
        return fn

    return wrap


_njit = numba.njit if _HAVE_NUMBA else _identity_jit


# ---------------------------------------------------------------------------
# piecewise-constant basis
# ---------------------------------------------------------------------------


def pwc_values_np(knots, ts):
    n = ts.shape[0]
    nfun = knots.shape[0] - 1
    out = np.zeros((n, nfun))
    idx = np.searchsorted(knots, ts, side="right") - 1
    idx = np.minimum(idx, nfun - 1)  # hold last function beyond the grid
    ok = idx >= 0
    out[np.flatnonzero(ok), idx[ok]] = 1.0
    return out


@_njit(cache=True)
def pwc_values_nb(knots, ts):  # pragma: no cover - numba twin of the above
    n = ts.shape[0]
    nfun = knots.shape[0] - 1
    out = np.zeros((n, nfun))
    for r in range(n):
        t = ts[r]
        if t < knots[0]:
            continue
        i = np.searchsorted(knots, t, side="right") - 1
        if i > nfun - 1:
            i = nfun - 1
        out[r, i] = 1.0
    return out


def pwc_integrals_np(knots, ts):
    n = ts.shape[0]
    nfun = knots.shape[0] - 1
    out = np.zeros((n, nfun))
    t = ts[:, None]
    left = knots[:-1][None, :]
    right = knots[1:][None, :]
    out[:] = np.clip(t - left, 0.0, right - left)
    # extrapolation tail accrues into the last component
    tail = ts - knots[-1]
    out[:, nfun - 1] += np.maximum(tail, 0.0)
    return out


@_njit(cache=True)
def pwc_integrals_nb(knots, ts):  # pragma: no cover
    n = ts.shape[0]
    nfun = knots.shape[0] - 1
    out = np.zeros((n, nfun))
    for r in range(n):
        t = ts[r]
        for i in range(nfun):
            v = t - knots[i]
            if v < 0.0:
                v = 0.0
            w = knots[i + 1] - knots[i]
            if v > w and i < nfun - 1:
                v = w
            out[r, i] = v
    return out


@_njit(cache=True)
def pwc_invert_nb(knots, weights, targets):
    n = targets.shape[0]
    nint = knots.shape[0] - 1
    out = np.empty(n)
    for r in range(n):
        target = targets[r]
        if target <= 0.0:
            out[r] = 0.0
            continue
        acc = 0.0
        t = np.nan
        for i in range(nint):
            rate = weights[r, i]
            mass = rate * (knots[i + 1] - knots[i])
            if acc + mass >= target and mass > 0.0:
                s = (target - acc) / rate
                if s > knots[i + 1] - knots[i]:
                    s = knots[i + 1] - knots[i]
                t = knots[i] + s
                break
            acc += mass
        if not math.isnan(t):
            out[r] = t
        elif weights[r, nint - 1] > 0.0:
            out[r] = knots[nint] + (target - acc) / weights[r, nint - 1]
        else:
            out[r] = np.nan
    return out


def pwc_invert_np(knots, weights, targets):
    n = targets.shape[0]
    widths = np.diff(knots)
    masses = weights * widths[None, :]
    cum = np.concatenate([np.zeros((n, 1)), np.cumsum(masses, axis=1)], axis=1)
    reached = cum[:, 1:] >= targets[:, None]
    found = reached.any(axis=1)
    idx = np.argmax(reached, axis=1)

    out = np.full(n, np.nan)
    rows = np.flatnonzero(found)
    if rows.size:
        i = idx[rows]
        rate = weights[rows, i]
        s = (targets[rows] - cum[rows, i]) / rate
        s = np.minimum(s, widths[i])
        out[rows] = knots[i] + s

    rows = np.flatnonzero(~found)
    if rows.size:
        tail = weights[rows, -1]
        ok = tail > 0.0
        good = rows[ok]
        out[good] = knots[-1] + (targets[good] - cum[good, -1]) / tail[ok]
    out[targets <= 0.0] = 0.0
    return out


# ---------------------------------------------------------------------------
# piecewise-linear basis (hat functions)
# ---------------------------------------------------------------------------


def pwl_values_np(knots, ts):
    n = ts.shape[0]
    nknot = knots.shape[0]
    out = np.zeros((n, nknot))
    idx = np.searchsorted(knots, ts, side="right") - 1
    beyond = idx >= nknot - 1
    inside = (idx >= 0) & ~beyond
    rows = np.flatnonzero(inside)
    if rows.size:
        i = idx[rows]
        w = knots[i + 1] - knots[i]
        frac = (ts[rows] - knots[i]) / w
        out[rows, i] = 1.0 - frac
        out[rows, i + 1] = frac
    out[beyond, nknot - 1] = 1.0
    return out


@_njit(cache=True)
def pwl_values_nb(knots, ts):  # pragma: no cover
    n = ts.shape[0]
    nknot = knots.shape[0]
    out = np.zeros((n, nknot))
    for r in range(n):
        t = ts[r]
        if t < knots[0]:
            continue
        if t >= knots[nknot - 1]:
            out[r, nknot - 1] = 1.0
            continue
        i = np.searchsorted(knots, t, side="right") - 1
        w = knots[i + 1] - knots[i]
        frac = (t - knots[i]) / w
        out[r, i] = 1.0 - frac
        out[r, i + 1] = frac
    return out


def pwl_integrals_np(knots, ts):
    n = ts.shape[0]
    nknot = knots.shape[0]
    out = np.zeros((n, nknot))
    t = ts[:, None]
    left = knots[:-1][None, :]
    right = knots[1:][None, :]
    width = right - left
    # rising ramp of hat i over [k_{i-1}, k_i]: quadratic accumulation
    s = np.clip(t, left, right) - left
    rising = 0.5 * s * s / width
    # falling ramp of hat i over [k_i, k_{i+1}]
    falling = s - 0.5 * s * s / width
    out[:, 1:] += rising
    out[:, :-1] += falling
    out[:, nknot - 1] += np.maximum(ts - knots[-1], 0.0)
    return out


@_njit(cache=True)
def pwl_integrals_nb(knots, ts):  # pragma: no cover
    n = ts.shape[0]
    nknot = knots.shape[0]
    out = np.zeros((n, nknot))
    for r in range(n):
        t = ts[r]
        for i in range(nknot - 1):
            w = knots[i + 1] - knots[i]
            s = t
            if s > knots[i + 1]:
                s = knots[i + 1]
            s -= knots[i]
            if s < 0.0:
                s = 0.0
            out[r, i + 1] += 0.5 * s * s / w
            out[r, i] += s - 0.5 * s * s / w
        tail = t - knots[nknot - 1]
        if tail > 0.0:
            out[r, nknot - 1] += tail
    return out


@_njit(cache=True)
def pwl_invert_nb(knots, weights, targets):
    n = targets.shape[0]
    nint = knots.shape[0] - 1
    out = np.empty(n)
    for r in range(n):
        target = targets[r]
        if target <= 0.0:
            out[r] = 0.0
            continue
        acc = 0.0
        t = np.nan
        for i in range(nint):
            h = knots[i + 1] - knots[i]
            lo = weights[r, i]
            hi = weights[r, i + 1]
            mass = 0.5 * (lo + hi) * h
            if acc + mass >= target and mass > 0.0:
                resid = target - acc
                if lo == hi:
                    s = resid / lo
                else:
                    disc = lo * lo + 2.0 * resid * (hi - lo) / h
                    if disc < 0.0:
                        disc = 0.0
                    s = 2.0 * resid / (lo + math.sqrt(disc))
                if s > h:
                    s = h
                t = knots[i] + s
                break
            acc += mass
        if not math.isnan(t):
            out[r] = t
        elif weights[r, nint] > 0.0:
            out[r] = knots[nint] + (target - acc) / weights[r, nint]
        else:
            out[r] = np.nan
    return out


def pwl_invert_np(knots, weights, targets):
    n = targets.shape[0]
    widths = np.diff(knots)
    masses = 0.5 * (weights[:, :-1] + weights[:, 1:]) * widths[None, :]
    cum = np.concatenate([np.zeros((n, 1)), np.cumsum(masses, axis=1)], axis=1)
    reached = cum[:, 1:] >= targets[:, None]
    found = reached.any(axis=1)
    idx = np.argmax(reached, axis=1)

    out = np.full(n, np.nan)
    rows = np.flatnonzero(found)
    if rows.size:
        i = idx[rows]
        h = widths[i]
        lo = weights[rows, i]
        hi = weights[rows, i + 1]
        resid = targets[rows] - cum[rows, i]
        with np.errstate(divide="ignore", invalid="ignore"):
            linear = resid / lo
            disc = np.maximum(lo * lo + 2.0 * resid * (hi - lo) / h, 0.0)
            quad = 2.0 * resid / (lo + np.sqrt(disc))
        s = np.where(lo == hi, linear, quad)
        s = np.minimum(s, h)
        out[rows] = knots[i] + s

    rows = np.flatnonzero(~found)
    if rows.size:
        tail = weights[rows, -1]
        ok = tail > 0.0
        good = rows[ok]
        out[good] = knots[-1] + (targets[good] - cum[good, -1]) / tail[ok]
    out[targets <= 0.0] = 0.0
    return out


# ---------------------------------------------------------------------------
# risk-set accumulation for the partial-likelihood objective
#
# All arrays are pre-sorted by observation time DESCENDING.  ``hmat`` holds
# the positive per-basis coefficients of each subject, ``numat`` the basis
# values at that subject's own observation time, ``is_event`` marks
# uncensored subjects of the event type under consideration.  Ties share a
# risk set: a whole group of equal times is folded into the suffix sums
# before any of its members' terms are evaluated.
# ---------------------------------------------------------------------------


@_njit(cache=True)
def cox_risk_terms_nb(times, hmat, numat, is_event):
    n, k = hmat.shape
    denoms = np.zeros(n)
    own = np.zeros(n)
    suffix = np.zeros(k)
    i = 0
    while i < n:
        j = i
        while j < n and times[j] == times[i]:
            j += 1
        for r in range(i, j):
            for c in range(k):
                suffix[c] += hmat[r, c]
        for r in range(i, j):
            if is_event[r]:
                d = 0.0
                w = 0.0
                for c in range(k):
                    d += numat[r, c] * suffix[c]
                    w += numat[r, c] * hmat[r, c]
                denoms[r] = d
                own[r] = w
        i = j
    return denoms, own


def cox_risk_terms_np(times, hmat, numat, is_event):
    n = times.shape[0]
    starts = np.flatnonzero(np.concatenate([[True], times[1:] != times[:-1]]))
    gid = np.cumsum(np.concatenate([[True], times[1:] != times[:-1]])) - 1
    gsum = np.add.reduceat(hmat, starts, axis=0)
    suffix = np.cumsum(gsum, axis=0)  # descending order: cumsum = "time >= t" sums
    denoms = np.zeros(n)
    own = np.zeros(n)
    ev = is_event.astype(bool)
    denoms[ev] = (numat[ev] * suffix[gid[ev]]).sum(axis=1)
    own[ev] = (numat[ev] * hmat[ev]).sum(axis=1)
    return denoms, own


@_njit(cache=True)
def cox_risk_cotangents_nb(times, hmat, numat, is_event, denoms):
    n, k = hmat.shape
    out = np.zeros((n, k))
    acc = np.zeros(k)
    j = n
    while j > 0:
        i = j - 1
        while i > 0 and times[i - 1] == times[j - 1]:
            i -= 1
        # events of this tie group enter the accumulator first: their own
        # risk set includes every subject with an equal time
        for r in range(i, j):
            if is_event[r]:
                for c in range(k):
                    acc[c] += numat[r, c] / denoms[r]
        for r in range(i, j):
            for c in range(k):
                out[r, c] = -acc[c]
            if is_event[r]:
                w = 0.0
                for c in range(k):
                    w += numat[r, c] * hmat[r, c]
                for c in range(k):
                    out[r, c] += numat[r, c] / w
        j = i
    return out


def cox_risk_cotangents_np(times, hmat, numat, is_event, denoms):
    n, k = hmat.shape
    starts = np.flatnonzero(np.concatenate([[True], times[1:] != times[:-1]]))
    gid = np.cumsum(np.concatenate([[True], times[1:] != times[:-1]])) - 1
    ev = is_event.astype(bool)
    pereventrow = np.zeros((n, k))
    pereventrow[ev] = numat[ev] / denoms[ev][:, None]
    gsum = np.add.reduceat(pereventrow, starts, axis=0)
    acc = np.cumsum(gsum[::-1], axis=0)[::-1]  # suffix over ascending time
    out = -acc[gid]
    if ev.any():
        ownw = (numat[ev] * hmat[ev]).sum(axis=1)
        out[ev] += numat[ev] / ownw[:, None]
    return out


# ---------------------------------------------------------------------------
# backend dispatch
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:
    pwc_values = pwc_values_nb
    pwc_integrals = pwc_integrals_nb
    pwc_invert = pwc_invert_nb
    pwl_values = pwl_values_nb
    pwl_integrals = pwl_integrals_nb
    pwl_invert = pwl_invert_nb
    cox_risk_terms = cox_risk_terms_nb
    cox_risk_cotangents = cox_risk_cotangents_nb
else:
    pwc_values = pwc_values_np
    pwc_integrals = pwc_integrals_np
    pwc_invert = pwc_invert_np
    pwl_values = pwl_values_np
    pwl_integrals = pwl_integrals_np
    pwl_invert = pwl_invert_np
    cox_risk_terms = cox_risk_terms_np
    cox_risk_cotangents = cox_risk_cotangents_np

BACKEND = "numba" if NUMBA_ENABLED else "numpy"
