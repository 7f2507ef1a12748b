"""Kaplan-Meier product-limit estimation and step-function CDFs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput


@dataclass(frozen=True, eq=False)
class StepCdf:
    """Right-continuous step CDF with jumps at ``grid``.

    ``cdf_values[i]`` is F at and after ``grid[i]``; F is 0 below ``grid[0]``.
    """

    grid: np.ndarray
    cdf_values: np.ndarray
    n_at_risk: np.ndarray
    n_events: np.ndarray

    def __call__(self, s):
        return cdf_eval(self, s)

    def survival(self, s):
        return 1.0 - cdf_eval(self, s)

    @property
    def masses(self) -> np.ndarray:
        return np.diff(self.cdf_values, prepend=0.0)

    def atoms(self):
        """Jump locations and sizes."""
        return self.grid, self.masses

    @property
    def total_mass(self) -> float:
        return float(self.cdf_values[-1]) if len(self.cdf_values) else 0.0


def _as_arrays(values, events):
    values = np.asarray(values, dtype=float)
    events = np.asarray(events).astype(bool)
    if values.ndim != 1 or values.shape != events.shape:
        raise ValueError("values and events must be 1-d arrays of equal length")
    return values, events


def km_fit(values, events) -> StepCdf:
    """Product-limit CDF of right-censored data.

    Only event values become grid points.  At a tied value, censored
    observations are still counted in the risk set.
    """
    values, events = _as_arrays(values, events)
    if values.size == 0:
        raise EmptyInput("km_fit needs at least one observation")
    uniq, inverse = np.unique(values, return_inverse=True)
    n_at = np.bincount(inverse, minlength=uniq.size)
    d_at = np.bincount(inverse, weights=events, minlength=uniq.size)
    at_risk = values.size - np.concatenate(([0], np.cumsum(n_at)[:-1]))
    keep = d_at > 0
    d = d_at[keep].astype(np.int64)
    r = at_risk[keep].astype(np.int64)
    surv = np.cumprod(1.0 - d / r)
    grid = uniq[keep]
    cdf = 1.0 - surv
    for a in (grid, cdf, r, d):
        a.setflags(write=False)
    return StepCdf(grid, cdf, r, d)


def cdf_eval(f: StepCdf, s):
    """Evaluate a step CDF (scalar or array argument)."""
    s_arr = np.asarray(s, dtype=float)
    idx = np.searchsorted(f.grid, s_arr, side="right") - 1
    vals = np.where(idx >= 0, f.cdf_values[np.maximum(idx, 0)] if f.grid.size else 0.0, 0.0)
    return float(vals) if np.ndim(s) == 0 else vals


def pooled_grid(values_a, values_b) -> np.ndarray:
    """Sorted distinct values across both arms.

    Accepts arrays of values or sequences of objects with an ``s`` attribute.
    """
    def vals(x):
        x = list(x) if not isinstance(x, np.ndarray) else x
        if len(x) and hasattr(x[0], "s"):
            return np.array([o.s for o in x], dtype=float)
        return np.asarray(x, dtype=float)

    pooled = np.concatenate([vals(values_a), vals(values_b)])
    if pooled.size == 0:
        raise EmptyInput("pooled_grid needs at least one value")
    return np.unique(pooled)


def risk_table(values, events, grid, weights=None):
    """Weighted at-risk and event totals at each grid point.

    Returns ``(at_risk, n_events)`` where ``at_risk[k]`` sums weights with
    value >= grid[k] and ``n_events[k]`` sums weights of events at grid[k].
    """
    values, events = _as_arrays(values, events)
    grid = np.asarray(grid, dtype=float)
    w = np.ones(values.size) if weights is None else np.asarray(weights, dtype=float)
    order = np.argsort(values, kind="stable")
    v, w_sorted, e_sorted = values[order], w[order], events[order]
    cum_w = np.concatenate(([0.0], np.cumsum(w_sorted)))
    at_risk = cum_w[-1] - cum_w[np.searchsorted(v, grid, side="left")]
    cum_ev = np.concatenate(([0.0], np.cumsum(w_sorted * e_sorted)))
    n_events = (cum_ev[np.searchsorted(v, grid, side="right")]
                - cum_ev[np.searchsorted(v, grid, side="left")])
    return at_risk, n_events
