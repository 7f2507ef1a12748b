"""Win-ratio point estimators: the S-score Kaplan-Meier plug-in and Pocock counting."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import ARM_A, ARM_B, AnalysisDataset, StudyConfig, SubjectRecord, score_arrays
from .errors import AllTies, DegenerateDenominator, NoEvents
from .survfit import StepCdf, km_fit


class Outcome(Enum):
    WIN = 1
    LOSS = -1
    TIE = 0


@dataclass(frozen=True)
class WinLossTally:
    wins: int
    losses: int
    ties: int

    @property
    def total(self) -> int:
        return self.wins + self.losses + self.ties


@dataclass(frozen=True)
class WrEstimate:
    theta: float
    p_win: float
    p_loss: float
    method: str
    variance: float | None = None
    ci: object | None = None

    @property
    def se(self) -> float | None:
        return None if self.variance is None else float(np.sqrt(self.variance))


def km_scores(ds: AnalysisDataset):
    """S-score arrays ready for product-limit fitting.

    Survivors with a missing second endpoint are censored between the horizon
    and the survivor atom (at h + 0.5), so they leave the risk set before any
    observed second-endpoint value, including a value of exactly 0 at h + 1.
    """
    arm, s, d = score_arrays(ds)
    lapsed = (d == 0) & (s == ds.config.survivor_time)
    if lapsed.any():
        s = np.where(lapsed, ds.config.h + 0.5, s)
    return arm, s, d


def fit_arms(ds: AnalysisDataset) -> tuple[StepCdf, StepCdf]:
    arm, s, d = km_scores(ds)
    fits = []
    for z, label in ((ARM_A, "A"), (ARM_B, "B")):
        m = arm == z
        if not m.any():
            raise NoEvents(f"arm {label} is empty")
        f = km_fit(s[m], d[m])
        if f.grid.size == 0:
            raise NoEvents(f"arm {label} has no uncensored S-score values")
        fits.append(f)
    return fits[0], fits[1]


def win_probabilities(f_a, f_b) -> tuple[float, float]:
    """Return ``(N, D)``: P(S_a > S_b) and P(S_b > S_a) under the two CDFs.

    Works with any object exposing ``atoms()`` and a callable CDF.
    """
    grid_b, mass_b = f_b.atoms()
    grid_a, mass_a = f_a.atoms()
    n = float(np.dot(mass_b, 1.0 - f_a(grid_b))) if grid_b.size else 0.0
    d = float(np.dot(mass_a, 1.0 - f_b(grid_a))) if grid_a.size else 0.0
    return min(max(n, 0.0), 1.0), min(max(d, 0.0), 1.0)


def _ratio(n, d, method, tally=None):
    if d <= 0:
        if tally is not None and n <= 0:
            raise AllTies("every pair is tied; the win ratio is undefined")
        raise DegenerateDenominator(
            f"{method}: estimated loss probability is 0 (N={n:.4g}); the win ratio is infinite")
    return WrEstimate(theta=n / d, p_win=n, p_loss=d, method=method)


def wr_sscore(ds: AnalysisDataset) -> WrEstimate:
    """S-score NPMLE of the win ratio."""
    f_a, f_b = fit_arms(ds)
    n, d = win_probabilities(f_a, f_b)
    return _ratio(n, d, "sscore")


def pocock_compare_pair(i: SubjectRecord, j: SubjectRecord, config: StudyConfig | None = None) -> Outcome:
    """Unmatched Pocock comparison of arm-A subject ``i`` against arm-B subject ``j``.

    A first-endpoint decision needs an observed event inside the pair's
    common follow-up; otherwise the second endpoint decides when both values
    are observed, and the pair is tied when either is missing.
    """
    t_common = min(i.y1_obs, j.y1_obs)
    if j.delta1 == 1 and j.y1_obs <= t_common and i.y1_obs > j.y1_obs:
        return Outcome.WIN
    if i.delta1 == 1 and i.y1_obs <= t_common and j.y1_obs > i.y1_obs:
        return Outcome.LOSS
    if i.r2 == 1 and j.r2 == 1:
        if i.y2 > j.y2:
            return Outcome.WIN
        if i.y2 < j.y2:
            return Outcome.LOSS
    return Outcome.TIE


def _arm_columns(ds, z):
    m = ds.arm == z
    return ds.y1[m], ds.delta1[m] == 1, ds.r2[m] == 1, ds.y2[m]


def pocock_matrix(ds: AnalysisDataset, chunk: int = 2048) -> np.ndarray:
    """Direct enumeration: ``(n_a, n_b)`` int8 matrix of +1 win / -1 loss / 0 tie for arm A."""
    ya, da, ra, y2a = _arm_columns(ds, ARM_A)
    yb, db, rb, y2b = _arm_columns(ds, ARM_B)
    out = np.zeros((ya.size, yb.size), dtype=np.int8)
    y2a = np.nan_to_num(y2a)
    y2b = np.nan_to_num(y2b)
    for lo in range(0, ya.size, chunk):
        sl = slice(lo, lo + chunk)
        yi, di, ri, y2i = ya[sl, None], da[sl, None], ra[sl, None], y2a[sl, None]
        win = db[None, :] & (yb[None, :] < yi)
        loss = di & (yi < yb[None, :])
        both = ri & rb[None, :]
        win |= both & (y2i > y2b[None, :])
        loss |= both & (y2i < y2b[None, :])
        out[sl] = win.astype(np.int8) - loss.astype(np.int8)
    return out


def _count_below(sorted_ref, x, strict=True):
    return np.searchsorted(sorted_ref, x, side="left" if strict else "right")


def pocock_counts(ds: AnalysisDataset):
    """Per-subject win/loss counts by sorting, O(n log n).

    Returns ``(wins_a, losses_a, wins_b, losses_b)``: for each arm-A subject the
    number of arm-B opponents it beats / loses to, and for each arm-B subject
    the number of arm-A opponents that beat it / lose to it (i.e. wins and
    losses are always from arm A's point of view).
    """
    ya, da, ra, y2a = _arm_columns(ds, ARM_A)
    yb, db, rb, y2b = _arm_columns(ds, ARM_B)
    b_events = np.sort(yb[db])
    yb_sorted = np.sort(yb)
    ya_sorted = np.sort(ya)
    a_events = np.sort(ya[da])
    y2b_obs = np.sort(y2b[rb])
    y2a_obs = np.sort(y2a[ra])

    # arm A subject i beats j when j has an event strictly before y_i
    wins_a = _count_below(b_events, ya).astype(np.int64)
    losses_a = np.where(da, yb.size - _count_below(yb_sorted, ya, strict=False), 0)
    wins_a += np.where(ra, _count_below(y2b_obs, np.nan_to_num(y2a)), 0)
    losses_a += np.where(ra, y2b_obs.size - _count_below(y2b_obs, np.nan_to_num(y2a), strict=False), 0)

    wins_b = np.where(db, ya.size - _count_below(ya_sorted, yb, strict=False), 0).astype(np.int64)
    losses_b = _count_below(a_events, yb).astype(np.int64)
    wins_b += np.where(rb, y2a_obs.size - _count_below(y2a_obs, np.nan_to_num(y2b), strict=False), 0)
    losses_b += np.where(rb, _count_below(y2a_obs, np.nan_to_num(y2b)), 0)
    return wins_a, losses_a.astype(np.int64), wins_b, losses_b


def pocock_tally(ds: AnalysisDataset, fast: bool = True) -> WinLossTally:
    total = ds.n_a * ds.n_b
    if fast:
        wins_a, losses_a, _, _ = pocock_counts(ds)
        wins, losses = int(wins_a.sum()), int(losses_a.sum())
    else:
        m = pocock_matrix(ds)
        wins, losses = int(np.count_nonzero(m == 1)), int(np.count_nonzero(m == -1))
    return WinLossTally(wins, losses, total - wins - losses)


def pocock_estimate(ds: AnalysisDataset, fast: bool = True) -> tuple[WrEstimate, WinLossTally]:
    tally = pocock_tally(ds, fast=fast)
    total = tally.total
    est = _ratio(tally.wins / total, tally.losses / total, "pocock", tally=tally)
    return est, tally
