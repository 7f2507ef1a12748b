"""Variance estimation and confidence intervals for the win ratio.

The closed-form variance linearises the S-score estimator through the
per-arm conditional survival probabilities q_s = P(S > s | S >= s) on the
pooled grid of observed S values.  Each subject's influence value is

    phi_i = sum_s g_s * w_i(s) * E_is * (A_is - q_s)

where E_is flags being at risk at s, A_is flags surviving past s, w_i(s) is
1 (or an inverse observation probability beyond the horizon for the
covariate-adjusted estimator) and g_s = (d theta / d q_s) / mean(w E_s).
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import partial

import numpy as np
from scipy import stats

from .data import ARM_A, ARM_B, AnalysisDataset
from .errors import (DegenerateDenominator, EstimationError, InsufficientReplicates,
                     TooManyDegenerateReplicates)
from .estimators import WrEstimate, km_scores, pocock_counts, pocock_estimate, wr_sscore
from .survfit import risk_table


class CiKind(str, Enum):
    IF_WALD = "if-wald"
    BT_WALD = "bt-wald"
    BT_QT = "bt-qt"
    U_WALD = "u-wald"


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    kind: CiKind

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True, eq=False)
class ArmIf:
    """Per-arm pieces of the influence-function decomposition on the pooled grid."""

    q: np.ndarray
    surv: np.ndarray
    coef: np.ndarray
    risk_mean: np.ndarray


@dataclass(frozen=True, eq=False)
class IfDecomposition:
    grid: np.ndarray
    arm_a: ArmIf
    arm_b: ArmIf
    phi: np.ndarray
    theta: float
    p_win: float
    p_loss: float

    @property
    def n(self) -> int:
        return self.phi.size

    @property
    def variance_if(self) -> float:
        """Mean squared influence value (asymptotic variance of sqrt(n) * theta_hat)."""
        return math.fsum(self.phi ** 2) / self.phi.size

    @property
    def variance(self) -> float:
        """Estimated variance of theta_hat itself."""
        return self.variance_if / self.n

    @property
    def se(self) -> float:
        return float(np.sqrt(self.variance))


def _arm_survival(s, d, grid, h, w_hi):
    at, ev = risk_table(s, d, grid)
    if w_hi is not None:
        at_hi, ev_hi = risk_table(s, d, grid, weights=w_hi)
        beyond = grid > h
        at = np.where(beyond, at_hi, at)
        ev = np.where(beyond, ev_hi, ev)
    q = np.ones_like(grid)
    ok = at > 0
    q[ok] = 1.0 - ev[ok] / at[ok]
    q = np.clip(q, 0.0, 1.0)
    return q, np.cumprod(q), at


def _chain(q, surv, dtheta):
    """Map d theta / d surv_k onto d theta / d q_s for the product-limit parametrisation.

    d theta / d q_s = sum_{k >= s} surv_k / q_s * dtheta_k, written as
    surv_{s-1} * R_s with R_s = dtheta_s + q_{s+1} R_{s+1} so q_s = 0 is safe.
    """
    m = q.size
    r = np.empty(m)
    acc = 0.0
    for k in range(m - 1, -1, -1):
        acc = dtheta[k] + (q[k + 1] * acc if k + 1 < m else 0.0)
        r[k] = acc
    surv_prev = np.concatenate(([1.0], surv[:-1]))
    return surv_prev * r


def if_core(arm, s, d, h, w_hi=None, grid=None) -> IfDecomposition:
    """Influence-function decomposition from S-score arrays.

    ``w_hi`` optionally gives per-subject weights used at grid points beyond
    ``h``; subjects are weighted 1 at or below ``h``.  ``grid`` may add
    support points to the observed values (they carry no mass).
    """
    arm = np.asarray(arm)
    s = np.asarray(s, dtype=float)
    d = np.asarray(d).astype(bool)
    n = s.size
    grid = np.unique(s) if grid is None else np.union1d(grid, s)
    masks = [arm == ARM_A, arm == ARM_B]
    per_arm = []
    for m in masks:
        wz = None if w_hi is None else np.asarray(w_hi, dtype=float)[m]
        per_arm.append(_arm_survival(s[m], d[m], grid, h, wz))
    (q_a, surv_a, at_a), (q_b, surv_b, at_b) = per_arm

    mass_a = np.concatenate(([1.0], surv_a[:-1])) - surv_a
    mass_b = np.concatenate(([1.0], surv_b[:-1])) - surv_b
    p_win = float(np.dot(mass_b, surv_a))
    p_loss = float(np.dot(mass_a, surv_b))
    if p_loss <= 0:
        raise DegenerateDenominator("estimated loss probability is 0; no influence function")
    theta = p_win / p_loss

    next_a = np.append(mass_a[1:], 0.0)
    next_b = np.append(mass_b[1:], 0.0)
    dtheta_a = (p_loss * mass_b + p_win * next_b) / p_loss ** 2
    dtheta_b = -(p_loss * next_a + p_win * mass_a) / p_loss ** 2

    phi = np.zeros(n)
    arms = []
    beyond = grid > h
    for m, q, surv, at, dth in ((masks[0], q_a, surv_a, at_a, dtheta_a),
                                (masks[1], q_b, surv_b, at_b, dtheta_b)):
        coef = _chain(q, surv, dth)
        risk_mean = at / n
        g = np.zeros_like(grid)
        ok = at > 0
        g[ok] = coef[ok] / risk_mean[ok]
        term = g * (1.0 - q)
        cum_lo = np.cumsum(np.where(beyond, 0.0, term))
        cum_hi = np.cumsum(np.where(beyond, term, 0.0))
        sz, dz = s[m], d[m]
        k = np.searchsorted(grid, sz)
        wz = np.ones(sz.size) if w_hi is None else np.asarray(w_hi, dtype=float)[m]
        w_at = np.where(beyond[k], wz, 1.0)
        phi[m] = cum_lo[k] + wz * cum_hi[k] - dz * g[k] * w_at
        arms.append(ArmIf(q=q, surv=surv, coef=coef, risk_mean=risk_mean))

    for a in (grid, phi):
        a.setflags(write=False)
    return IfDecomposition(grid=grid, arm_a=arms[0], arm_b=arms[1], phi=phi,
                           theta=theta, p_win=p_win, p_loss=p_loss)


def if_variance(ds: AnalysisDataset) -> IfDecomposition:
    """Influence-function decomposition for the S-score estimator of ``ds``."""
    wr_sscore(ds)  # raises the estimator's own errors first
    arm, s, d = km_scores(ds)
    return if_core(arm, s, d, ds.config.h)


def _z(alpha):
    return float(stats.norm.ppf(1.0 - alpha / 2.0))


def wald_ci(theta: float, se: float, alpha: float = 0.05, kind=CiKind.IF_WALD,
            log_scale: bool = False) -> ConfidenceInterval:
    z = _z(alpha)
    if log_scale:
        half = z * se / theta
        lo, hi = theta * np.exp(-half), theta * np.exp(half)
    else:
        lo, hi = theta - z * se, theta + z * se
    return ConfidenceInterval(float(lo), float(hi), 1.0 - alpha, CiKind(kind))


def if_wald_ci(dec: IfDecomposition, alpha: float = 0.05, log_scale: bool = False) -> ConfidenceInterval:
    return wald_ci(dec.theta, dec.se, alpha, CiKind.IF_WALD, log_scale)


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    replicates: np.ndarray
    n_failed: int
    n_requested: int
    seed: int

    @property
    def se(self) -> float:
        return float(np.std(self.replicates, ddof=1))


def _stat(value):
    return float(value.theta) if isinstance(value, WrEstimate) else float(value)


def _replicate(ds, estimator, seed, idx_a, idx_b, b):
    rng = np.random.default_rng([seed, b])
    take = np.concatenate((rng.choice(idx_a, idx_a.size), rng.choice(idx_b, idx_b.size)))
    try:
        return _stat(estimator(ds.take(take)))
    except EstimationError:
        return np.nan


def _replicate_block(ds, estimator, seed, idx_a, idx_b, bs):
    return [_replicate(ds, estimator, seed, idx_a, idx_b, b) for b in bs]


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("WINRATIO_JOBS", "1")))
    except ValueError:
        return 1


def bootstrap(ds: AnalysisDataset, estimator=wr_sscore, B: int = 1000, seed: int = 0,
              n_jobs: int | None = None, max_failed_frac: float = 0.2) -> BootstrapResult:
    """Within-arm nonparametric bootstrap of ``estimator``.

    Replicate ``b`` draws from ``numpy.random.default_rng([seed, b])`` so the
    output does not depend on ``n_jobs``.  Replicates whose estimator raises
    an EstimationError are dropped and counted.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    idx_a = np.flatnonzero(ds.arm == ARM_A)
    idx_b = np.flatnonzero(ds.arm == ARM_B)
    n_jobs = default_jobs() if n_jobs is None else n_jobs
    if n_jobs > 1:
        blocks = np.array_split(np.arange(B), n_jobs * 4)
        work = partial(_replicate_block, ds, estimator, seed, idx_a, idx_b)
        with ProcessPoolExecutor(n_jobs) as pool:
            values = [v for block in pool.map(work, blocks) for v in block]
    else:
        values = [_replicate(ds, estimator, seed, idx_a, idx_b, b) for b in range(B)]
    values = np.asarray(values)
    ok = np.isfinite(values)
    n_failed = int(B - ok.sum())
    if n_failed > max_failed_frac * B:
        raise TooManyDegenerateReplicates(n_failed, B)
    reps = values[ok]
    reps.setflags(write=False)
    return BootstrapResult(reps, n_failed, B, seed)


def _replicates(x):
    reps = x.replicates if isinstance(x, BootstrapResult) else np.asarray(x, dtype=float)
    if reps.size < 2:
        raise InsufficientReplicates(f"need at least 2 successful replicates, got {reps.size}")
    return reps


def bt_wald_ci(replicates, theta_hat: float, alpha: float = 0.05) -> ConfidenceInterval:
    reps = _replicates(replicates)
    return wald_ci(theta_hat, float(np.std(reps, ddof=1)), alpha, CiKind.BT_WALD)


def bt_qt_ci(replicates, alpha: float = 0.05) -> ConfidenceInterval:
    """Percentile interval; quantiles interpolate linearly between order statistics."""
    reps = _replicates(replicates)
    lo, hi = np.quantile(reps, [alpha / 2.0, 1.0 - alpha / 2.0], method="linear")
    return ConfidenceInterval(float(lo), float(hi), 1.0 - alpha, CiKind.BT_QT)


def pocock_ustat_variance(ds: AnalysisDataset) -> float:
    """Large-sample variance of Pocock's win ratio via Hajek projections.

    Each subject's share of wins and losses against the opposite arm is a
    projection of the two-sample U-statistics (P_win, P_loss); their
    within-arm covariances give Cov(P_win, P_loss), and the delta method maps
    that to the ratio.
    """
    est, _ = pocock_estimate(ds)
    wins_a, losses_a, wins_b, losses_b = pocock_counts(ds)
    n_a, n_b = wins_a.size, wins_b.size
    cov = np.zeros((2, 2))
    for w, l, n_own, n_other in ((wins_a, losses_a, n_a, n_b), (wins_b, losses_b, n_b, n_a)):
        if n_own > 1:
            cov += np.cov(np.vstack((w / n_other, l / n_other)), ddof=1) / n_own
    pw, pl = est.p_win, est.p_loss
    grad = np.array([1.0 / pl, -pw / pl ** 2])
    return float(max(grad @ cov @ grad, 0.0))
