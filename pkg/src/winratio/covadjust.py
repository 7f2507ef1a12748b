"""Covariate-adjusted win ratio under covariate-dependent missingness of Y2.

Per arm: Kaplan-Meier for the first endpoint up to the horizon, a logistic
model for the probability that a survivor's Y2 is observed, and an inverse
probability weighted CDF of Y2 among observed survivors.  The two pieces are
spliced into the S-score CDF and plugged into the usual win probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .data import ARM_A, ARM_B, AnalysisDataset
from .errors import (DegenerateDenominator, ExtremePropensity, ModelFitError,
                     NoObservedOutcomes, Separation, SingularInformation)
from .estimators import WrEstimate, km_scores, win_probabilities
from .inference import IfDecomposition, if_core
from .survfit import StepCdf, km_fit

PROPENSITY_FLOOR = 0.01
BETA_CAP = 30.0


@dataclass(frozen=True, eq=False)
class LogisticFit:
    beta: np.ndarray
    converged: bool
    iterations: int
    max_abs_score: float

    def predict(self, design) -> np.ndarray:
        return expit(np.asarray(design, dtype=float) @ self.beta)


def _loglik(design, r, beta):
    eta = design @ beta
    return float(np.sum(r * eta - np.logaddexp(0.0, eta)))


def fit_logistic(design, r, tol: float = 1e-8, max_iter: int = 50,
                 beta_cap: float = BETA_CAP) -> LogisticFit:
    """Maximum likelihood logistic regression by Newton's method with step halving.

    ``design`` must already contain the intercept column.  Raises Separation
    when the coefficients run past ``beta_cap`` or the fitted probabilities
    collapse onto 0/1.
    """
    x = np.asarray(design, dtype=float)
    r = np.asarray(r, dtype=float)
    if x.ndim != 2 or x.shape[0] != r.size:
        raise ValueError("design must be (n, p) with n matching the responses")
    beta = np.zeros(x.shape[1])
    ll = _loglik(x, r, beta)
    score = x.T @ (r - expit(x @ beta))
    for it in range(1, max_iter + 1):
        p = expit(x @ beta)
        info = x.T @ (x * (p * (1.0 - p))[:, None])
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SingularInformation("information matrix is singular; drop collinear covariates")
        if not np.all(np.isfinite(step)):
            raise SingularInformation("information matrix is singular; drop collinear covariates")
        for _ in range(40):
            cand = beta + step
            ll_cand = _loglik(x, r, cand)
            if ll_cand >= ll - 1e-12 * abs(ll):
                break
            step = step / 2.0
        beta, ll = cand, ll_cand
        if np.max(np.abs(beta)) > beta_cap:
            raise Separation(
                "logistic coefficients diverge (separation); use an intercept-only "
                "missingness model or the unadjusted estimator")
        score = x.T @ (r - expit(x @ beta))
        if np.max(np.abs(score)) <= tol:
            return LogisticFit(beta, True, it, float(np.max(np.abs(score))))
    p = expit(x @ beta)
    if np.min(p * (1.0 - p)) < 1e-10:
        raise Separation(
            "fitted probabilities collapse to 0/1 (separation); use an intercept-only "
            "missingness model or the unadjusted estimator")
    raise ModelFitError(f"logistic fit did not converge in {max_iter} iterations "
                        f"(max |score| = {np.max(np.abs(score)):.3g})")


def ipw_cdf(y2_observed, pi_observed, floor: float = PROPENSITY_FLOOR):
    """Inverse-probability weighted CDF of the observed second-endpoint values.

    Returns ``(grid, values)`` for a right-continuous step function.
    """
    y2 = np.asarray(y2_observed, dtype=float)
    pi = np.asarray(pi_observed, dtype=float)
    if y2.size == 0:
        raise NoObservedOutcomes("no observed second-endpoint values")
    low = np.flatnonzero(pi < floor)
    if low.size:
        raise ExtremePropensity(low, floor)
    grid, inverse = np.unique(y2, return_inverse=True)
    w = np.bincount(inverse, weights=1.0 / pi, minlength=grid.size)
    values = np.cumsum(w) / w.sum()
    values[-1] = 1.0
    return grid, values


@dataclass(frozen=True, eq=False)
class AdjustedCdf:
    """S-score CDF spliced from a first-endpoint KM fit and a second-endpoint CDF.

    F(s) = F1(s) for s <= h, F1(h) on [h, h+1), and
    F1(h) + (1 - F1(h)) * F2(s - h - 1) from h+1 on.
    """

    f1: StepCdf
    p_survive_h: float
    f2_grid: np.ndarray
    f2_values: np.ndarray
    h: float

    def f2(self, t):
        t = np.asarray(t, dtype=float)
        if self.f2_grid.size == 0:
            return np.zeros_like(t)
        idx = np.searchsorted(self.f2_grid, t, side="right") - 1
        return np.where(idx >= 0, self.f2_values[np.maximum(idx, 0)], 0.0)

    def __call__(self, s):
        s_arr = np.asarray(s, dtype=float)
        f1_h = 1.0 - self.p_survive_h
        out = np.where(s_arr <= self.h, self.f1(np.minimum(s_arr, self.h)), f1_h)
        out = np.where(s_arr >= self.h + 1.0,
                       f1_h + self.p_survive_h * self.f2(s_arr - self.h - 1.0), out)
        return float(out) if np.ndim(s) == 0 else out

    def atoms(self):
        g1, m1 = self.f1.atoms()
        m2 = np.diff(self.f2_values, prepend=0.0) * self.p_survive_h
        return (np.concatenate((g1, self.h + 1.0 + self.f2_grid)),
                np.concatenate((m1, m2)))


def combined_cdf(f1: StepCdf, ipw, h: float) -> AdjustedCdf:
    grid, values = ipw
    f1_h = f1(h)
    return AdjustedCdf(f1=f1, p_survive_h=1.0 - f1_h,
                       f2_grid=np.asarray(grid, dtype=float),
                       f2_values=np.asarray(values, dtype=float), h=float(h))


@dataclass(frozen=True, eq=False)
class AdjustedFit:
    cdf_a: AdjustedCdf
    cdf_b: AdjustedCdf
    fit_a: LogisticFit | None
    fit_b: LogisticFit | None
    pi: np.ndarray  # fitted observation probability per subject (1 for non-survivors)


def _design(ds, rows):
    x = ds.covariates[rows]
    return np.column_stack((np.ones(x.shape[0]), x))


@dataclass(frozen=True, eq=False)
class _ArmPieces:
    label: str
    f1: StepCdf
    rows: np.ndarray  # survivors of the arm
    design: np.ndarray | None
    fit: LogisticFit | None


def _arm_cdf(ds, piece: _ArmPieces, pi, floor):
    h = ds.config.h
    r = ds.r2[piece.rows]
    observed = piece.rows[r == 1]
    p_survive = 1.0 - piece.f1(h)
    if observed.size == 0:
        if p_survive > 0 and piece.rows.size:
            raise NoObservedOutcomes(f"arm {piece.label}: no survivor has an observed second endpoint")
        ipw = (np.empty(0), np.empty(0))
    else:
        ipw = ipw_cdf(ds.y2[observed], pi[observed], floor)
    if piece.f1.grid.size == 0 and observed.size == 0:
        raise NoObservedOutcomes(f"arm {piece.label} has no observed outcomes")
    return combined_cdf(piece.f1, ipw, h)


def _fit_pieces(ds, floor, intercept_only):
    if ds.covariates is None and not intercept_only:
        raise ValueError("covariate adjustment needs covariate columns in the dataset")
    h = ds.config.h
    surv = ds.survivor
    pi = np.ones(len(ds))
    pieces = []
    for z, label in ((ARM_A, "A"), (ARM_B, "B")):
        in_arm = ds.arm == z
        f1 = km_fit(ds.y1[in_arm], (ds.delta1[in_arm] == 1) & (ds.y1[in_arm] <= h))
        rows = np.flatnonzero(in_arm & surv)
        r = ds.r2[rows].astype(float)
        fit, design = None, None
        if rows.size and r.min() == 0 and r.max() == 1:
            design = (np.ones((rows.size, 1)) if intercept_only or ds.covariates is None
                      else _design(ds, rows))
            fit = fit_logistic(design, r)
            pi[rows] = fit.predict(design)
            low = rows[pi[rows] < floor]
            if low.size:
                raise ExtremePropensity(low, floor)
        pieces.append(_ArmPieces(label, f1, rows, design, fit))
    return pieces, pi


def fit_adjusted(ds: AnalysisDataset, floor: float = PROPENSITY_FLOOR,
                 intercept_only: bool = False) -> AdjustedFit:
    """Fit both arms' pieces of the covariate-adjusted S-score CDF."""
    pieces, pi = _fit_pieces(ds, floor, intercept_only)
    cdf_a, cdf_b = (_arm_cdf(ds, p, pi, floor) for p in pieces)
    return AdjustedFit(cdf_a, cdf_b, pieces[0].fit, pieces[1].fit, pi)


def wr_adjusted(ds: AnalysisDataset, floor: float = PROPENSITY_FLOOR,
                intercept_only: bool = False) -> WrEstimate:
    fit = fit_adjusted(ds, floor, intercept_only)
    n, d = win_probabilities(fit.cdf_a, fit.cdf_b)
    if d <= 0:
        raise DegenerateDenominator("adjusted: estimated loss probability is 0")
    return WrEstimate(theta=n / d, p_win=n, p_loss=d, method="adjusted")


def _propensity_term(ds, pieces, pi, floor, step=1e-6):
    """Influence contribution of the estimated logistic coefficients.

    theta depends on beta through the weights of observed survivors; the
    derivative is taken by central differences with the data held fixed and
    multiplied by each subject's influence on beta, n * I^-1 x_i (r_i - pi_i).
    """
    n = len(ds)
    extra = np.zeros(n)

    def theta_at(piece_idx, beta):
        p = pi.copy()
        piece = pieces[piece_idx]
        p[piece.rows] = expit(piece.design @ beta)
        cdfs = [_arm_cdf(ds, q, p, 0.0) for q in pieces]
        w, l = win_probabilities(*cdfs)
        return w / l

    for k, piece in enumerate(pieces):
        if piece.fit is None or piece.design.shape[1] == 1:
            continue  # a constant propensity cancels out of the weighted CDF
        beta = piece.fit.beta
        grad = np.empty(beta.size)
        for j in range(beta.size):
            e = np.zeros(beta.size)
            e[j] = step
            grad[j] = (theta_at(k, beta + e) - theta_at(k, beta - e)) / (2 * step)
        x = piece.design
        p = pi[piece.rows]
        info = x.T @ (x * (p * (1.0 - p))[:, None])
        resid = ds.r2[piece.rows] - p
        extra[piece.rows] = n * (x * resid[:, None]) @ np.linalg.solve(info, grad)
    return extra


def adjusted_if_variance(ds: AnalysisDataset, floor: float = PROPENSITY_FLOOR,
                         intercept_only: bool = False) -> IfDecomposition:
    """Influence decomposition with inverse observation-probability weights beyond h.

    With covariates in the missingness model, the influence of the estimated
    logistic coefficients is added; an intercept-only model needs no such term.
    """
    pieces, pi = _fit_pieces(ds, floor, intercept_only)
    arm, s, d = km_scores(ds)
    dec = if_core(arm, s, d, ds.config.h, w_hi=1.0 / pi)
    extra = _propensity_term(ds, pieces, pi, floor)
    if not extra.any():
        return dec
    return replace(dec, phi=dec.phi + extra)
