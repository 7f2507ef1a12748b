"""Monte Carlo harness: data-generating process, truth oracle, replicated scenarios.

Gamma variates use shape ``alpha`` and *rate* ``lam`` (numpy scale = 1/lam).
The standard parameter sets only give plausible trials under this reading:
with lam taken as a scale, Gamma(2.5, 0.04) has mean 0.1 and every subject
dies on day one.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from functools import partial

import numpy as np
from scipy.special import expit, logit

from .covadjust import adjusted_if_variance
from .data import ARM_A, ARM_B, AnalysisDataset, StudyConfig
from .errors import DegenerateDenominator, ParseError, TruthUnavailable, WinRatioError
from .estimators import pocock_estimate, wr_sscore
from .inference import (bootstrap, bt_qt_ci, bt_wald_ci, if_variance, if_wald_ci,
                        pocock_ustat_variance, wald_ci, CiKind)

METHODS = ("sscore-if", "sscore-bt-wald", "sscore-bt-qt", "pocock", "adjusted")
DEFAULT_METHODS = ("sscore-if", "pocock")


@dataclass(frozen=True)
class ArmParams:
    shape_t: float
    rate_t: float
    mu: float
    sigma: float
    miss_prob: float = 0.0
    shape_c: float | None = None
    rate_c: float | None = None

    def __post_init__(self):
        for name in ("shape_t", "rate_t", "sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if (self.shape_c is None) != (self.rate_c is None):
            raise ValueError("give both shape_c and rate_c, or neither")
        if self.shape_c is not None and not (self.shape_c > 0 and self.rate_c > 0):
            raise ValueError("censoring gamma parameters must be > 0")
        if not 0.0 <= self.miss_prob <= 1.0:
            raise ValueError("miss_prob must lie in [0, 1]")

    @property
    def censored(self) -> bool:
        return self.shape_c is not None


@dataclass(frozen=True)
class MarX:
    """Binary covariate X ~ Bernoulli(p_x) shifting Y2's mean and the missingness logit."""

    delta_y: float = 10.0
    delta_r: float = 1.5
    p_x: float = 0.5


@dataclass(frozen=True)
class SimScenario:
    name: str
    arm_a: ArmParams
    arm_b: ArmParams
    n_a: int = 1000
    n_b: int = 1000
    h: float = 90.0
    tau: float = 50.0
    marx: MarX | None = None

    def __post_init__(self):
        if self.n_a < 1 or self.n_b < 1:
            raise ValueError("arm sizes must be >= 1")

    @property
    def config(self) -> StudyConfig:
        return StudyConfig(self.h, self.tau)

    @property
    def key(self) -> int:
        return zlib.crc32(self.name.encode())

    def full_data(self) -> "SimScenario":
        """Same outcome distributions with censoring and missingness switched off."""
        def strip(p):
            return replace(p, miss_prob=0.0, shape_c=None, rate_c=None)
        return replace(self, arm_a=strip(self.arm_a), arm_b=strip(self.arm_b),
                       marx=None if self.marx is None else replace(self.marx, delta_r=0.0))

    def to_dict(self) -> dict:
        return asdict(self)


def _arm_draws(p: ArmParams, n: int, rng, h, tau, marx):
    x = rng.binomial(1, marx.p_x, n).astype(float) if marx else np.zeros(n)
    t = rng.gamma(p.shape_t, 1.0 / p.rate_t, n)
    c = rng.gamma(p.shape_c, 1.0 / p.rate_c, n) if p.censored else np.full(n, np.inf)
    mu = p.mu + (marx.delta_y * x if marx else 0.0)
    y2 = np.clip(rng.normal(mu, p.sigma, n), 0.0, tau)
    u = rng.random(n)
    if marx and p.miss_prob not in (0.0, 1.0):
        miss_p = expit(logit(p.miss_prob) + marx.delta_r * x)
    else:
        miss_p = np.full(n, p.miss_prob)
    return x, t, c, y2, u < miss_p


def _observe(p, n, rng, h, tau, marx):
    x, t, c, y2, missing = _arm_draws(p, n, rng, h, tau, marx)
    alive = t > h
    survivor = alive & (c >= h)
    y1 = np.where(survivor, h + 1.0, np.minimum(np.minimum(t, c), h))
    delta1 = np.where(alive, survivor, t <= c).astype(np.int8)
    r2 = (survivor & ~missing).astype(np.int8)
    y2_obs = np.where(r2 == 1, y2, np.nan)
    return x, y1, delta1, y2_obs, r2


def _streams(seed):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    a, b = ss.spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def gen_dataset(sc: SimScenario, seed) -> AnalysisDataset:
    """One observed trial dataset; arm A and arm B use independent child streams of ``seed``."""
    rng_a, rng_b = _streams(seed)
    xa, y1a, d1a, y2a, r2a = _observe(sc.arm_a, sc.n_a, rng_a, sc.h, sc.tau, sc.marx)
    xb, y1b, d1b, y2b, r2b = _observe(sc.arm_b, sc.n_b, rng_b, sc.h, sc.tau, sc.marx)
    arm = np.concatenate((np.full(sc.n_a, ARM_A), np.full(sc.n_b, ARM_B)))
    cov = np.concatenate((xa, xb))[:, None] if sc.marx else None
    return AnalysisDataset(sc.config, arm, np.concatenate((y1a, y1b)),
                           np.concatenate((d1a, d1b)), np.concatenate((y2a, y2b)),
                           np.concatenate((r2a, r2b)), cov, ("x1",) if sc.marx else None)


def full_scores(p: ArmParams, n: int, rng, h, tau, marx=None) -> np.ndarray:
    """Uncoarsened S-scores Y1 + I(Y1 > h) * Y2 for ``n`` subjects."""
    _, t, _, y2, _ = _arm_draws(replace(p, shape_c=None, rate_c=None), n, rng, h, tau, marx)
    y1 = np.where(t <= h, t, h + 1.0)
    return y1 + np.where(t > h, y2, 0.0)


@dataclass(frozen=True)
class OracleResult:
    theta: float
    se: float
    wins: int
    losses: int
    n_pairs: int


def true_wr_oracle(sc: SimScenario, n_super: int = 10**6, n_pairs: int = 10**6,
                   seed=20240601) -> OracleResult:
    """Win ratio of the full-data outcome distributions by pair sampling.

    A super-population of ``n_super`` subjects per arm is generated, and
    ``n_pairs`` independent cross-arm pairs are drawn from it and compared.
    ``se`` is the multinomial delta-method standard error of wins/losses.
    """
    rng_a, rng_b = _streams(seed)
    full = sc.full_data()
    s_a = full_scores(full.arm_a, n_super, rng_a, sc.h, sc.tau, full.marx)
    s_b = full_scores(full.arm_b, n_super, rng_b, sc.h, sc.tau, full.marx)
    pick = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])
    i = pick.integers(0, n_super, n_pairs)
    j = pick.integers(0, n_super, n_pairs)
    wins = int(np.count_nonzero(s_a[i] > s_b[j]))
    losses = int(np.count_nonzero(s_a[i] < s_b[j]))
    if losses == 0:
        raise DegenerateDenominator("no losses among sampled pairs")
    theta = wins / losses
    se = theta * math.sqrt((1.0 / wins + 1.0 / losses)) if wins else float("inf")
    return OracleResult(theta, se, wins, losses, n_pairs)


@dataclass(frozen=True)
class Metrics:
    arb_pct: float
    rmse: float
    cp_pct: float
    width: float


def compute_metrics(estimates, cis, truth: float) -> Metrics:
    """ARB%, RMSE, coverage % and mean width; sums are exactly rounded (order-free)."""
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise ValueError("no estimates")
    n = est.size
    dev = est - truth
    arb = abs(math.fsum(dev / truth) / n) * 100.0
    rmse = math.sqrt(math.fsum(dev * dev) / n)
    if cis is None or len(cis) == 0:
        return Metrics(arb, rmse, float("nan"), float("nan"))
    bounds = np.array([(c.lower, c.upper) if hasattr(c, "lower") else tuple(c) for c in cis], dtype=float)
    cover = np.count_nonzero((bounds[:, 0] <= truth) & (truth <= bounds[:, 1]))
    return Metrics(arb, rmse, 100.0 * cover / len(bounds),
                   math.fsum(bounds[:, 1] - bounds[:, 0]) / len(bounds))


@dataclass(frozen=True)
class MethodSummary:
    method: str
    arb_pct: float
    rmse: float
    cp_pct: float
    width: float
    successes: int
    failures: int
    mean_theta: float


@dataclass(frozen=True)
class SimSummary:
    scenario: str
    truth: float
    n_reps: int
    seed: int
    rows: tuple

    def row(self, method: str) -> MethodSummary:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    @property
    def failures(self) -> int:
        return max((r.failures for r in self.rows), default=0)


def _one_replicate(sc, methods, seed, alpha, B, r):
    ss = np.random.SeedSequence([seed, sc.key, r])
    data_seed, boot_seed = ss.spawn(2)
    ds = gen_dataset(sc, data_seed)
    out = {}
    need_boot = any(m.startswith("sscore-bt") for m in methods)
    try:
        dec = if_variance(ds)
        theta = dec.theta
        if "sscore-if" in methods:
            ci = if_wald_ci(dec, alpha)
            out["sscore-if"] = (theta, ci.lower, ci.upper)
        if need_boot:
            res = bootstrap(ds, wr_sscore, B, int(boot_seed.generate_state(1)[0]), n_jobs=1)
            if "sscore-bt-wald" in methods:
                ci = bt_wald_ci(res, theta, alpha)
                out["sscore-bt-wald"] = (theta, ci.lower, ci.upper)
            if "sscore-bt-qt" in methods:
                ci = bt_qt_ci(res, alpha)
                out["sscore-bt-qt"] = (theta, ci.lower, ci.upper)
    except WinRatioError:
        pass
    if "pocock" in methods:
        try:
            est, _ = pocock_estimate(ds)
            ci = wald_ci(est.theta, math.sqrt(pocock_ustat_variance(ds)), alpha, CiKind.U_WALD)
            out["pocock"] = (est.theta, ci.lower, ci.upper)
        except WinRatioError:
            pass
    if "adjusted" in methods:
        try:
            dec = adjusted_if_variance(ds)
            ci = if_wald_ci(dec, alpha)
            out["adjusted"] = (dec.theta, ci.lower, ci.upper)
        except WinRatioError:
            pass
    return out


def _replicate_block(sc, methods, seed, alpha, B, reps):
    return [_one_replicate(sc, methods, seed, alpha, B, r) for r in reps]


def run_replicates(sc, methods, n_reps, seed, alpha=0.05, B=500, n_jobs=1):
    """Per-replicate ``{method: (theta, lower, upper)}`` dicts, in replicate order."""
    work = partial(_replicate_block, sc, tuple(methods), seed, alpha, B)
    if n_jobs > 1:
        blocks = [b for b in np.array_split(np.arange(n_reps), n_jobs * 4) if b.size]
        with ProcessPoolExecutor(n_jobs) as pool:
            return [r for block in pool.map(work, blocks) for r in block]
    return work(range(n_reps))


def run_scenario(sc: SimScenario, methods=DEFAULT_METHODS, n_reps: int = 500, seed: int = 0,
                 B: int = 500, truth: float | None = None, alpha: float = 0.05,
                 n_jobs: int = 1, oracle_pairs: int = 10**6) -> SimSummary:
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
    if truth is None:
        try:
            truth = true_wr_oracle(sc, n_super=oracle_pairs, n_pairs=oracle_pairs).theta
        except WinRatioError as exc:
            raise TruthUnavailable(str(exc))
    results = run_replicates(sc, methods, n_reps, seed, alpha, B, n_jobs)
    rows = []
    for m in methods:
        got = [r[m] for r in results if m in r]
        failures = n_reps - len(got)
        if failures:
            warnings.warn(f"{sc.name}/{m}: {failures} of {n_reps} replicates failed and were excluded")
        if got:
            arr = np.array(got)
            met = compute_metrics(arr[:, 0], arr[:, 1:], truth)
            mean_theta = math.fsum(arr[:, 0]) / len(arr)
        else:
            met = Metrics(*(float("nan"),) * 4)
            mean_theta = float("nan")
        rows.append(MethodSummary(m, met.arb_pct, met.rmse, met.cp_pct, met.width,
                                  len(got), failures, mean_theta))
    return SimSummary(sc.name, float(truth), n_reps, seed, tuple(rows))


# --- parameter grid -------------------------------------------------------

THETA_SETS = {
    1: (ArmParams(2.5, 0.04, 10.0, 10.0), ArmParams(2.5, 0.04, 10.0, 10.0)),
    2: (ArmParams(2.5, 0.04, 10.0, 10.0), ArmParams(4.0, 0.10, 20.0, 20.0)),
}
CENSORING = {
    "none": ((None, None), (None, None)),
    "homo20": ((1.8, 0.01), (1.8, 0.01)),
    "homo40": ((1.8, 0.02), (1.8, 0.02)),
    "het20": ((3.2, 0.04), (1.5, 0.08)),
    "het40": ((3.2, 0.02), (1.5, 0.05)),
}
MISSINGNESS = {
    "none": (0.0, 0.0),
    "mcar20": (0.2, 0.2),
    "mcar40": (0.4, 0.4),
    "mar20": (0.15, 0.25),
    "mar40": (0.3, 0.5),
}


def make_scenario(theta: int, censoring: str = "none", missing: str = "none", n: int = 1000,
                  marx: MarX | None = None, name: str | None = None) -> SimScenario:
    base_a, base_b = THETA_SETS[theta]
    (sca, rca), (scb, rcb) = CENSORING[censoring]
    ma, mb = MISSINGNESS[missing]
    arm_a = replace(base_a, miss_prob=ma, shape_c=sca, rate_c=rca)
    arm_b = replace(base_b, miss_prob=mb, shape_c=scb, rate_c=rcb)
    name = name or f"theta{theta}-{censoring}-{missing}-n{n}" + ("-marx" if marx else "")
    return SimScenario(name, arm_a, arm_b, n, n, marx=marx)


def standard_grid(sizes=(100, 1000)):
    return [make_scenario(t, c, m, n) for n in sizes for t in THETA_SETS
            for c in CENSORING for m in MISSINGNESS]


# Covariate-driven missingness needs many survivor pairs to matter, so the
# MAR-X scenario uses long survival in both arms (P(T > 90) ~ 0.9) and the
# 0.3/0.5 baseline missingness of the MAR grid.
MARX_SCENARIO = SimScenario(
    "marx", ArmParams(2.5, 0.01, 10.0, 10.0, 0.3), ArmParams(2.5, 0.01, 10.0, 10.0, 0.5),
    marx=MarX())

PRESETS = {
    "base-theta1": make_scenario(1, name="base-theta1"),
    "base-theta2": make_scenario(2, name="base-theta2"),
    "base-theta1-clean": make_scenario(1, name="base-theta1-clean"),
    "base-theta2-clean": make_scenario(2, name="base-theta2-clean"),
    "base-theta2-mar40": make_scenario(2, "none", "mar40", name="base-theta2-mar40"),
    "base-theta2-het40-mar40": make_scenario(2, "het40", "mar40", name="base-theta2-het40-mar40"),
    "base-theta1-homo40-mcar40": make_scenario(1, "homo40", "mcar40", name="base-theta1-homo40-mcar40"),
    "marx": MARX_SCENARIO,
}
for _sc in standard_grid():
    PRESETS.setdefault(_sc.name, _sc)


def preset(name: str) -> SimScenario:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS)[:12])}, ...")


# --- grid config files ----------------------------------------------------

_ARM_KEYS = {"shape_t", "rate_t", "mu", "sigma", "miss_prob", "shape_c", "rate_c"}


def _apply(sc: SimScenario, key: str, value: str, lineno: int) -> SimScenario:
    def num():
        try:
            return float(value)
        except ValueError:
            raise ParseError(f"{key}: expected a number, got {value!r}", row=lineno)

    if key == "preset":
        try:
            return replace(preset(value), name=sc.name)
        except KeyError as exc:
            raise ParseError(str(exc.args[0]), row=lineno)
    if key in ("n", "n_a", "n_b"):
        v = int(num())
        return replace(sc, **({"n_a": v, "n_b": v} if key == "n" else {key: v}))
    if key in ("h", "tau"):
        return replace(sc, **{key: num()})
    if key == "censoring" and value.lower() == "none":
        return replace(sc, arm_a=replace(sc.arm_a, shape_c=None, rate_c=None),
                       arm_b=replace(sc.arm_b, shape_c=None, rate_c=None))
    if key in ("delta_y", "delta_r", "p_x"):
        return replace(sc, marx=replace(sc.marx or MarX(), **{key: num()}))
    base, _, arm = key.rpartition("_")
    if base in _ARM_KEYS and arm in ("a", "b"):
        attr = "arm_a" if arm == "a" else "arm_b"
        p = getattr(sc, attr)
        fields = {base: num()}
        if base in ("shape_c", "rate_c") and p.shape_c is None:
            fields.setdefault("shape_c", 1.0)
            fields.setdefault("rate_c", 1.0)
            fields[base] = num()
        return replace(sc, **{attr: replace(p, **fields)})
    raise ParseError(f"unknown key {key!r}", row=lineno)


def parse_grid(text: str) -> list[SimScenario]:
    """Parse ``[scenario-name]`` sections of ``key = value`` lines.

    Each section starts from ``preset = <name>`` (default base-theta1) and
    applies overrides such as ``n = 500``, ``miss_prob_b = 0.5`` or
    ``rate_c_a = 0.02``.
    """
    scenarios = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ParseError("malformed section header", row=lineno)
            if current is not None:
                scenarios.append(current)
            current = replace(PRESETS["base-theta1"], name=line[1:-1].strip())
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError("expected 'key = value'", row=lineno)
        if current is None:
            raise ParseError("setting outside of a [scenario] section", row=lineno)
        try:
            current = _apply(current, key.strip().lower(), value.strip(), lineno)
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(str(exc), row=lineno)
    if current is not None:
        scenarios.append(current)
    if not scenarios:
        raise ParseError("no scenarios defined")
    return scenarios


def read_grid(path) -> list[SimScenario]:
    with open(path) as fh:
        return parse_grid(fh.read())


# --- output ---------------------------------------------------------------

CSV_FIELDS = ("scenario", "method", "truth", "n_reps", "successes", "failures",
              "mean_theta", "arb_pct", "rmse", "cp_pct", "width")


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(round(v, 12))
    return str(v)


def summaries_to_csv(summaries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for s in summaries:
        for r in s.rows:
            w.writerow([_fmt(v) for v in (s.scenario, r.method, s.truth, s.n_reps, r.successes,
                                          r.failures, r.mean_theta, r.arb_pct, r.rmse,
                                          r.cp_pct, r.width)])
    return buf.getvalue()


def summaries_to_json(summaries, extra=None) -> str:
    def clean(v):
        return None if isinstance(v, float) and math.isnan(v) else v

    doc = {
        "scenarios": [
            {"scenario": s.scenario, "truth": s.truth, "n_reps": s.n_reps, "seed": s.seed,
             "methods": [{k: clean(v) for k, v in asdict(r).items()} for r in s.rows]}
            for s in summaries],
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True)
