"""Trial data model, validation, S-score transform and CSV ingestion.

A dataset is stored column-wise (one numpy array per field) because every
estimator works on whole arms at once.  ``SubjectRecord`` is the row view used
for construction, the pairwise Pocock rule, and round-tripping.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ParseError, ValidationError

ARM_A = 0
ARM_B = 1
_ARM_LABELS = ("A", "B")

MISSING_TOKENS = frozenset({"", "na", "nan"})


@dataclass(frozen=True)
class StudyConfig:
    h: float
    tau: float
    alpha: float = 0.05

    def __post_init__(self):
        for name in ("h", "tau"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v!r}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")

    @property
    def survivor_time(self) -> float:
        """Encoded first-endpoint value for subjects event-free past the horizon."""
        return self.h + 1.0


class SubjectRecord(NamedTuple):
    arm: str
    y1_obs: float
    delta1: int
    y2: float | None = None
    r2: int = 0
    covariates: tuple | None = None


class ScoreObservation(NamedTuple):
    arm: str
    s: float
    delta_s: int


class Violation(NamedTuple):
    kind: str
    index: int | None
    message: str

    def __str__(self):
        where = f"record {self.index}: " if self.index is not None else ""
        return f"{self.kind}: {where}{self.message}"


class Sensitivity(str, Enum):
    BEST = "best"
    WORST = "worst"


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


def parse_arm(label) -> int:
    key = str(label).strip().upper()
    if key == "A":
        return ARM_A
    if key == "B":
        return ARM_B
    raise ValueError(f"arm must be 'a' or 'b', got {label!r}")


class AnalysisDataset:
    """Immutable two-arm dataset.

    ``y2`` is NaN wherever the second endpoint is absent.  ``covariates`` is an
    ``(n, k)`` array or None.
    """

    __slots__ = ("config", "arm", "y1", "delta1", "y2", "r2", "covariates",
                 "covariate_names")

    def __init__(self, config: StudyConfig, arm, y1, delta1, y2=None, r2=None,
                 covariates=None, covariate_names=None):
        n = len(y1)
        object.__setattr__(self, "config", config)
        object.__setattr__(self, "arm", _frozen(np.asarray(arm, dtype=np.int8)))
        object.__setattr__(self, "y1", _frozen(np.asarray(y1, dtype=float)))
        object.__setattr__(self, "delta1", _frozen(np.asarray(delta1, dtype=np.int8)))
        if y2 is None:
            y2 = np.full(n, np.nan)
        if r2 is None:
            r2 = np.where(np.isnan(np.asarray(y2, dtype=float)), 0, 1)
        object.__setattr__(self, "y2", _frozen(np.asarray(y2, dtype=float)))
        object.__setattr__(self, "r2", _frozen(np.asarray(r2, dtype=np.int8)))
        if covariates is not None:
            covariates = np.asarray(covariates, dtype=float)
            if covariates.ndim == 1:
                covariates = covariates[:, None]
            if covariate_names is None:
                covariate_names = tuple(f"x{j + 1}" for j in range(covariates.shape[1]))
            covariates = _frozen(covariates)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "covariate_names",
                           tuple(covariate_names) if covariate_names else ())
        lengths = {len(self.arm), len(self.y1), len(self.delta1), len(self.y2), len(self.r2)}
        if covariates is not None:
            lengths.add(covariates.shape[0])
        if len(lengths) != 1:
            raise ValueError("all columns must have the same length")

    def __setattr__(self, name, value):
        raise AttributeError("AnalysisDataset is immutable")

    def __len__(self):
        return len(self.y1)

    def __reduce__(self):
        return (AnalysisDataset, (self.config, self.arm, self.y1, self.delta1, self.y2, self.r2,
                                  self.covariates, self.covariate_names or None))

    def __repr__(self):
        return (f"AnalysisDataset(n_a={self.n_a}, n_b={self.n_b}, h={self.config.h}, "
                f"tau={self.config.tau}, covariates={list(self.covariate_names)})")

    @classmethod
    def from_records(cls, config: StudyConfig, records: Iterable[SubjectRecord]):
        records = list(records)
        arm, y1, d1, y2, r2, xs = [], [], [], [], [], []
        for i, rec in enumerate(records):
            try:
                arm.append(parse_arm(rec.arm))
            except ValueError as exc:
                raise ValidationError([Violation("InvariantViolation", i, str(exc))])
            y1.append(float(rec.y1_obs))
            d1.append(int(rec.delta1))
            y2.append(np.nan if rec.y2 is None else float(rec.y2))
            r2.append(int(rec.r2))
            xs.append(rec.covariates)
        covariates = None
        if any(x is not None for x in xs):
            lengths = [None if x is None else len(x) for x in xs]
            k = next(L for L in lengths if L is not None)
            bad = [i for i, L in enumerate(lengths) if L != k]
            if bad:
                raise ValidationError([
                    Violation("CovariateLengthMismatch", i,
                              f"expected {k} covariates, got {lengths[i] or 0}")
                    for i in bad])
            covariates = np.array(xs, dtype=float).reshape(len(xs), k)
        return cls(config, arm, y1, d1, y2, r2, covariates)

    @property
    def records(self) -> list[SubjectRecord]:
        out = []
        for i in range(len(self)):
            y2 = None if np.isnan(self.y2[i]) else float(self.y2[i])
            x = None if self.covariates is None else tuple(self.covariates[i].tolist())
            out.append(SubjectRecord(_ARM_LABELS[self.arm[i]], float(self.y1[i]),
                                     int(self.delta1[i]), y2, int(self.r2[i]), x))
        return out

    @property
    def n(self) -> int:
        return len(self.y1)

    @property
    def n_a(self) -> int:
        return int(np.count_nonzero(self.arm == ARM_A))

    @property
    def n_b(self) -> int:
        return int(np.count_nonzero(self.arm == ARM_B))

    @property
    def survivor(self):
        """Mask of subjects observed event-free through the horizon."""
        return (self.y1 == self.config.survivor_time) & (self.delta1 == 1)

    def take(self, idx) -> "AnalysisDataset":
        idx = np.asarray(idx)
        cov = None if self.covariates is None else self.covariates[idx]
        return AnalysisDataset(self.config, self.arm[idx], self.y1[idx], self.delta1[idx],
                               self.y2[idx], self.r2[idx], cov, self.covariate_names)

    def replace(self, **columns) -> "AnalysisDataset":
        fields = dict(config=self.config, arm=self.arm, y1=self.y1, delta1=self.delta1,
                      y2=self.y2, r2=self.r2, covariates=self.covariates,
                      covariate_names=self.covariate_names or None)
        fields.update(columns)
        return AnalysisDataset(**fields)

    def swap_arms(self) -> "AnalysisDataset":
        return self.replace(arm=1 - self.arm)

    def summary(self) -> dict:
        surv = self.survivor
        n_surv = int(surv.sum())
        return {
            "n_a": self.n_a,
            "n_b": self.n_b,
            "censored_pct": 100.0 * float(np.mean(self.delta1 == 0)),
            "missing_y2_among_survivors_pct":
                100.0 * float(np.mean(self.r2[surv] == 0)) if n_surv else 0.0,
        }


def find_violations(ds: AnalysisDataset) -> list[Violation]:
    cfg = ds.config
    h, top = cfg.h, cfg.survivor_time
    out = []
    if ds.n_a == 0:
        out.append(Violation("EmptyArm", None, "arm A has no records"))
    if ds.n_b == 0:
        out.append(Violation("EmptyArm", None, "arm B has no records"))

    y1, d1, y2, r2 = ds.y1, ds.delta1, ds.y2, ds.r2
    checks = [
        (~np.isin(ds.arm, (ARM_A, ARM_B)), "arm must be A or B"),
        (~(np.isfinite(y1) & (y1 > 0) & (y1 <= top)), f"time must lie in (0, h+1] = (0, {top:g}]"),
        ((y1 > h) & (y1 < top), f"time in (h, h+1) = ({h:g}, {top:g}) is not a valid encoding"),
        (~np.isin(d1, (0, 1)), "event must be 0 or 1"),
        (~np.isin(r2, (0, 1)), "y2-observed flag must be 0 or 1"),
        ((d1 == 0) & (y1 > h), "censored records must have time <= h; survivors use time=h+1 with event=1"),
        ((r2 == 1) & ~((y1 == top) & (d1 == 1)), "observed y2 requires survival past h (time=h+1, event=1)"),
        ((r2 == 1) & ~(np.isfinite(y2) & (y2 >= 0) & (y2 <= cfg.tau)), f"y2 must lie in [0, tau] = [0, {cfg.tau:g}]"),
        ((r2 == 0) & ~np.isnan(y2), "y2 present but flagged unobserved"),
    ]
    if ds.covariates is not None:
        checks.append((~np.all(np.isfinite(ds.covariates), axis=1), "covariates must be finite"))
    for mask, msg in checks:
        for i in np.flatnonzero(mask):
            out.append(Violation("InvariantViolation", int(i), msg))
    out.sort(key=lambda v: (-1 if v.index is None else v.index))
    return out


def validate_dataset(ds: AnalysisDataset) -> AnalysisDataset:
    """Return ``ds`` unchanged if valid, else raise ValidationError listing every violation."""
    violations = find_violations(ds)
    if violations:
        raise ValidationError(violations)
    return ds


def score_arrays(ds: AnalysisDataset):
    """Return ``(arm, s, delta_s)`` arrays for the coarsened S-score."""
    h = ds.config.h
    observed_y2 = np.where(ds.r2 == 1, np.nan_to_num(ds.y2), 0.0)
    s = ds.y1 + np.where(ds.y1 > h, observed_y2, 0.0)
    delta_s = ((ds.delta1 == 1) & (ds.y1 <= h)) | ((ds.r2 == 1) & (ds.y1 == ds.config.survivor_time))
    return ds.arm, s, delta_s.astype(np.int8)


def to_score_observations(ds: AnalysisDataset) -> list[ScoreObservation]:
    arm, s, d = score_arrays(ds)
    return [ScoreObservation(_ARM_LABELS[a], float(v), int(e)) for a, v, e in zip(arm, s, d)]


def apply_sensitivity_transform(ds: AnalysisDataset, mode, eps: float = 1.0) -> AnalysisDataset:
    """Impute censored first-endpoint records in the favourable/unfavourable direction.

    Best case: censored arm-A subjects survive the horizon (second endpoint
    missing) and censored arm-B subjects die ``eps`` after censoring, capped at
    h.  Worst case swaps the roles of the arms.
    """
    mode = Sensitivity(mode)
    h = ds.config.h
    favoured = ARM_A if mode is Sensitivity.BEST else ARM_B
    censored = ds.delta1 == 0
    up = censored & (ds.arm == favoured)
    down = censored & (ds.arm != favoured)
    if not (up.any() or down.any()):
        return ds
    y1 = ds.y1.copy()
    y1[up] = ds.config.survivor_time
    y1[down] = np.minimum(ds.y1[down] + eps, h)
    delta1 = np.where(censored, 1, ds.delta1)
    r2 = np.where(censored, 0, ds.r2)
    y2 = np.where(censored, np.nan, ds.y2)
    return ds.replace(y1=y1, delta1=delta1, r2=r2, y2=y2)


def read_config(path) -> StudyConfig:
    """Parse a ``key = value`` file with keys h, tau and optionally alpha."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                key, _, val = line.partition(":")
            key = key.strip().lower()
            if key not in ("h", "tau", "alpha"):
                raise ParseError(f"unknown config key {key!r}", row=lineno)
            try:
                values[key] = float(val)
            except ValueError:
                raise ParseError(f"value for {key!r} is not a number: {val.strip()!r}", row=lineno)
    missing = {"h", "tau"} - values.keys()
    if missing:
        raise ParseError(f"config is missing {sorted(missing)}")
    return StudyConfig(**values)


def _number(text, row, column):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"expected a number, got {text!r}", row=row, column=column)
    if math.isnan(v):
        raise ParseError("NaN is not allowed here", row=row, column=column)
    return v


def read_csv(path, config: StudyConfig, covariates: Sequence[str] | None = None,
             validate: bool = True) -> AnalysisDataset:
    """Load a dataset with columns ``arm,time,event,y2[,x1..xk]``.

    ``covariates`` selects covariate columns by name; by default every column
    after the four required ones is used.  Row numbers in errors count the
    header as row 1.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise ParseError("file is empty")
        lower = [c.lower() for c in header]
        for col in ("arm", "time", "event", "y2"):
            if col not in lower:
                raise ParseError(f"missing required column {col!r}", row=1)
        pos = {c: lower.index(c) for c in ("arm", "time", "event", "y2")}
        extra = [c for c in header if c.lower() not in pos]
        if covariates is None:
            cov_names = extra
        else:
            cov_names = list(covariates)
            unknown = [c for c in cov_names if c not in header]
            if unknown:
                raise ParseError(f"covariate columns not found: {unknown}", row=1)
        cov_pos = [header.index(c) for c in cov_names]

        arm, y1, d1, y2, xs = [], [], [], [], []
        for row_no, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=row_no)
            try:
                arm.append(parse_arm(row[pos["arm"]]))
            except ValueError as exc:
                raise ParseError(str(exc), row=row_no, column="arm")
            y1.append(_number(row[pos["time"]], row_no, "time"))
            ev = row[pos["event"]].strip()
            if ev not in ("0", "1"):
                try:
                    evf = float(ev)
                except ValueError:
                    evf = None
                if evf not in (0.0, 1.0):
                    raise ParseError(f"event must be 0 or 1, got {ev!r}", row=row_no, column="event")
                ev = str(int(evf))
            d1.append(int(ev))
            cell = row[pos["y2"]].strip()
            y2.append(np.nan if cell.lower() in MISSING_TOKENS else _number(cell, row_no, "y2"))
            xs.append([_number(row[j], row_no, header[j]) for j in cov_pos])

    cov = np.array(xs, dtype=float).reshape(len(xs), len(cov_pos)) if cov_pos else None
    ds = AnalysisDataset(config, arm, y1, d1, y2, None, cov, cov_names or None)
    return validate_dataset(ds) if validate else ds


def write_csv(ds: AnalysisDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arm", "time", "event", "y2", *(ds.covariate_names or ())])
        for i in range(len(ds)):
            y2 = "" if ds.r2[i] == 0 else repr(float(ds.y2[i]))
            x = [] if ds.covariates is None else [repr(float(v)) for v in ds.covariates[i]]
            w.writerow([_ARM_LABELS[ds.arm[i]].lower(), repr(float(ds.y1[i])),
                        int(ds.delta1[i]), y2, *x])


def example_data_path():
    """Path of the small synthetic trial bundled with the package (h = 90, tau = 50)."""
    from importlib.resources import files
    return files("winratio") / "data" / "example_trial.csv"
