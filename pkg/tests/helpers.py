"""Shared builders and hypothesis strategies for the test modules."""
import numpy as np
from hypothesis import strategies as st

from winratio.data import ARM_A, ARM_B, AnalysisDataset, StudyConfig

H, TAU = 90.0, 50.0
CFG = StudyConfig(H, TAU)


def make_ds(arm, y1, delta1, y2=None, covariates=None, config=CFG):
    """Dataset from plain lists; y2 entries of None mean missing."""
    n = len(arm)
    if y2 is None:
        y2 = [None] * n
    y2 = np.array([np.nan if v is None else v for v in y2], dtype=float)
    return AnalysisDataset(config, np.asarray(arm), np.asarray(y1, dtype=float),
                           np.asarray(delta1), y2, None, covariates,
                           None if covariates is None else [f"x{k + 1}" for k in range(np.shape(covariates)[1])])


def complete_from_scores(s_a, s_b, h=H):
    """Complete dataset whose S-scores are exactly ``s_a`` and ``s_b`` (values > h are survivors)."""
    arm, y1, y2 = [], [], []
    for z, ss in ((ARM_A, s_a), (ARM_B, s_b)):
        for s in ss:
            arm.append(z)
            if s > h:
                y1.append(h + 1.0)
                y2.append(s - h - 1.0)
            else:
                y1.append(s)
                y2.append(None)
    return make_ds(arm, y1, [1] * len(arm), y2)


# small integer-valued S-scores give plenty of exact ties
_deaths = st.integers(1, 6).map(float)
_survivor = st.integers(0, 4).map(lambda v: H + 1.0 + v)
score_values = st.one_of(_deaths, _survivor)


@st.composite
def complete_scores(draw, max_n=12):
    s_a = draw(st.lists(score_values, min_size=1, max_size=max_n))
    s_b = draw(st.lists(score_values, min_size=1, max_size=max_n))
    return s_a, s_b


@st.composite
def coarsened_datasets(draw, max_n=15, covariate=False):
    """Valid datasets with censoring before h, survivors, and missing Y2."""
    n_a = draw(st.integers(1, max_n))
    n_b = draw(st.integers(1, max_n))
    arm, y1, d1, y2, x = [], [], [], [], []
    for z, n in ((ARM_A, n_a), (ARM_B, n_b)):
        for _ in range(n):
            kind = draw(st.sampled_from(["death", "cens", "surv", "lost"]))
            arm.append(z)
            x.append(draw(st.sampled_from([0.0, 1.0])))
            if kind in ("death", "cens"):
                y1.append(float(draw(st.integers(1, 8)) * 10))
                d1.append(1 if kind == "death" else 0)
                y2.append(None)
            else:
                y1.append(H + 1.0)
                d1.append(1)
                y2.append(float(draw(st.integers(0, 5)) * 10) if kind == "surv" else None)
    cov = np.array(x)[:, None] if covariate else None
    return make_ds(arm, y1, d1, y2, cov)


# criterion number -> list of (passed, detail); filled by test_acceptance, printed by conftest
ACCEPTANCE = {}
