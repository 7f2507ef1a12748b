from itertools import product

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import H, TAU, coarsened_datasets, complete_from_scores, complete_scores, make_ds
from winratio.data import SubjectRecord
from winratio.errors import AllTies, DegenerateDenominator, NoEvents
from winratio.estimators import (Outcome, fit_arms, pocock_compare_pair, pocock_estimate,
                                 pocock_matrix, pocock_tally, win_probabilities, wr_sscore)
from winratio.survfit import km_fit


def _enumerate(s_a, s_b):
    wins = sum(a > b for a, b in product(s_a, s_b))
    losses = sum(a < b for a, b in product(s_a, s_b))
    return wins / (len(s_a) * len(s_b)), losses / (len(s_a) * len(s_b))


def _complete_fits(s_a, s_b):
    return km_fit(s_a, np.ones(len(s_a))), km_fit(s_b, np.ones(len(s_b)))


class TestWinProbabilities:
    @pytest.mark.parametrize("s_a, s_b, expected", [
        ([2], [1], (1.0, 0.0)),
        ([1, 2, 3], [1, 2, 3], (1 / 3, 1 / 3)),
        ([1, 3], [2, 4], (0.25, 0.75)),
    ])
    def test_examples(self, s_a, s_b, expected):
        n, d = win_probabilities(*_complete_fits(s_a, s_b))
        assert (n, d) == pytest.approx(expected, abs=1e-15)

    @given(complete_scores())
    def test_against_enumeration(self, scores):
        s_a, s_b = scores
        n, d = win_probabilities(*_complete_fits(s_a, s_b))
        en, ed = _enumerate(s_a, s_b)
        assert abs(n - en) <= 1e-12 and abs(d - ed) <= 1e-12
        # N + D = 1 - P(tie)
        ties = sum(a == b for a, b in product(s_a, s_b)) / (len(s_a) * len(s_b))
        assert abs(n + d - (1 - ties)) <= 1e-10


class TestSscore:
    def test_identical_arms(self):
        ds = complete_from_scores([10, 40, 95, 99], [10, 40, 95, 99])
        assert wr_sscore(ds).theta == 1.0

    def test_total_dominance_is_degenerate(self):
        with pytest.raises(DegenerateDenominator):
            wr_sscore(complete_from_scores([2], [1]))

    def test_zero_numerator_allowed(self):
        assert wr_sscore(complete_from_scores([1], [2])).theta == 0.0

    def test_arm_without_events(self):
        ds = make_ds([0, 1, 1], [30.0, 20.0, 40.0], [0, 1, 1])
        with pytest.raises(NoEvents):
            wr_sscore(ds)

    def test_missing_y2_survivor_leaves_before_zero_atom(self):
        # a survivor with observed Y2 = 0 sits at h+1 together with the lost-to-follow-up
        # survivor; the latter must not count in the risk set there
        ds = make_ds([0, 0, 1, 1], [91.0, 91.0, 50.0, 91.0], [1, 1, 1, 1], [0.0, None, None, 5.0])
        f_a, _ = fit_arms(ds)
        assert f_a.grid.tolist() == [H + 1]
        assert f_a(H + 1) == 1.0

    @given(complete_scores())
    def test_label_swap(self, scores):
        ds = complete_from_scores(*scores)
        try:
            fwd = wr_sscore(ds).theta
            back = wr_sscore(ds.swap_arms()).theta
        except DegenerateDenominator:
            return
        if fwd > 0:
            assert abs(back - 1 / fwd) <= 1e-10 * max(1.0, back)

    @given(complete_scores(), st.integers(1, 5))
    def test_raising_y2_never_lowers_wins(self, scores, shift):
        s_a, s_b = scores
        ds = complete_from_scores(s_a, s_b)
        up = [s + shift if s > H and s + shift <= H + 1 + TAU else s for s in s_a]
        n0 = win_probabilities(*fit_arms(ds))[0]
        n1 = win_probabilities(*fit_arms(complete_from_scores(up, s_b)))[0]
        assert n1 >= n0 - 1e-15


class TestPocockRule:
    def rec(self, y1, d=1, y2=None):
        return SubjectRecord("A", y1, d, y2, 0 if y2 is None else 1)

    @pytest.mark.parametrize("i, j, outcome", [
        ((50, 1), (70, 1), Outcome.LOSS),
        ((91, 1, 30.0), (91, 1, 20.0), Outcome.WIN),
        ((60, 0), (70, 1), Outcome.TIE),
        ((91, 1), (91, 1, 20.0), Outcome.TIE),
        ((70, 0), (60, 1), Outcome.WIN),
        ((91, 1), (40, 0), Outcome.TIE),
    ])
    def test_rule_table(self, i, j, outcome):
        assert pocock_compare_pair(self.rec(*i), self.rec(*j)) is outcome

    def test_estimate_example(self):
        est, tally = pocock_estimate(complete_from_scores([1, 3], [2, 4]))
        assert est.theta == pytest.approx(1 / 3)
        assert (tally.wins, tally.losses, tally.ties) == (1, 3, 0)

    def test_all_ties(self):
        ds = make_ds([0, 1], [30.0, 30.0], [0, 0])
        with pytest.raises(AllTies):
            pocock_estimate(ds)

    @given(coarsened_datasets(max_n=10))
    def test_fast_path_matches_enumeration(self, ds):
        fast, slow = pocock_tally(ds, fast=True), pocock_tally(ds, fast=False)
        assert fast == slow
        recs = ds.records
        a = [r for r in recs if r.arm == "A"]
        b = [r for r in recs if r.arm == "B"]
        m = pocock_matrix(ds)
        for (p, ri), (q, rj) in product(enumerate(a), enumerate(b)):
            assert m[p, q] == pocock_compare_pair(ri, rj).value
        assert fast.total == ds.n_a * ds.n_b

    @given(complete_scores())
    def test_label_swap(self, scores):
        ds = complete_from_scores(*scores)
        try:
            fwd = pocock_estimate(ds)[0].theta
            back = pocock_estimate(ds.swap_arms())[0].theta
        except DegenerateDenominator:
            return
        if fwd > 0:
            assert abs(back - 1 / fwd) <= 1e-10 * max(1.0, back)


@given(complete_scores(max_n=20))
def test_complete_data_equivalence(scores):
    ds = complete_from_scores(*scores)
    try:
        pk = pocock_estimate(ds)[0].theta
    except DegenerateDenominator:
        with pytest.raises(DegenerateDenominator):
            wr_sscore(ds)
        return
    assert abs(wr_sscore(ds).theta - pk) <= 1e-10
