import json
import math
import numpy as np
import pytest
from scipy import integrate, stats

from winratio.errors import ParseError
from winratio.simulate import (CENSORING, MARX_SCENARIO, ArmParams, MarX, SimScenario, _arm_draws,
                               compute_metrics, full_scores, gen_dataset, make_scenario, parse_grid,
                               preset, read_grid, run_scenario, summaries_to_csv, summaries_to_json,
                               true_wr_oracle)

H, TAU = 90.0, 50.0


def exact_theta(pa: ArmParams, pb: ArmParams, h=H, tau=TAU):
    """Win ratio of the full-data model by one-dimensional quadrature."""
    ta, tb = stats.gamma(pa.shape_t, scale=1 / pa.rate_t), stats.gamma(pb.shape_t, scale=1 / pb.rate_t)
    za, zb = stats.norm(pa.mu, pa.sigma), stats.norm(pb.mu, pb.sigma)

    def y2_greater(x, y):  # P(clip(X) > clip(Y))
        cont = integrate.quad(lambda v: y.pdf(v) * x.sf(v), 0, tau, limit=200)[0]
        return y.cdf(0) * x.sf(0) + cont

    def dies_later(u, v):  # P(T_v < T_u <= h)
        return integrate.quad(lambda t: v.pdf(t) * (u.cdf(h) - u.cdf(t)), 0, h, limit=200)[0]

    win = dies_later(ta, tb) + ta.sf(h) * tb.cdf(h) + ta.sf(h) * tb.sf(h) * y2_greater(za, zb)
    loss = dies_later(tb, ta) + tb.sf(h) * ta.cdf(h) + ta.sf(h) * tb.sf(h) * y2_greater(zb, za)
    return win / loss


def censoring_fraction(p: ArmParams, h=H, rate=True):
    """P(C < min(T, h)) with both Gamma laws read as (shape, rate) or as (shape, scale)."""
    conv = (lambda a, lam: stats.gamma(a, scale=1 / lam)) if rate else (lambda a, lam: stats.gamma(a, scale=lam))
    t, c = conv(p.shape_t, p.rate_t), conv(p.shape_c, p.rate_c)
    return integrate.quad(lambda x: c.pdf(x) * t.sf(x), 0, h, limit=200)[0]


class TestDataGeneration:
    def test_same_seed_same_data(self):
        sc = make_scenario(2, "het40", "mar40", n=200)
        a, b = gen_dataset(sc, 17), gen_dataset(sc, 17)
        assert a.records == b.records
        assert gen_dataset(sc, 18).records != a.records

    def test_records_are_valid_and_shaped(self):
        sc = make_scenario(1, "homo40", "mcar40", n=300)
        ds = gen_dataset(sc, 1)
        assert (ds.n_a, ds.n_b) == (300, 300)
        # survivors censored before h never show Y2
        assert np.all(ds.r2[~ds.survivor] == 0)
        assert np.all((ds.y2[ds.r2 == 1] >= 0) & (ds.y2[ds.r2 == 1] <= TAU))

    def test_gamma_moments(self):
        p = ArmParams(2.5, 0.04, 10.0, 10.0)
        n = 10**6
        _, t, _, _, _ = _arm_draws(p, n, np.random.default_rng(0), H, TAU, None)
        mean, var = p.shape_t / p.rate_t, p.shape_t / p.rate_t ** 2
        assert abs(t.mean() - mean) <= 3 * math.sqrt(var / n)
        mu4 = var ** 2 * (3 + 6 / p.shape_t)
        assert abs(t.var() - var) <= 3 * math.sqrt((mu4 - var ** 2) / n)

    def test_rate_reading_matches_quadrature(self):
        # the grid labels say 20/40% censored; the rate reading is the one that
        # lands near them (the scale reading censors most patients)
        for label, target in (("homo20", 0.2), ("homo40", 0.4)):
            sc = make_scenario(1, label, "none", n=10**4)
            ds = gen_dataset(sc, 3)
            emp = float(np.mean(ds.delta1[ds.arm == 0] == 0))
            exact = censoring_fraction(sc.arm_a)
            assert abs(emp - exact) <= 3 * math.sqrt(exact * (1 - exact) / 10**4)
            scale = censoring_fraction(sc.arm_a, rate=False)
            assert scale > 0.8 and abs(scale - target) > 2 * abs(exact - target)
        assert censoring_fraction(make_scenario(1, "homo20").arm_a) == pytest.approx(0.153, abs=0.003)

    @pytest.mark.xfail(strict=True, reason="the homo20 label (20% censored) is not reproduced: 0.153 under "
                                            "the rate reading (see the decisions ledger)")
    def test_low_censoring_label_fraction(self):
        sc = make_scenario(1, "homo20", "none", n=10**4)
        ds = gen_dataset(sc, 3)
        assert abs(np.mean(ds.delta1 == 0) - 0.20) <= 0.03

    def test_missing_fraction_among_survivors(self):
        sc = make_scenario(1, "none", "mcar40", n=10**4)
        ds = gen_dataset(sc, 4)
        frac = np.mean(ds.r2[ds.survivor] == 0)
        assert abs(frac - 0.40) <= 0.03

    def test_marx_covariate(self):
        ds = gen_dataset(MARX_SCENARIO, 9)
        assert ds.covariate_names == ("x1",)
        x = ds.covariates[:, 0]
        surv = ds.survivor
        # X raises both Y2 and the chance of missing it
        assert np.mean(ds.r2[surv & (x == 1)]) < np.mean(ds.r2[surv & (x == 0)])
        full = MARX_SCENARIO.full_data()
        assert full.arm_a.miss_prob == 0 and full.marx.delta_y == 10


class TestTruthOracle:
    def test_symmetric(self):
        res = true_wr_oracle(preset("base-theta1"))
        assert 0.995 <= res.theta <= 1.005

    def test_theta2_matches_quadrature(self):
        sc = preset("base-theta2")
        exact = exact_theta(sc.arm_a, sc.arm_b)
        assert exact == pytest.approx(2.0766, abs=1e-4)
        res = true_wr_oracle(sc)
        assert abs(res.theta - exact) <= 3 * res.se

    def test_identical_streams(self):
        p = ArmParams(2.5, 0.04, 10.0, 10.0)
        s_a = full_scores(p, 10**5, np.random.default_rng(5), H, TAU)
        s_b = full_scores(p, 10**5, np.random.default_rng(5), H, TAU)
        assert np.array_equal(s_a, s_b)
        pick = np.random.default_rng(6)
        i, j = pick.integers(0, 10**5, (2, 10**5))
        w, l = np.sum(s_a[i] > s_b[j]), np.sum(s_a[i] < s_b[j])
        assert abs(w / l - 1) <= 3 * math.sqrt(1 / w + 1 / l)

    def test_stable_when_doubling_pairs(self):
        sc = preset("base-theta2")
        one = true_wr_oracle(sc, n_pairs=5 * 10**5)
        two = true_wr_oracle(sc, n_pairs=10**6)
        assert abs(one.theta - two.theta) < 3 * one.se

    def test_few_pairs_large_error(self):
        res = true_wr_oracle(preset("base-theta1"), n_super=10**4, n_pairs=10, seed=2)
        assert res.se > 0.3


class TestMetrics:
    def test_cancelling_deviations(self):
        m = compute_metrics([1.1, 0.9], None, 1.0)
        assert m.arb_pct == pytest.approx(0, abs=1e-12)
        assert m.rmse == pytest.approx(0.1)

    def test_coverage(self):
        m = compute_metrics([1.0, 1.25], [(0.9, 1.1), (1.2, 1.3)], 1.0)
        assert m.cp_pct == 50.0
        assert m.width == pytest.approx(0.15)

    def test_single_estimate(self):
        m = compute_metrics([2.0], None, 1.0)
        assert (m.arb_pct, m.rmse) == (100.0, 1.0)

    def test_sign_symmetry(self, rng):
        dev = rng.normal(size=50)
        assert compute_metrics(1 + dev, None, 1.0).arb_pct == pytest.approx(
            compute_metrics(1 - dev, None, 1.0).arb_pct, rel=1e-12)

    def test_order_free(self, rng):
        est = rng.normal(2, 0.1, 500)
        cis = [(e - 0.2, e + 0.2) for e in est]
        a = compute_metrics(est, cis, 2.0)
        b = compute_metrics(est[::-1].copy(), cis[::-1], 2.0)
        assert a == b


class TestRunScenario:
    sc = make_scenario(1, "homo20", "mcar20", n=120)

    def test_zero_reps(self):
        with pytest.raises(ValueError):
            run_scenario(self.sc, n_reps=0, truth=1.0)

    def test_counts_and_bounds(self):
        s = run_scenario(self.sc, ("sscore-if", "sscore-bt-wald", "sscore-bt-qt", "pocock"),
                         n_reps=6, seed=1, B=30, truth=1.0)
        for r in s.rows:
            assert r.successes + r.failures == 6
            assert 0 <= r.cp_pct <= 100 and r.rmse >= 0

    def test_worker_count_does_not_matter(self):
        kw = dict(methods=("sscore-if", "sscore-bt-qt", "pocock"), n_reps=8, seed=3, B=20, truth=1.0)
        a = run_scenario(self.sc, n_jobs=1, **kw)
        b = run_scenario(self.sc, n_jobs=3, **kw)
        assert a == b
        assert summaries_to_csv([a]) == summaries_to_csv([b])

    def test_failures_are_excluded_with_warning(self):
        # arm B never dies and never has Y2: no events in that arm
        sc = SimScenario("dead-end", ArmParams(2.5, 0.04, 10, 10),
                         ArmParams(1.0, 1e-6, 10, 10, miss_prob=1.0), n_a=30, n_b=30)
        with pytest.warns(UserWarning, match="failed"):
            s = run_scenario(sc, ("sscore-if",), n_reps=3, seed=0, truth=1.0)
        assert s.row("sscore-if").failures == 3

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            run_scenario(self.sc, ("magic",), n_reps=1, truth=1.0)


class TestGridConfig:
    def test_sections_and_overrides(self, tmp_path):
        text = """
        # two cells
        [low]
        preset = base-theta2-mar40
        n = 200
        [custom]
        miss_prob_b = 0.5
        shape_c_a = 1.8
        rate_c_a = 0.02
        delta_y = 5
        """
        p = tmp_path / "grid.ini"
        p.write_text(text)
        low, custom = read_grid(p)
        assert low.name == "low" and low.n_a == 200 and low.arm_b.miss_prob == 0.5
        assert custom.arm_b.miss_prob == 0.5
        assert (custom.arm_a.shape_c, custom.arm_a.rate_c) == (1.8, 0.02)
        assert custom.marx == MarX(delta_y=5.0)

    @pytest.mark.parametrize("text, line", [
        ("[a]\nn = 10\nbogus = 3\n", 3),
        ("[a]\nn = ten\n", 2),
        ("n = 10\n", 1),
        ("[a]\njust words\n", 2),
        ("[a\n", 1),
    ])
    def test_errors_carry_line_numbers(self, text, line):
        with pytest.raises(ParseError) as err:
            parse_grid(text)
        assert err.value.row == line

    def test_all_censoring_labels_construct(self):
        for c in CENSORING:
            assert make_scenario(2, c, "mar20").name.startswith("theta2-" + c)


def test_json_summary_roundtrip():
    s = run_scenario(make_scenario(1, n=60), ("sscore-if",), n_reps=2, seed=0, truth=1.0)
    doc = json.loads(summaries_to_json([s], {"tool": "x"}))
    assert doc["scenarios"][0]["methods"][0]["method"] == "sscore-if"
    assert doc["tool"] == "x"
