"""Intercept tests: tau rule, joint fits, bootstrap p-values, BH and Storey."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from huberboot.core import Dataset, SolverConfig, fit_huber
from huberboot.exceptions import ShapeError
from huberboot.multitest import (
    MTestConfig,
    PanelData,
    bh_threshold,
    bootstrap_pvalue_counts,
    bootstrap_pvalues,
    fdp,
    fit_all,
    power,
    residual_fourth_root,
    run_mtest,
    storey_threshold,
    tau_rule_theorem41,
)


def panel(n=60, m=8, s=3, seed=0, shift=0.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, s))
    beta = rng.uniform(-1, 1, (s, m))
    mu = np.zeros(m)
    mu[: max(1, m // 4)] = shift
    y = mu + x @ beta + rng.standard_t(3, (n, m))
    return PanelData(y, x), mu == 0


def bh_bruteforce(p, alpha):
    """Largest k with p_(k) <= alpha k / m by scanning every k."""
    m = len(p)
    srt = sorted(p)
    k = 0
    for j in range(1, m + 1):
        if srt[j - 1] <= alpha * j / m:
            k = j
    return {i for i in range(m) if k and p[i] <= srt[k - 1]}


class TestTauRule:
    def test_value(self):
        got = tau_rule_theorem41(100, 1000, 5, [1.0])[0]
        assert got == pytest.approx((100 / (5 + 2 * math.log(1e5))) ** (1 / 3), rel=1e-14)
        # the commonly quoted 1.5285 is a rounding slip; the exact value is 1.52808
        assert got == pytest.approx(1.5281, abs=1e-4)

    def test_homogeneous(self):
        v = np.array([0.3, 1.0, 2.5])
        np.testing.assert_allclose(tau_rule_theorem41(50, 3, 2, 2 * v), 2 * tau_rule_theorem41(50, 3, 2, v))

    def test_default_scale_two_pass(self):
        p, _ = panel(n=80, m=5, s=2, seed=3)
        got = residual_fourth_root(p)
        X = p.design
        for k in range(p.m):
            coef = np.linalg.lstsq(X, p.y[:, k], rcond=None)[0]
            r = p.y[:, k] - X @ coef
            assert got[k] == pytest.approx((np.sum(r**4) / (p.n - p.s - 1)) ** 0.25, rel=1e-10)


class TestPanel:
    def test_too_few_rows(self):
        with pytest.raises(ShapeError):
            PanelData(np.zeros((3, 2)), np.zeros((3, 2)))

    def test_row_mismatch(self):
        with pytest.raises(ShapeError):
            PanelData(np.zeros((10, 2)), np.zeros((9, 2)))


class TestFitAll:
    def test_single_column_reduction(self):
        p, _ = panel(m=1, seed=1)
        tau = np.array([1.7])
        mu, beta = fit_all(p, tau)
        ref = fit_huber(Dataset(p.design, p.y[:, 0]), SolverConfig(tau=1.7))
        np.testing.assert_allclose(np.r_[mu, beta[0]], ref.theta, atol=1e-9)

    def test_duplicated_columns(self):
        p, _ = panel(m=1, seed=2)
        dup = PanelData(np.column_stack([p.y, p.y]), p.x)
        mu, beta = fit_all(dup, np.array([1.3, 1.3]))
        assert mu[0] == mu[1] and np.array_equal(beta[0], beta[1])

    def test_null_envelope(self):
        rng = np.random.default_rng(20)
        x = rng.standard_normal((100, 5))
        y = x @ rng.uniform(-1, 1, (5, 20)) + rng.standard_normal((100, 20))
        p = PanelData(y, x)
        mu, _ = fit_all(p, tau_rule_theorem41(100, 20, 5, residual_fourth_root(p)))
        assert np.max(np.abs(mu)) <= 1


class TestPValues:
    def test_extremes_and_count(self):
        B = 9
        exceed = np.zeros((3, B), dtype=bool)
        exceed[0] = True
        exceed[2, :3] = True
        p = bootstrap_pvalue_counts(exceed, np.ones_like(exceed))
        np.testing.assert_allclose(p, [9 / 10, 0.0, 0.3])

    def test_lattice(self):
        p, _ = panel(m=4, seed=4)
        cfg = MTestConfig(B=50, seed=1)
        res = run_mtest(p, cfg)
        k = res.p_values * 51
        np.testing.assert_allclose(k, np.round(k), atol=1e-9)
        assert np.all((res.p_values >= 0) & (res.p_values <= 50 / 51))

    def test_permutation_equivariance(self):
        p, _ = panel(m=6, seed=5, shift=1.0)
        cfg = MTestConfig(B=80, seed=2)
        taus = tau_rule_theorem41(p.n, p.m, p.s, residual_fourth_root(p))
        mu, beta = fit_all(p, taus)
        ref = bootstrap_pvalues(p, mu, beta, taus, cfg)
        perm = np.random.default_rng(0).permutation(6)
        q = PanelData(p.y[:, perm], p.x)
        mu2, beta2 = fit_all(q, taus[perm])
        np.testing.assert_array_equal(mu2, mu[perm])
        got = bootstrap_pvalues(q, mu2, beta2, taus[perm], cfg, keys=perm)
        np.testing.assert_array_equal(got, ref[perm])
        np.testing.assert_array_equal(bh_threshold(got, 0.2)[1], bh_threshold(ref, 0.2)[1][perm])

    @pytest.mark.property_suite
    @pytest.mark.parametrize("threads", [1, 4, 8])
    def test_thread_determinism(self, threads):
        p, _ = panel(m=12, seed=6, shift=1.0)
        cfg = MTestConfig(B=400, seed=3)
        ref = run_mtest(p, cfg, threads=1)
        got = run_mtest(p, cfg, threads=threads)
        assert got.p_values.tobytes() == ref.p_values.tobytes()

    def test_signal_detected(self):
        p, null = panel(n=100, m=8, seed=7, shift=3.0)
        res = run_mtest(p, MTestConfig(B=200, alpha=0.1, seed=0), null_set=null)
        assert res.power == 1.0 and 0 <= res.fdp <= 1


class TestBH:
    def test_example(self):
        k, rej = bh_threshold([0.01, 0.02, 0.5], 0.15)
        assert k == 2 and rej.tolist() == [True, True, False]

    def test_ties(self):
        k, rej = bh_threshold([0.05, 0.05], 0.1)
        assert k == 2 and rej.all()

    def test_all_ones(self):
        k, rej = bh_threshold(np.ones(10), 0.05)
        assert k == 0 and not rej.any()

    def test_step_up(self):
        # p_(1) fails its own bound yet is rejected because p_(2) passes
        k, rej = bh_threshold([0.04, 0.045], 0.09)
        assert k == 2 and rej.all()

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.floats(0.001, 0.5))
    def test_matches_bruteforce(self, p, alpha):
        _, rej = bh_threshold(p, alpha)
        assert set(np.flatnonzero(rej)) == bh_bruteforce(p, alpha)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0.001, 0.5), st.floats(0.001, 0.5))
    def test_monotone_in_alpha(self, p, a1, a2):
        lo, hi = sorted((a1, a2))
        assert np.all(bh_threshold(p, hi)[1] >= bh_threshold(p, lo)[1])


class TestStorey:
    def test_all_ones(self):
        assert storey_threshold(np.ones(5), 0.1) == pytest.approx(0.1 / 5)

    def test_example(self):
        t = storey_threshold([0.01, 0.02, 0.5], 0.15)
        assert (np.array([0.01, 0.02, 0.5]) <= t).tolist() == [True, True, False]

    def test_sup_over_interval(self):
        # exhaustive check of the sup over a fine grid agrees with the candidate set
        rng = np.random.default_rng(1)
        for _ in range(30):
            m = int(rng.integers(1, 15))
            p = rng.uniform(0, 0.3, m)
            alpha = 0.2
            t = storey_threshold(p, alpha)
            grid = np.linspace(0, 1, 20001)
            cnt = np.array([np.count_nonzero(p <= g) for g in grid])
            feas = grid[grid <= alpha * np.maximum(cnt, 1) / m]
            assert feas.max() <= t + 1e-12

    @pytest.mark.property_suite
    def test_equivalence_500(self):
        rng = np.random.default_rng(500)
        for _ in range(500):
            m = int(rng.integers(1, 51))
            mix = rng.random(m) < 0.3
            p = np.where(mix, rng.uniform(0, 0.01, m), rng.uniform(0, 1, m))
            alpha = float(rng.uniform(0.01, 0.3))
            _, rej = bh_threshold(p, alpha)
            np.testing.assert_array_equal(p <= storey_threshold(p, alpha), rej)


class TestBookkeeping:
    def test_fdp_examples(self):
        assert fdp(np.zeros(5, bool), np.ones(5, bool)) == 0
        assert fdp([True, True, False], [False, False, True]) == 0
        assert fdp([1, 1, 1, 1, 0], [1, 0, 0, 0, 1]) == 0.25

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            fdp([True], [True, False])

    def test_power_undefined(self):
        assert power([True, False], [True, True]) is None
        assert power([True, False], [False, False]) == 0.5

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=30))
    def test_fdp_bounds(self, pairs):
        rej, null = zip(*pairs)
        assert 0 <= fdp(rej, null) <= 1


def test_exhaustive_bh_small():
    vals = [0.0, 0.01, 0.03, 0.05, 0.2, 1.0]
    for m in (1, 2, 3):
        for p in itertools.product(vals, repeat=m):
            for alpha in (0.05, 0.1):
                assert set(np.flatnonzero(bh_threshold(p, alpha)[1])) == bh_bruteforce(list(p), alpha)
                assert math.isfinite(storey_threshold(p, alpha))
