"""Multiplier weights, excess-loss replications, thresholds and confidence sets."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from huberboot.bootstrap import (
    BootstrapConfig,
    WeightScheme,
    bootstrap_excess_samples,
    bootstrap_threshold,
    draw_weights,
    huber_replications,
    replication_weights,
    run_ci,
)
from huberboot.core import Dataset, SolverConfig, fit_huber, weighted_objective
from huberboot.exceptions import BootstrapFailureError, DomainError, ShapeError
from huberboot.rng import substream


def gaussian_data(n, d, seed, df=None):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, d - 1))])
    e = rng.standard_normal(n) if df is None else rng.standard_t(df, n)
    return Dataset(X, X @ np.linspace(1, 0.2, d) + e)


class TestWeights:
    def test_bernoulli_support(self):
        w = draw_weights(WeightScheme("bernoulli"), 5000, substream(0, 1))
        assert set(np.unique(w)) <= {0.0, 2.0}

    def test_mix_constants(self):
        s = WeightScheme("mix")
        assert (s.b, s.sigma_u, s.sigma_z_sq) == (0.276, 0.235, 0.038)

    def test_unknown_scheme(self):
        with pytest.raises(DomainError):
            WeightScheme("rademacher")

    @pytest.mark.property_suite
    @pytest.mark.parametrize("variant", ["gaussian", "bernoulli", "mix"])
    def test_moments(self, variant):
        N = 10**6
        w = draw_weights(WeightScheme(variant), N, substream(123, variant == "mix", variant == "bernoulli"))
        mean, var = w.mean(), w.var()
        assert abs(mean - 1) <= 0.005
        assert abs(var - 1) <= 0.01
        # four standard errors, using the sample fourth central moment
        assert abs(mean - 1) <= 4 * np.sqrt(var / N)
        m4 = np.mean((w - mean) ** 4)
        assert abs(var - 1) <= 4 * np.sqrt((m4 - var**2) / N)

    def test_rows_keyed_by_index(self):
        a = replication_weights(WeightScheme(), 20, 9, range(10))
        b = replication_weights(WeightScheme(), 20, 9, [7, 3])
        np.testing.assert_array_equal(a[[7, 3]], b)


class TestReplications:
    def test_all_ones_weights(self):
        data = gaussian_data(40, 3, 0)
        fit = fit_huber(data, SolverConfig(tau=1.5))
        cfg = BootstrapConfig(B=1, tau=1.5)
        exc = bootstrap_excess_samples(data, fit.theta, cfg, weights=np.ones((1, 40)))
        assert abs(exc[0]) <= 1e-10

    def test_minimizer_dominance_and_recomputation(self):
        data = gaussian_data(30, 2, 30)
        tau = 1.2
        fit = fit_huber(data, SolverConfig(tau=tau))
        cfg = BootstrapConfig(B=50, tau=tau, seed=4)
        exc, th = bootstrap_excess_samples(data, fit.theta, cfg, return_estimates=True)
        assert np.all(exc >= -1e-8)
        W = replication_weights(cfg.scheme, data.n, cfg.seed, range(50))
        for b in range(50):
            ref = weighted_objective(data, fit.theta, W[b], tau) - weighted_objective(data, th[b], W[b], tau)
            assert exc[b] == pytest.approx(ref, abs=1e-10)

    def test_failure_budget(self):
        data = gaussian_data(30, 2, 1)
        fit = fit_huber(data, SolverConfig(tau=1.0))
        W = replication_weights(WeightScheme(), 30, 0, range(50))
        # one iteration cannot reach the tolerance from a warm start at theta_hat
        exc, _ = huber_replications(data, fit.theta, 1.0, W, solver=SolverConfig(tau=1.0, max_iter=1))
        assert np.count_nonzero(~np.isfinite(exc)) > 0.5
        with pytest.raises(BootstrapFailureError):
            from huberboot.bootstrap import _check_failures

            _check_failures(int(np.count_nonzero(~np.isfinite(exc))), exc.size)

    def test_tau_required(self):
        data = gaussian_data(20, 2, 2)
        with pytest.raises(DomainError):
            bootstrap_excess_samples(data, np.zeros(2), BootstrapConfig(B=5))


class TestThreshold:
    def test_inf_definition(self):
        assert bootstrap_threshold([1.0, 2.0, 3.0, 4.0], 0.25) == 3.0

    def test_constant(self):
        for a in (0.01, 0.3, 0.9):
            assert bootstrap_threshold(np.full(17, 2.5), a) == 2.5

    def test_small_alpha_gives_max(self):
        s = np.random.default_rng(0).exponential(size=101)
        assert bootstrap_threshold(s, 1e-9) == s.max()

    def test_clamped_at_zero(self):
        assert bootstrap_threshold([-3.0, -2.0, -1.0], 0.5) == 0.0

    def test_errors(self):
        with pytest.raises(DomainError):
            bootstrap_threshold([], 0.1)
        with pytest.raises(DomainError):
            bootstrap_threshold([1.0, np.nan], 0.1)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 1e6), min_size=1, max_size=60), st.floats(1e-3, 0.999))
    def test_order_statistic_and_inf(self, samples, alpha):
        s = np.array(samples)
        z = bootstrap_threshold(s, alpha)
        B = s.size
        # brute force over candidate values: smallest sample with exceedance fraction <= alpha
        ok = [c for c in np.sort(s) if np.count_nonzero(s > c) / B <= alpha * (1 + 1e-12)]
        assert z == max(min(ok), 0.0)

    @pytest.mark.property_suite
    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-10, 1e3), min_size=1, max_size=80), st.floats(1e-3, 0.999), st.floats(1e-3, 0.999))
    def test_monotone(self, samples, a1, a2):
        lo, hi = sorted((a1, a2))
        assert bootstrap_threshold(samples, lo) >= bootstrap_threshold(samples, hi)


class TestConfidenceSet:
    def test_contains_center_and_rejects_far(self):
        data = gaussian_data(100, 5, 7, df=3.5)
        cs = run_ci(data, BootstrapConfig(B=200, tau=2.0, seed=1))
        assert cs.contains(cs.theta_hat, data)
        far = cs.theta_hat.copy()
        far[2] += 1e6
        assert not cs.contains(far, data)

    @pytest.mark.property_suite
    def test_nesting(self):
        data = gaussian_data(60, 3, 8)
        cs = run_ci(data, BootstrapConfig(B=300, tau=1.5, seed=2))
        rng = np.random.default_rng(0)
        for _ in range(200):
            theta = cs.theta_hat + rng.normal(scale=0.3, size=3)
            small = cs.excess(theta, data) <= cs.threshold_at(0.2)
            big = cs.excess(theta, data) <= cs.threshold_at(0.05)
            assert (not small) or big

    def test_shape_error(self):
        data = gaussian_data(30, 2, 9)
        cs = run_ci(data, BootstrapConfig(B=20, tau=1.0))
        with pytest.raises(ShapeError):
            cs.contains(np.zeros(3), data)

    def test_deterministic(self):
        data = gaussian_data(50, 3, 10)
        cfg = BootstrapConfig(B=300, tau=1.3, seed=5)
        a, b = run_ci(data, cfg), run_ci(data, cfg)
        assert a.excess_samples.tobytes() == b.excess_samples.tobytes()
        assert a.threshold == b.threshold

    @pytest.mark.property_suite
    @pytest.mark.parametrize("threads", [1, 4, 8])
    def test_thread_independent(self, threads):
        data = gaussian_data(50, 3, 11)
        cfg = BootstrapConfig(B=700, tau=1.3, seed=6)
        ref = run_ci(data, cfg, threads=1)
        got = run_ci(data, cfg, threads=threads)
        assert got.excess_samples.tobytes() == ref.excess_samples.tobytes()

    def test_positive_threshold(self):
        data = gaussian_data(100, 5, 12)
        cs = run_ci(data, BootstrapConfig(B=2000, tau=2.0, seed=0))
        assert cs.threshold > 0 and cs.n_failed == 0

    def test_ols_method(self):
        data = gaussian_data(80, 3, 13)
        cs = run_ci(data, BootstrapConfig(B=200, seed=3), method="ols")
        assert cs.loss == "squared" and cs.threshold > 0
        assert cs.contains(cs.theta_hat, data)

    @pytest.mark.parametrize("variant", ["bernoulli", "mix"])
    def test_other_schemes(self, variant):
        data = gaussian_data(80, 3, 14)
        cs = run_ci(data, BootstrapConfig(B=200, tau=1.5, scheme=WeightScheme(variant)))
        assert np.all(np.isfinite(cs.excess_samples)) and cs.threshold > 0
