import math

import numpy as np
import pytest

from ivimlab import stats
from ivimlab.errors import UndefinedMetricError

from oracles import (enumerate_mw_two_sided_p, normal_cdf_quadrature,
                     ols_reference, t_cdf_quadrature)


class TestCv:
    def test_constant_list(self):
        assert stats.cv([4.2, 4.2, 4.2]) == 0.0

    def test_hand_example(self):
        assert stats.cv([1.0, 3.0]) == pytest.approx(0.5)  # sd 1 (population), mean 2

    def test_zero_mean_rejected(self):
        with pytest.raises(UndefinedMetricError):
            stats.cv([-1.0, 1.0])

    def test_short_list_rejected(self):
        with pytest.raises(ValueError):
            stats.cv([1.0])

    def test_scale_invariant_not_shift_invariant(self):
        rng = np.random.default_rng(0)
        v = rng.uniform(1, 5, 30)
        base = stats.cv(v)
        assert stats.cv(3.7 * v) == pytest.approx(base, rel=1e-12)
        assert stats.cv(v + 2.0) != pytest.approx(base, rel=1e-6)

    def test_sample_sd_variant(self):
        v = [1.0, 3.0]
        assert stats.cv(v, ddof=1) == pytest.approx(math.sqrt(2.0) / 2.0)


class TestEntropy:
    def test_constant_data_zero_bits(self):
        assert stats.shannon_entropy([5.0] * 10, bins=64) == 0.0

    def test_uniform_eight_bins(self):
        values = np.repeat(np.arange(8.0), 5)
        assert stats.shannon_entropy(values, bins=8) == 3.0

    def test_quarter_three_quarter_split(self):
        values = np.array([0.0, 1.0, 1.0, 1.0])
        h = stats.shannon_entropy(values, bins=2)
        assert h == pytest.approx(0.811278, abs=1e-4)  # -(.25 lg .25 + .75 lg .75)

    def test_bounded_by_log2_bins(self):
        rng = np.random.default_rng(1)
        for bins in (1, 2, 8, 64):
            h = stats.shannon_entropy(rng.random(200), bins=bins)
            assert 0.0 <= h <= math.log2(bins) + 1e-12

    def test_affine_invariance(self):
        rng = np.random.default_rng(2)
        v = rng.random(500)
        h = stats.shannon_entropy(v, bins=32)
        assert stats.shannon_entropy(4.0 * v + 11.0, bins=32) == pytest.approx(h, abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        v = rng.random(100)
        assert stats.shannon_entropy(v[::-1], 16) == stats.shannon_entropy(v, 16)


class TestDistributionFunctions:
    @pytest.mark.parametrize("df", [1, 2, 3, 5, 9, 22])
    def test_t_cdf_matches_quadrature(self, df):
        for t in np.linspace(-8, 8, 33):
            assert stats.t_cdf(float(t), df) == pytest.approx(
                t_cdf_quadrature(float(t), df), abs=1e-8)

    def test_normal_cdf_matches_quadrature(self):
        for z in np.linspace(-8, 8, 33):
            assert stats.normal_cdf(float(z)) == pytest.approx(
                normal_cdf_quadrature(float(z)), abs=1e-10)


class TestPairedT:
    def test_identical_samples_p_one(self):
        x = [1.0, 2.0, 3.0]
        assert stats.paired_t_test(x, x).p_value == 1.0

    def test_zero_variance_nonzero_mean(self):
        r = stats.paired_t_test([1, 2, 3, 4], [2, 3, 4, 5])
        assert r.p_value < 1e-12
        assert math.isinf(r.statistic)

    def test_hand_computed_case(self):
        # d = {1, 0, 2}: t = sqrt(3), df = 2
        r = stats.paired_t_test([1.0, 2.0, 3.0], [2.0, 2.0, 5.0])
        assert r.statistic == pytest.approx(math.sqrt(3.0), rel=1e-12)
        expected = 2.0 * (1.0 - t_cdf_quadrature(math.sqrt(3.0), 2))
        assert r.p_value == pytest.approx(expected, abs=1e-10)
        assert r.p_value == pytest.approx(0.2254, abs=2e-4)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            stats.paired_t_test([1, 2], [1, 2, 3])


class TestMannWhitney:
    def test_separated_two_by_two(self):
        r = stats.mann_whitney_u([1.0, 2.0], [3.0, 4.0])
        assert r.statistic == 0.0
        assert r.p_value == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert r.method == "exact"

    def test_identical_multisets_p_one(self):
        x = [1.0, 2.0, 2.0, 5.0]
        assert stats.mann_whitney_u(x, list(x)).p_value == 1.0

    def test_exact_matches_independent_enumeration(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            n1 = int(rng.integers(2, 6))
            n2 = int(rng.integers(2, 6))
            x = rng.integers(0, 6, n1).astype(float)  # ties likely
            y = rng.integers(0, 6, n2).astype(float)
            got = stats.mann_whitney_u(x, y).p_value
            assert got == pytest.approx(enumerate_mw_two_sided_p(x, y), abs=1e-12)

    def test_exhaustive_n6_n6_approx_gap(self):
        # tie-free p depends only on ranks: sweep every achievable U once
        base = np.arange(12, dtype=float)
        from itertools import combinations
        seen = set()
        worst = 0.0
        for picked in combinations(range(12), 6):
            x = base[list(picked)]
            y = base[sorted(set(range(12)) - set(picked))]
            u = stats._u_statistic(x, y)
            if u in seen:
                continue
            seen.add(u)
            exact = stats.mann_whitney_exact_p(x, y)
            approx = stats.mann_whitney_normal_p(x, y)
            worst = max(worst, abs(exact - approx))
        assert len(seen) == 37
        assert worst < 0.02

    def test_large_sample_uses_approximation(self):
        rng = np.random.default_rng(5)
        x = rng.normal(0, 1, 10)
        y = rng.normal(0.5, 1, 10)
        r = stats.mann_whitney_u(x, y)
        assert r.method == "normal-approx"
        assert 0.0 <= r.p_value <= 1.0

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            stats.mann_whitney_u([], [1.0])


class TestLinearRegression:
    def test_exact_line(self):
        x = np.arange(5.0)
        r = stats.linear_regression(x, 2 * x + 1)
        assert r.slope == pytest.approx(2.0, abs=1e-12)
        assert r.intercept == pytest.approx(1.0, abs=1e-12)
        assert r.r_squared == pytest.approx(1.0, abs=1e-12)
        assert r.p_value < 1e-10

    def test_constant_response(self):
        r = stats.linear_regression([1, 2, 3, 4], [5, 5, 5, 5])
        assert r.slope == 0.0 and r.r_squared == 0.0 and r.p_value == 1.0

    def test_hand_case_verified_by_oracle(self):
        x = [1.0, 2.0, 3.0, 4.0]
        y = [1.0, 3.0, 2.0, 5.0]
        slope, intercept, r2 = ols_reference(x, y)
        r = stats.linear_regression(x, y)
        assert r.slope == pytest.approx(1.1, abs=1e-12)
        assert r.intercept == pytest.approx(0.0, abs=1e-12)
        # independent evaluation gives R^2 = 121/175, approx 0.6914
        assert r.r_squared == pytest.approx(121.0 / 175.0, abs=1e-12)
        assert r.slope == pytest.approx(slope, abs=1e-10)
        assert r.intercept == pytest.approx(intercept, abs=1e-10)
        assert r.r_squared == pytest.approx(r2, abs=1e-10)

    def test_constant_regressor_rejected(self):
        with pytest.raises(UndefinedMetricError):
            stats.linear_regression([2, 2, 2], [1, 2, 3])

    def test_fuzz_against_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(40):
            n = int(rng.integers(3, 20))
            x = rng.uniform(-4, 4, n)
            if np.ptp(x) == 0:
                continue
            y = rng.uniform(-1, 1) * x + rng.normal(0, 1, n)
            slope, intercept, r2 = ols_reference(x, y)
            r = stats.linear_regression(x, y)
            assert r.slope == pytest.approx(slope, rel=1e-9, abs=1e-10)
            assert r.intercept == pytest.approx(intercept, rel=1e-9, abs=1e-10)
            assert r.r_squared == pytest.approx(r2, rel=1e-9, abs=1e-10)
            assert 0.0 <= r.p_value <= 1.0


class TestMeanAbsPctDiff:
    def test_identity_zero(self):
        assert stats.mean_abs_pct_diff([0.2, 0.4], [0.2, 0.4]) == 0.0

    def test_single_element(self):
        assert stats.mean_abs_pct_diff([0.1], [0.15]) == pytest.approx(50.0)

    def test_two_elements(self):
        assert stats.mean_abs_pct_diff([0.2, 0.4], [0.1, 0.5]) == pytest.approx(37.5)

    def test_zero_reference_rejected(self):
        with pytest.raises(UndefinedMetricError):
            stats.mean_abs_pct_diff([0.0, 1.0], [1.0, 1.0])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            stats.mean_abs_pct_diff([1.0], [1.0, 2.0])
