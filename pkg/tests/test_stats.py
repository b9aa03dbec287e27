import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iaakit.stats import (
    Sample,
    UndefinedEffectError,
    cohens_d,
    empirical_cdf,
    fosd_statistic,
    fosd_test,
    mann_whitney,
)


def pair_count_u(a, b):
    """Independent U oracle: count of (x, y) pairs with x > y, half for ties."""
    return sum(1.0 if x > y else 0.5 if x == y else 0.0 for x in a for y in b)


def enumeration_p(a, b, alternative):
    """Exact p oracle: brute force over every group assignment of the pooled
    values, scoring each with the pair-counting U."""
    pooled = list(a) + list(b)
    n_a = len(a)
    u_obs = pair_count_u(a, b)
    le = ge = total = 0
    for combo in itertools.combinations(range(len(pooled)), n_a):
        chosen = set(combo)
        ga = [pooled[i] for i in combo]
        gb = [pooled[i] for i in range(len(pooled)) if i not in chosen]
        u = pair_count_u(ga, gb)
        le += u <= u_obs + 1e-9
        ge += u >= u_obs - 1e-9
        total += 1
    if alternative == "a-less":
        return le / total
    if alternative == "a-greater":
        return ge / total
    return min(1.0, 2.0 * min(le, ge) / total)


def tiefree_samples(rng, n_a, n_b):
    pooled = rng.permutation(rng.uniform(0, 100, n_a + n_b))
    return pooled[:n_a], pooled[n_a:]


class TestSample:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Sample(np.array([]))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Sample(np.array([1.0, np.inf]))


class TestEmpiricalCdf:
    def test_single_point_mass(self):
        cdf = empirical_cdf(Sample(np.array([5.0])))
        assert cdf(4.9) == 0.0 and cdf(5.0) == 1.0

    def test_counting_rule(self):
        cdf = empirical_cdf(Sample(np.array([1.0, 2.0, 2.0, 4.0])))
        assert cdf(2.0) == 0.75

    def test_symmetric_two_point(self):
        cdf = empirical_cdf(Sample(np.array([0.0, 1.0])))
        assert cdf(0.5) == 0.5

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=40))
    def test_monotone_and_reaches_one(self, values):
        cdf = empirical_cdf(Sample(np.array(values, dtype=np.float64)))
        assert np.all(np.diff(cdf.heights) >= 0)
        assert cdf(float(max(values))) == 1.0
        assert cdf(float(min(values)) - 1.0) == 0.0


class TestMannWhitney:
    def test_fully_separated_exact(self):
        res = mann_whitney(
            Sample(np.array([1.0, 2.0, 3.0])),
            Sample(np.array([4.0, 5.0, 6.0])),
            alternative="a-less",
        )
        assert res.method == "exact"
        assert res.u_statistic == 0.0
        assert res.p_value == pytest.approx(1.0 / 20.0, abs=1e-12)

    def test_identical_samples_two_sided(self):
        a = Sample(np.array([3.0, 1.0, 4.0, 1.0, 5.0]))
        res = mann_whitney(a, a)
        assert res.p_value >= 0.99

    def test_interleaved_matches_enumeration(self):
        a = [1.0, 3.0, 5.0, 7.0]
        b = [2.0, 4.0, 6.0, 8.0]
        res = mann_whitney(Sample(np.array(a)), Sample(np.array(b)))
        assert res.method == "exact"
        assert res.p_value == pytest.approx(enumeration_p(a, b, "two-sided"), abs=1e-12)

    @pytest.mark.parametrize("alternative", ["two-sided", "a-greater", "a-less"])
    def test_exact_matches_enumeration_oracle(self, alternative):
        rng = np.random.default_rng(17)
        for _ in range(30):
            n_a, n_b = rng.integers(2, 7, 2)
            a, b = tiefree_samples(rng, n_a, n_b)
            res = mann_whitney(Sample(a), Sample(b), alternative=alternative)
            assert res.method == "exact"
            expected = enumeration_p(list(a), list(b), alternative)
            assert res.p_value == pytest.approx(expected, abs=1e-12)

    def test_u_oracle_pair_counting(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, b = tiefree_samples(rng, 6, 9)
            res = mann_whitney(Sample(a), Sample(b))
            assert res.u_statistic == pytest.approx(pair_count_u(a, b), abs=1e-9)

    def test_u_sum_identity_tie_free(self):
        rng = np.random.default_rng(5)
        a, b = tiefree_samples(rng, 10, 14)
        u_a = mann_whitney(Sample(a), Sample(b)).u_statistic
        u_b = mann_whitney(Sample(b), Sample(a)).u_statistic
        assert u_a + u_b == pytest.approx(10 * 14, abs=1e-9)

    def test_two_sided_swap_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            a = Sample(rng.normal(0, 1, 15))
            b = Sample(rng.normal(0.5, 1, 12))
            assert mann_whitney(a, b).p_value == pytest.approx(
                mann_whitney(b, a).p_value, abs=1e-12
            )

    def test_normal_approx_close_to_exact_at_n8(self):
        # One-sided worst-case |exact - approx| over all U at n=8 is 0.00545;
        # the two-sided p doubles the smaller tail, so its error is exactly
        # twice that (0.0109).
        rng = np.random.default_rng(23)
        for _ in range(20):
            a, b = tiefree_samples(rng, 8, 8)
            for alternative in ("a-less", "a-greater"):
                exact = mann_whitney(Sample(a), Sample(b), alternative, method="exact")
                approx = mann_whitney(
                    Sample(a), Sample(b), alternative, method="normal-approx"
                )
                assert abs(exact.p_value - approx.p_value) < 0.01
            exact2 = mann_whitney(Sample(a), Sample(b), method="exact")
            approx2 = mann_whitney(Sample(a), Sample(b), method="normal-approx")
            assert abs(exact2.p_value - approx2.p_value) < 0.02

    def test_ties_force_normal_approx(self):
        a = Sample(np.array([1.0, 2.0, 2.0]))
        b = Sample(np.array([2.0, 3.0]))
        assert mann_whitney(a, b).method == "normal-approx"

    def test_degenerate_constant_samples(self):
        a = Sample(np.array([2.0, 2.0, 2.0]))
        res = mann_whitney(a, a, method="normal-approx")
        assert res.p_value == 1.0 and res.degenerate

    def test_exact_method_refuses_large_or_tied(self):
        rng = np.random.default_rng(0)
        big = Sample(rng.uniform(0, 1, 50))
        with pytest.raises(ValueError):
            mann_whitney(big, big, method="exact")


class TestCohensD:
    def test_identical_samples_zero(self):
        a = Sample(np.array([1.0, 2.0, 3.0]))
        assert cohens_d(a, a).cohens_d == 0.0

    def test_closed_form(self):
        res = cohens_d(Sample(np.array([0.0, 2.0])), Sample(np.array([4.0, 6.0])))
        assert res.cohens_d == pytest.approx(-4.0 / math.sqrt(2.0), abs=1e-12)

    def test_zero_variance_undefined(self):
        a = Sample(np.array([0.0, 0.0]))
        with pytest.raises(UndefinedEffectError):
            cohens_d(a, a)

    def test_sign_flips_under_swap(self):
        rng = np.random.default_rng(2)
        a = Sample(rng.normal(0, 1, 20))
        b = Sample(rng.normal(1, 2, 25))
        d_ab = cohens_d(a, b).cohens_d
        d_ba = cohens_d(b, a).cohens_d
        assert d_ab == pytest.approx(-d_ba, abs=1e-12)

    def test_requires_two_observations(self):
        with pytest.raises(ValueError):
            cohens_d(Sample(np.array([1.0])), Sample(np.array([1.0, 2.0])))


class TestFosd:
    def test_hand_enumerated_statistic(self):
        a = Sample(np.array([1.0, 2.0]), "a")
        b = Sample(np.array([0.0, 3.0]), "b")
        assert fosd_statistic(a, b, "a-dominates-b") == pytest.approx(0.5, abs=1e-12)

    def test_statistic_antisymmetry_on_pooled_support(self):
        rng = np.random.default_rng(9)
        a = Sample(rng.normal(0, 1, 30), "a")
        b = Sample(rng.normal(0.4, 1.2, 40), "b")
        grid = np.unique(np.concatenate([a.values, b.values]))
        f_a = np.searchsorted(np.sort(a.values), grid, side="right") / a.n
        f_b = np.searchsorted(np.sort(b.values), grid, side="right") / b.n
        scale = math.sqrt(a.n * b.n / (a.n + b.n))
        assert fosd_statistic(a, b) == pytest.approx(scale * np.max(f_a - f_b), abs=1e-12)
        assert np.max(f_a - f_b) == pytest.approx(-np.min(f_b - f_a), abs=1e-12)

    def test_shifted_sample_directional_pattern(self):
        rng = np.random.default_rng(1)
        lo = rng.uniform(0, 1, 200)
        hi = lo + 1.0
        res_reject = fosd_test(
            Sample(lo, "lo"), Sample(hi, "hi"), iterations=500, seed=4
        )
        res_keep = fosd_test(Sample(hi, "hi"), Sample(lo, "lo"), iterations=500, seed=4)
        assert res_reject.p_value < 0.001
        assert res_keep.p_value > 0.5

    def test_equal_samples_fail_to_reject_both_ways(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(0, 1, 80)
        a, b = Sample(x, "a"), Sample(x.copy(), "b")
        for hyp in ("a-dominates-b", "b-dominates-a"):
            assert fosd_test(a, b, iterations=300, seed=2, hypothesis=hyp).p_value >= 0.001

    def test_seed_reproducibility_and_thread_independence(self):
        rng = np.random.default_rng(13)
        a = Sample(rng.normal(0, 1, 60), "a")
        b = Sample(rng.normal(0.2, 1, 70), "b")
        one = fosd_test(a, b, iterations=250, seed=42)
        again = fosd_test(a, b, iterations=250, seed=42)
        threaded = fosd_test(a, b, iterations=250, seed=42, threads=4)
        assert one == again == threaded

    def test_degenerate_all_equal(self):
        a = Sample(np.full(10, 3.0), "a")
        res = fosd_test(a, a, iterations=100, seed=0)
        assert res.p_value == 1.0 and res.degenerate

    def test_iteration_floor(self):
        a = Sample(np.array([1.0, 2.0]), "a")
        with pytest.raises(ValueError):
            fosd_test(a, a, iterations=50, seed=0)

    def test_reverse_hypothesis_uses_swapped_sizes(self):
        rng = np.random.default_rng(21)
        a = Sample(rng.uniform(0, 1, 30), "a")
        b = Sample(rng.uniform(0, 1, 50), "b")
        res = fosd_test(a, b, iterations=120, seed=5, hypothesis="b-dominates-a")
        assert res.hypothesis == "b-dominates-a"
        assert res.statistic == pytest.approx(fosd_statistic(a, b, "b-dominates-a"))
