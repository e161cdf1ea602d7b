import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from copula_folio.exceptions import DegenerateError, DomainError, SizeError, UndefinedCorrelationError
from copula_folio.stats_core import (
    ad_p_value,
    ad_statistic,
    ad_uniform_test,
    kendall_tau,
    pearson,
    ranks,
    sample_moments,
    sample_skewness,
    spearman,
)


def brute_kendall_b(x, y):
    """O(n^2) pair counter with the tau-b tie normalisation."""
    n = len(x)
    conc = disc = tx = ty = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = np.sign(x[i] - x[j])
            dy = np.sign(y[i] - y[j])
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                tx += 1
            elif dy == 0:
                ty += 1
            elif dx == dy:
                conc += 1
            else:
                disc += 1
    return (conc - disc) / math.sqrt((conc + disc + tx) * (conc + disc + ty))


def brute_midranks(x):
    x = list(x)
    return [sum(v < xi for v in x) + (sum(v == xi for v in x) + 1) / 2 for xi in x]


def direct_ad(u):
    u = sorted(u)
    n = len(u)
    s = sum((2 * i - 1) * (math.log(u[i - 1]) + math.log(1 - u[n - i])) for i in range(1, n + 1))
    return -n - s / n


FIXTURE_X = [0.3, -1.2, 2.5, 0.7, 0.7, -0.4, 1.9, -2.2, 0.1, 1.1]
FIXTURE_Y = [0.5, -0.8, 1.7, 1.0, 0.2, -0.4, 2.2, -1.5, -0.3, 0.2]

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


class TestRanks:
    def test_simple(self):
        rv = ranks([3.0, 1.0, 2.0])
        assert list(rv.ranks) == [3, 1, 2]
        assert not rv.ties
        assert rv.ranks.dtype == np.int64

    def test_midranks(self):
        rv = ranks([5, 5])
        assert list(rv.ranks) == [1.5, 1.5]
        assert rv.ties

    def test_nan_rejected(self):
        with pytest.raises(DomainError):
            ranks([1.0, float("nan")])

    def test_empty_rejected(self):
        with pytest.raises(SizeError):
            ranks([])

    def test_idempotent_on_random_vector(self):
        x = np.random.default_rng(4).normal(size=100)
        r = np.asarray(ranks(x))
        assert np.array_equal(np.asarray(ranks(r)), r)
        # oracle: position in sorted order
        order = np.argsort(x)
        expected = np.empty(100, dtype=int)
        expected[order] = np.arange(1, 101)
        assert np.array_equal(r, expected)

    @given(st.lists(st.integers(-5, 5), min_size=1, max_size=30))
    def test_matches_midrank_oracle(self, xs):
        assert np.allclose(np.asarray(ranks(xs)), brute_midranks(xs))


class TestCorrelations:
    def test_perfect_concordance(self):
        x = np.arange(10.0)
        for fn in (pearson, spearman, kendall_tau):
            assert fn(x, x) == pytest.approx(1.0, abs=1e-15)
            assert fn(x, -x) == pytest.approx(-1.0, abs=1e-15)

    def test_fixture_against_oracles(self):
        tau = brute_kendall_b(FIXTURE_X, FIXTURE_Y)
        assert kendall_tau(FIXTURE_X, FIXTURE_Y) == pytest.approx(tau, abs=1e-14)
        rx, ry = np.array(brute_midranks(FIXTURE_X)), np.array(brute_midranks(FIXTURE_Y))
        rho = np.corrcoef(rx, ry)[0, 1]
        assert spearman(FIXTURE_X, FIXTURE_Y) == pytest.approx(rho, abs=1e-14)
        assert pearson(FIXTURE_X, FIXTURE_Y) == pytest.approx(np.corrcoef(FIXTURE_X, FIXTURE_Y)[0, 1], abs=1e-14)

    def test_constant_input_undefined(self):
        for fn in (pearson, spearman, kendall_tau):
            with pytest.raises(UndefinedCorrelationError):
                fn([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(SizeError):
            pearson([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_kendall_brute_force_n200(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=200)
        y = 0.5 * x + rng.normal(size=200)
        # introduce ties on both sides
        x[:20] = np.round(x[:20])
        y[10:40] = np.round(y[10:40])
        assert kendall_tau(x, y) == pytest.approx(brute_kendall_b(x, y), abs=1e-12)

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.integers(-1000, 1000), finite), min_size=3, max_size=25, unique_by=lambda t: t[0]))
    def test_spearman_invariant_under_monotone_map(self, pts):
        # integer x keeps the cubic map exact, hence strictly increasing in floats
        x = np.array([p[0] for p in pts], dtype=float)
        y = np.array([p[1] for p in pts])
        if np.ptp(y) == 0:
            return
        base = spearman(x, y)
        assert spearman(x**3 + 5 * x - 2, y) == pytest.approx(base, abs=1e-12)
        assert -1.0 <= kendall_tau(x, y) <= 1.0
        assert -1.0 <= base <= 1.0


class TestMoments:
    def test_symmetric_skewness(self):
        assert sample_skewness([-1.0, 0.0, 1.0]) == pytest.approx(0.0, abs=1e-15)

    def test_positive_skewness_formula(self):
        x = np.array([0.0, 0.0, 0.0, 10.0])
        n = 4
        dev = x - x.mean()
        g1 = np.mean(dev**3) / np.mean(dev**2) ** 1.5
        expected = math.sqrt(n * (n - 1)) / (n - 2) * g1
        assert sample_skewness(x) == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(2.0, rel=1e-12)

    def test_constant(self):
        mean, sd = sample_moments([2.0, 2.0, 2.0])
        assert (mean, sd) == (2.0, 0.0)
        with pytest.raises(DegenerateError):
            sample_skewness([2.0, 2.0, 2.0])

    def test_too_short(self):
        with pytest.raises(SizeError):
            sample_skewness([1.0, 2.0])

    def test_moments_unbiased(self):
        mean, sd = sample_moments([1.0, 2.0, 3.0, 4.0])
        assert mean == 2.5
        assert sd == pytest.approx(math.sqrt(5.0 / 3.0), rel=1e-15)


class TestAndersonDarling:
    def test_statistic_matches_direct_formula(self):
        u = np.random.default_rng(2).uniform(size=57)
        assert ad_statistic(u) == pytest.approx(direct_ad(u), rel=1e-12)

    def test_equispaced_grid(self):
        n = 100
        res = ad_uniform_test((np.arange(1, n + 1) - 0.5) / n)
        assert res.statistic == pytest.approx(direct_ad((np.arange(1, n + 1) - 0.5) / n), rel=1e-12)
        assert res.p_value > 0.5
        assert res.n == n

    def test_half_mass_at_point(self):
        u = np.concatenate([np.full(50, 0.01), np.linspace(0.02, 0.99, 50)])
        res = ad_uniform_test(u)
        assert res.statistic > 10
        assert res.p_value < 0.01

    def test_known_critical_points(self):
        # asymptotic upper 5% and 1% points of A^2
        assert ad_p_value(2.492) == pytest.approx(0.05, abs=1e-3)
        assert ad_p_value(3.857) == pytest.approx(0.01, abs=1e-3)

    def test_order_invariance(self):
        u = np.random.default_rng(3).uniform(size=40)
        assert ad_statistic(u[::-1]) == ad_statistic(u)

    def test_domain(self):
        with pytest.raises(DomainError):
            ad_uniform_test(np.linspace(0.0, 1.1, 10))
        with pytest.raises(SizeError):
            ad_uniform_test([0.5] * 7)

    def test_endpoints_clamped(self):
        u = np.linspace(0.0, 1.0, 20)
        assert math.isfinite(ad_statistic(u))

    @settings(max_examples=50)
    @given(arrays(float, st.integers(8, 60), elements=st.floats(0.0, 1.0)))
    def test_p_value_in_unit_interval_and_permutation_invariant(self, u):
        res = ad_uniform_test(u)
        assert 0.0 <= res.p_value <= 1.0
        assert ad_statistic(np.random.default_rng(0).permutation(u)) == pytest.approx(res.statistic, rel=1e-12, abs=1e-9)

    def test_p_value_monotone(self):
        grid = np.linspace(0.01, 12, 500)
        p = np.array([ad_p_value(z) for z in grid])
        assert np.all(np.diff(p) <= 1e-12)
