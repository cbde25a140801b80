import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dycoh.stats import (
    StatsDomainError, bh_qvalues, cohens_d, exact_u_tables, fdr_estimate, mann_whitney_one_sided,
    mann_whitney_rows, pearson_r,
)

from oracles import permutation_p


def test_smallest_example_is_one_sixth():
    r = mann_whitney_one_sided([1, 2], [3, 4], "a_less")
    assert r.u == 0.0 and r.exact
    assert r.p_one_sided == pytest.approx(1 / 6, abs=1e-15)
    assert permutation_p(np.array([1.0, 2]), np.array([3.0, 4])) == pytest.approx(1 / 6)


def test_identical_multisets():
    a = [0.3, 1.2, 5.0]
    r = mann_whitney_one_sided(a, a)
    assert r.u == pytest.approx(4.5)
    assert r.p_one_sided >= 0.5
    assert r.tie_correction_applied and not r.exact


def test_exact_matches_permutation_n6_n7():
    rng = np.random.default_rng(11)
    for alt in ("a_less", "a_greater"):
        for _ in range(5):
            a, b = rng.normal(size=6), rng.normal(size=7)
            r = mann_whitney_one_sided(a, b, alt)
            assert r.exact
            assert abs(r.p_one_sided - permutation_p(a, b, alt)) <= 1e-12
            approx = mann_whitney_one_sided(a, b, alt, method="asymptotic").p_one_sided
            assert abs(approx - r.p_one_sided) < 0.01


def test_exact_table_properties():
    for n_a, n_b in [(1, 1), (3, 5), (7, 7), (20, 20)]:
        cdf, sf = exact_u_tables(n_a, n_b)
        assert len(cdf) == n_a * n_b + 1
        assert cdf[-1] == pytest.approx(1.0) and sf[0] == pytest.approx(1.0)
        # symmetric null distribution
        assert np.allclose(cdf, sf[::-1])
        assert np.all(np.diff(cdf) >= 0)
    cdf, _ = exact_u_tables(2, 2)
    assert cdf[0] == pytest.approx(1 / 6)
    assert cdf[0] == pytest.approx(1 / math.comb(4, 2))


@given(
    st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12),
    st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12),
)
def test_u_complement_and_range(a, b):
    ra = mann_whitney_one_sided(a, b)
    rb = mann_whitney_one_sided(b, a)
    assert ra.u + rb.u == pytest.approx(len(a) * len(b))
    assert 0 <= ra.u <= len(a) * len(b)
    assert 0 < ra.p_one_sided <= 1


@given(st.integers(0, 10_000))
def test_monotone_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(30, 8)), rng.normal(size=(30, 9))
    p0 = mann_whitney_rows(a, b)[1]
    for f in (np.exp, lambda x: 3 * x + 7, lambda x: x ** 3, np.arctan):
        assert np.array_equal(mann_whitney_rows(f(a), f(b))[1], p0)


def test_p_monotone_in_u():
    cdf, _ = exact_u_tables(5, 5)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(500, 5)), rng.normal(size=(500, 5))
    u, p, _, _ = mann_whitney_rows(a, b)
    order = np.argsort(u)
    assert np.all(np.diff(p[order]) >= 0)


def test_approximation_close_for_moderate_sizes():
    rng = np.random.default_rng(5)
    for n_a, n_b in [(8, 8), (12, 15), (20, 20)]:
        a, b = rng.normal(size=(100, n_a)), rng.normal(0.3, 1, size=(100, n_b))
        pe = mann_whitney_rows(a, b, method="exact")[1]
        pa = mann_whitney_rows(a, b, method="asymptotic")[1]
        assert np.max(np.abs(pe - pa)) < 0.01


def test_auto_switch():
    rng = np.random.default_rng(0)
    assert mann_whitney_one_sided(rng.normal(size=20), rng.normal(size=20)).exact
    assert not mann_whitney_one_sided(rng.normal(size=21), rng.normal(size=20)).exact


def test_ties_use_corrected_variance():
    a, b = [1, 1, 2, 2, 3], [2, 3, 3, 4, 4]
    r = mann_whitney_one_sided(a, b)
    assert r.tie_correction_applied and not r.exact
    # midranks: a -> 1.5, 1.5, 4, 4, 7 ; U = 18 - 15 = 3
    assert r.u == 3.0
    n = 10
    ties = (8 - 2) + (27 - 3) + (27 - 3) + (8 - 2)
    var = 25 / 12 * ((n + 1) - ties / (n * (n - 1)))
    z = (3 - 12.5 + 0.5) / math.sqrt(var)
    assert r.p_one_sided == pytest.approx(0.5 * math.erfc(-z / math.sqrt(2)), rel=1e-12)


def test_domain_errors():
    with pytest.raises(StatsDomainError):
        mann_whitney_one_sided([], [1.0])
    with pytest.raises(StatsDomainError):
        mann_whitney_one_sided([np.nan], [1.0])
    with pytest.raises(ValueError):
        mann_whitney_one_sided([1.0], [2.0], "two_sided")


def test_fdr_examples():
    assert fdr_estimate(12_200_000, 1e-4, 71_857) == pytest.approx(0.016978164966530749, rel=1e-12)
    assert fdr_estimate(100, 0.05, 0) == 1.0
    assert fdr_estimate(1000, 0.05, 1000) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        fdr_estimate(10, 0.05, 11)


def test_bh_qvalues():
    p = np.array([0.01, 0.04, 0.03, 0.5])
    # sorted 0.01, 0.03, 0.04, 0.5 -> 0.04, 0.06, 0.0533, 0.5 -> cummin from top
    assert np.allclose(bh_qvalues(p), [0.04, 0.05333333333333334, 0.05333333333333334, 0.5])
    assert bh_qvalues([]).size == 0


def test_cohens_d():
    assert cohens_d([1, 2, 3], [1, 2, 3]) == 0.0
    with pytest.raises(StatsDomainError):
        cohens_d([0, 0], [1, 1])
    with pytest.raises(StatsDomainError):
        cohens_d([1], [1, 2])
    rng = np.random.default_rng(42)
    d = cohens_d(rng.normal(0, 1, 10_000), rng.normal(1, 1, 10_000))
    assert d == pytest.approx(1.0, abs=0.05)


def test_pearson():
    x = np.random.default_rng(1).normal(size=50)
    assert pearson_r(x, x) == pytest.approx(1.0)
    assert pearson_r(x, -2 * x + 3) == pytest.approx(-1.0)
    with pytest.raises(StatsDomainError):
        pearson_r(x, np.ones(50))
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, b = rng.normal(size=30), rng.normal(size=30)
        n = len(a)
        ma, mb = sum(a) / n, sum(b) / n
        cov = sum((p - ma) * (q - mb) for p, q in zip(a, b))
        va = sum((p - ma) ** 2 for p in a)
        vb = sum((q - mb) ** 2 for q in b)
        assert abs(pearson_r(a, b) - cov / math.sqrt(va * vb)) < 1e-12
