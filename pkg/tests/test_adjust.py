import numpy as np
import pytest
from conftest import bonferroni_local, closed_testing, simes_local
from hypothesis import given, settings
from hypothesis import strategies as st

from shipgate.adjust import (
    AdjustMethod,
    AdjustedPValues,
    adjust,
    adjust_many,
    closure_oracle,
    effective_count,
    harmonic,
    reject_set,
)
from shipgate.errors import ValidationError

ALL = list(AdjustMethod)
pvec = st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=12)


def test_bonferroni_example():
    np.testing.assert_allclose(adjust([0.01, 0.2, 0.6], "bonferroni").adjusted, [0.03, 0.6, 1.0])


def test_holm_example():
    np.testing.assert_allclose(adjust([0.01, 0.04], "holm").adjusted, [0.02, 0.04])


def test_hochberg_example():
    np.testing.assert_allclose(adjust([0.02, 0.03], "hochberg").adjusted, [0.03, 0.03])


def test_bh_example():
    np.testing.assert_allclose(adjust([0.01, 0.02, 0.03, 0.04], "bh").adjusted, [0.04] * 4)


def test_by_is_harmonic_times_bh():
    p = [0.001, 0.01, 0.02, 0.2]
    np.testing.assert_allclose(adjust(p, "by").adjusted, np.minimum(1, harmonic(4) * adjust(p, "bh").adjusted))


@pytest.mark.parametrize("method", ALL)
def test_single_test_is_identity(method):
    assert adjust([0.037], method).adjusted[0] == 0.037


def test_harmonic():
    assert harmonic(1) == 1.0
    assert harmonic(3) == pytest.approx(1 + 1 / 2 + 1 / 3)
    assert all(harmonic(m + 1) > harmonic(m) for m in range(1, 50))


def test_input_order_preserved():
    p = [0.6, 0.01, 0.2]
    adj = adjust(p, "holm").adjusted
    np.testing.assert_allclose(adj, [0.6, 0.03, 0.4])


def test_hommel_bundled_fixture_matches_oracle():
    p = [0.0114, 0.06, 0.0352, 0.0501, 0.0159, 0.0067]
    res = adjust(p, "hommel")
    assert reject_set(res, 0.05) == closure_oracle(p, "simes", 0.05) == {0, 5}
    assert reject_set(adjust(p, "hochberg"), 0.05) != {0, 5}


def test_reject_set_examples():
    adj = AdjustedPValues(np.array([0.01, 0.2, 0.6]), np.array([0.03, 0.6, 1.0]), AdjustMethod.BONFERRONI, 3)
    assert reject_set(adj, 0.05) == {0}
    at_alpha = AdjustedPValues(np.array([0.05, 0.05]), np.array([0.05, 0.05]), AdjustMethod.NONE, 2)
    assert reject_set(at_alpha, 0.05) == set()


@pytest.mark.parametrize("bad", [[], [0.1, -0.01], [1.2], [float("nan")]])
def test_validation(bad):
    with pytest.raises(ValidationError):
        adjust(bad, "holm")


def test_unknown_method():
    with pytest.raises(ValidationError):
        adjust([0.1], "sidak")


def test_adjust_many_matches_adjust(rng):
    p = rng.random((50, 6))
    for method in ALL:
        rows = np.array([adjust(r, method).adjusted for r in p])
        np.testing.assert_array_equal(adjust_many(p, method), rows)


def test_oracle_m1():
    assert closure_oracle([0.04], "bonferroni", 0.05) == {0}
    assert closure_oracle([0.05], "simes", 0.05) == set()


def test_oracle_too_large():
    with pytest.raises(ValidationError):
        closure_oracle(np.full(17, 0.01), "simes", 0.05)


@pytest.mark.parametrize("m", range(2, 7))
def test_package_oracle_matches_independent_enumeration(m):
    g = np.random.default_rng(100 + m)
    for _ in range(100):
        p = g.random(m) ** 3
        assert closure_oracle(p, "bonferroni", 0.05) == closed_testing(p, bonferroni_local, 0.05)
        assert closure_oracle(p, "simes", 0.05) == closed_testing(p, simes_local, 0.05)


@pytest.mark.parametrize("m", range(2, 9))
def test_holm_and_hommel_equal_closed_testing(m):
    g = np.random.default_rng(m)
    for _ in range(200):
        p = g.random(m) ** 2.5
        assert reject_set(adjust(p, "holm"), 0.05) == closure_oracle(p, "bonferroni", 0.05)
        assert reject_set(adjust(p, "hommel"), 0.05) == closure_oracle(p, "simes", 0.05)


def test_hommel_with_ties_matches_oracle():
    p = [0.02, 0.02, 0.02, 0.04]
    assert reject_set(adjust(p, "hommel"), 0.05) == closure_oracle(p, "simes", 0.05)


@settings(max_examples=300, deadline=None)
@given(pvec)
def test_adjusted_bounds(p):
    for method in ALL:
        adj = adjust(p, method).adjusted
        assert np.all(adj >= np.asarray(p)) and np.all(adj <= 1.0)


@settings(max_examples=300, deadline=None)
@given(pvec)
def test_dominance_chains(p):
    a = {m: adjust(p, m).adjusted for m in ALL}
    B, H, HB, HM = AdjustMethod.BONFERRONI, AdjustMethod.HOLM, AdjustMethod.HOCHBERG, AdjustMethod.HOMMEL
    assert np.all(a[B] >= a[H]) and np.all(a[H] >= a[HB]) and np.all(a[HB] >= a[HM])
    assert np.all(a[H] >= a[AdjustMethod.BH])
    assert np.all(a[AdjustMethod.BY] >= a[AdjustMethod.BH])


@settings(max_examples=300, deadline=None)
@given(pvec, st.floats(0.001, 0.2))
def test_disjunctive_equivalence_holm_bonferroni(p, alpha):
    holm = reject_set(adjust(p, "holm"), alpha)
    bonf = reject_set(adjust(p, "bonferroni"), alpha)
    assert bool(holm) == bool(bonf)


@settings(max_examples=200, deadline=None)
@given(pvec, st.integers(0, 11))
def test_duplicating_a_pvalue_never_lowers_bonferroni(p, k):
    k = k % len(p)
    before = adjust(p, "bonferroni").adjusted
    after = adjust(p + [p[k]], "bonferroni").adjusted[: len(p)]
    assert np.all(after >= before)


def test_against_statsmodels(rng):
    mt = pytest.importorskip("statsmodels.stats.multitest")
    names = {"bonferroni": "bonferroni", "holm": "holm", "hochberg": "simes-hochberg", "hommel": "hommel",
             "bh": "fdr_bh", "by": "fdr_by"}
    for _ in range(100):
        p = rng.random(int(rng.integers(2, 15))) ** 2
        for ours, theirs in names.items():
            ref = mt.multipletests(p, method=theirs)[1]
            np.testing.assert_allclose(adjust(p, ours).adjusted, ref, atol=1e-12)


def test_effective_count_examples():
    assert effective_count(np.eye(5)) == 5.0
    assert effective_count([[1, 1], [1, 1]]) == pytest.approx(1.0)
    assert effective_count([[1, 0.5], [0.5, 1]]) == pytest.approx(1.75)


def test_effective_count_bounds(rng):
    for m in (3, 6, 10):
        a = rng.standard_normal((m, 2 * m))
        c = np.corrcoef(a)
        assert 1.0 <= effective_count(c) <= m


def test_effective_count_validation():
    with pytest.raises(ValidationError):
        effective_count([[1, 2], [2, 1]])
    with pytest.raises(ValidationError):
        effective_count([[2, 0], [0, 1]])
