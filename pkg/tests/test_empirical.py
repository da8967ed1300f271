import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cptmp.empirical import (SampleSet, build_ecdf, ks_threshold, ks_uniformity, midpoint_ranks,
                             pit_transform)
from cptmp.errors import DataError, DomainError

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("values, x, expected", [([1, 2, 3], 2, 0.5), ([5], 5, 0.5), ([1, 1, 2], 1, 0.5)])
def test_ecdf_midpoint_and_ties(values, x, expected):
    assert build_ecdf(values)(x) == expected


def test_ecdf_outside_and_between():
    F = build_ecdf([1.0, 2.0, 3.0, 4.0])
    assert F(0.5) == 0.0
    assert F(2.5) == F(2.0) == 0.375
    assert F(10.0) == 0.875


def test_nan_is_rejected():
    with pytest.raises(DataError):
        build_ecdf([1.0, np.nan])
    with pytest.raises(DataError):
        SampleSet.of([])
    with pytest.raises(DataError):
        midpoint_ranks(np.array([0.0, np.nan]))


def test_sample_set_is_stable_and_immutable():
    s = SampleSet.of([3.0, 1.0, 3.0, 2.0, 1.0])
    assert list(s.sorted_index) == [1, 4, 3, 0, 2]
    with pytest.raises(ValueError):
        s.values[0] = 7.0


def test_pit_self_transform_four():
    assert sorted(pit_transform(build_ecdf([4.0, 1.0, 3.0, 2.0]), [4.0, 1.0, 3.0, 2.0])) == [0.125, 0.375, 0.625, 0.875]


@given(arrays(float, st.integers(1, 60), elements=finite, unique=True))
def test_pit_of_distinct_values_is_rank_multiset(v):
    n = v.size
    got = np.sort(pit_transform(build_ecdf(v), v))
    assert np.array_equal(got, (np.arange(1, n + 1) - 0.5) / n)


@given(arrays(float, st.integers(1, 60), elements=finite), st.randoms())
def test_pit_permutation_invariant(v, rnd):
    perm = list(range(v.size))
    rnd.shuffle(perm)
    a = pit_transform(build_ecdf(v), v)
    b = pit_transform(build_ecdf(v[perm]), v[perm])
    assert np.array_equal(a[perm], b)


@given(arrays(float, st.integers(1, 40), elements=st.floats(1e-3, 1e3)), st.sampled_from([0.5, 2.0, 3.0, 1e-3]))
def test_ecdf_scale_equivariant(v, c):
    q = np.concatenate([v, v * 1.5, [0.0]])
    assert np.array_equal(build_ecdf(c * v)(c * q), build_ecdf(v)(q))


@given(arrays(float, st.integers(1, 60), elements=st.floats(0, 10)))
def test_midpoint_ranks_agree_with_ecdf(v):
    assert np.allclose(midpoint_ranks(v), build_ecdf(v)(v), rtol=0, atol=1e-15)


def test_midpoint_ranks_columnwise():
    rng = np.random.default_rng(3)
    M = rng.integers(0, 4, size=(30, 5)).astype(float)
    cols = midpoint_ranks(M, axis=0)
    for j in range(5):
        assert np.allclose(cols[:, j], midpoint_ranks(M[:, j]))


@pytest.mark.parametrize("values, expected", [([0.5] * 7, 0.5), ([0.25, 0.75], 0.25)])
def test_ks_small_cases(values, expected):
    assert ks_uniformity(values) == pytest.approx(expected, abs=1e-15)


@given(st.integers(1, 500))
def test_ks_of_midpoints(n):
    assert ks_uniformity((np.arange(1, n + 1) - 0.5) / n) == pytest.approx(0.5 / n, rel=1e-9)


def test_ks_domain():
    with pytest.raises(DomainError):
        ks_uniformity([0.2, 1.1])
    with pytest.raises(DataError):
        ks_uniformity([])


def test_lognormal_self_pit():
    x = np.random.default_rng(11).lognormal(size=100_000)
    assert ks_uniformity(pit_transform(build_ecdf(x), x)) < 0.006


@pytest.mark.parametrize("n", [1_000, 10_000, 100_000])
def test_holdout_pit_shrinks(n):
    rng = np.random.default_rng(n)
    F = build_ecdf(rng.lognormal(size=10 * n))
    ks = ks_uniformity(pit_transform(F, rng.lognormal(size=n)))
    assert ks <= ks_threshold(n) + 1.63 / np.sqrt(10 * n)
