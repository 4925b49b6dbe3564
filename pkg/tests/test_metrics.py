"""srcc/plcc are the headline numbers of every report, so they get two
independent oracles: a from-the-definition scalar loop and scipy.stats.
"""

import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from triqa.errors import DataError
from triqa.metrics import average_ranks, plcc, srcc


def oracle_pearson(x, y):
    """Pure-python Pearson from the definition."""
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    num = sum((xi - mx) * (yi - my) for xi, yi in zip(x, y))
    dx = math.sqrt(sum((xi - mx) ** 2 for xi in x))
    dy = math.sqrt(sum((yi - my) ** 2 for yi in y))
    return num / (dx * dy)


def oracle_ranks(x):
    """Fractional ranks via sorted positions, ties averaged."""
    order = sorted(range(len(x)), key=lambda i: x[i])
    ranks = [0.0] * len(x)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def oracle_spearman(x, y):
    return oracle_pearson(oracle_ranks(list(x)), oracle_ranks(list(y)))


def test_average_ranks_hand_cases():
    assert average_ranks([10.0, 20.0, 20.0, 30.0]).tolist() == [1.0, 2.5, 2.5, 4.0]
    assert average_ranks([5.0, 5.0, 5.0]).tolist() == [2.0, 2.0, 2.0]
    assert average_ranks([3.0, 1.0, 2.0]).tolist() == [3.0, 1.0, 2.0]


def test_matches_oracles_on_1000_random_instances(rng):
    for trial in range(1000):
        n = int(rng.integers(2, 30))
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        if trial % 3 == 0:
            # quantize to force ties
            x = np.round(x * 2) / 2
            y = np.round(y * 2) / 2
        if np.all(x == x[0]) or np.all(y == y[0]):
            continue
        assert plcc(x, y) == pytest.approx(oracle_pearson(x, y), abs=1e-12)
        assert srcc(x, y) == pytest.approx(oracle_spearman(x, y), abs=1e-12)


def test_matches_scipy(rng):
    for _ in range(50):
        n = int(rng.integers(3, 40))
        x = np.round(rng.normal(size=n) * 3, 1)  # ties likely
        y = rng.normal(size=n)
        if np.all(x == x[0]):
            continue
        assert plcc(x, y) == pytest.approx(scipy.stats.pearsonr(x, y).statistic, abs=1e-10)
        assert srcc(x, y) == pytest.approx(scipy.stats.spearmanr(x, y).statistic, abs=1e-10)


def test_srcc_invariant_under_monotone_transform(rng):
    x = rng.normal(size=25)
    y = rng.normal(size=25)
    base = srcc(x, y)
    assert srcc(np.exp(x), y) == pytest.approx(base, abs=1e-12)
    assert srcc(x**3, y) == pytest.approx(base, abs=1e-12)
    assert srcc(-x, y) == pytest.approx(-base, abs=1e-12)


def test_plcc_invariant_under_positive_affine(rng):
    x = rng.normal(size=25)
    y = rng.normal(size=25)
    base = plcc(x, y)
    assert plcc(3.5 * x + 11.0, y) == pytest.approx(base, abs=1e-12)
    assert plcc(-2.0 * x, y) == pytest.approx(-base, abs=1e-12)


def test_perfect_correlations():
    x = np.arange(10.0)
    assert srcc(x, x) == pytest.approx(1.0, abs=1e-15)
    assert srcc(x, -x) == pytest.approx(-1.0, abs=1e-15)
    assert plcc(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("fn", [srcc, plcc])
def test_validation_errors(fn):
    with pytest.raises(DataError, match="mismatch"):
        fn([1.0, 2.0], [1.0])
    with pytest.raises(DataError, match="at least 2"):
        fn([1.0], [1.0])
    with pytest.raises(DataError, match="constant"):
        fn([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(DataError, match="non-finite"):
        fn([1.0, float("nan"), 3.0], [1.0, 2.0, 3.0])


@given(
    st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=40),
    st.integers(0, 2**32 - 1),
)
@settings(max_examples=200, deadline=None)
def test_property_range_and_self_correlation(x, seed):
    x = np.asarray(x)
    if np.all(x == x[0]):
        return
    y = np.random.default_rng(seed).normal(size=x.shape[0])
    if np.all(y == y[0]):
        return
    for fn in (srcc, plcc):
        v = fn(x, y)
        assert -1.0 - 1e-12 <= v <= 1.0 + 1e-12
    assert srcc(x, x) == pytest.approx(1.0, abs=1e-12)
