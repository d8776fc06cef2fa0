import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mbbda.errors import NumericalError
from mbbda.preprocess import masked_median, size_factors, size_factors_batch, transform


def oracle_size_factors(counts):
    """Straight-line median of ratios over taxa with no zero counts."""
    counts = np.asarray(counts, dtype=float)
    out = []
    for s in range(counts.shape[1]):
        ratios = []
        for row in counts:
            if np.all(row > 0):
                g = np.exp(np.mean(np.log(row)))
                ratios.append(row[s] / g)
        out.append(np.median(ratios))
    return np.array(out)


def test_hand_example():
    sf = size_factors(np.array([[2, 4], [8, 16]]))
    np.testing.assert_allclose(sf.delta, [0.7071, 1.4142], atol=1e-3)
    np.testing.assert_allclose(sf.delta, [2 ** -0.5, 2 ** 0.5], rtol=1e-12)


def test_identical_columns_give_unit_factors():
    sf = size_factors(np.tile([[3], [9], [1]], (1, 4)))
    np.testing.assert_allclose(sf.delta, 1.0)


def test_strict_scheme_ignores_taxa_with_zeros():
    counts = np.array([[2, 4, 8], [0, 100, 1], [5, 10, 20]])
    strict = size_factors(counts, "strict").delta
    np.testing.assert_allclose(strict, size_factors(counts[[0, 2]], "strict").delta)


def test_matches_oracle_on_random_tables():
    rng = np.random.default_rng(1)
    for _ in range(20):
        counts = rng.integers(1, 200, size=(int(rng.integers(1, 30)), int(rng.integers(2, 12))))
        np.testing.assert_allclose(size_factors(counts).delta, oracle_size_factors(counts),
                                   rtol=1e-12)


def test_fallback_for_zero_heavy_tables():
    counts = np.array([[0, 4, 6, 2], [3, 0, 9, 1], [5, 5, 0, 5]])
    with pytest.raises(NumericalError):
        size_factors(counts, "strict")
    sf = size_factors(counts)
    assert np.all(np.isfinite(sf.delta)) and np.all(sf.delta > 0)


def test_no_usable_sample_raises():
    with pytest.raises(NumericalError):
        size_factors(np.array([[0, 3], [0, 5]]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.int64, (5, 6), elements=st.integers(1, 1000)), st.integers(2, 9))
def test_common_scaling_cancels(counts, c):
    np.testing.assert_allclose(size_factors(counts * c).delta, size_factors(counts).delta,
                               rtol=1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(np.int64, (5, 6), elements=st.integers(1, 1000)),
       arrays(np.int64, 6, elements=st.integers(1, 9)))
def test_depth_scaling_is_absorbed(counts, c):
    a = size_factors(counts).delta
    b = size_factors(counts * c).delta
    gm = np.exp(np.mean(np.log(c)))
    np.testing.assert_allclose(b, a * c / gm, rtol=1e-9)
    np.testing.assert_allclose(counts * c / b, gm * counts / a, rtol=1e-9)


def test_batch_matches_single():
    rng = np.random.default_rng(2)
    y = rng.integers(0, 30, size=(4, 8, 10))
    delta, _ = size_factors_batch(y)
    for b in range(4):
        np.testing.assert_allclose(delta[b], size_factors(y[b]).delta, rtol=1e-12)


def test_masked_median_matches_numpy():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(7, 9))
    mask = rng.random((7, 9)) > 0.3
    mask[:, 0] = True
    got = masked_median(x, mask, axis=0)
    want = [np.median(x[mask[:, j], j]) for j in range(9)]
    np.testing.assert_allclose(got, want)


def test_transform_values():
    tm = transform(np.array([[0, 1, 5]]), np.array([1.0, 1.0, 2.0]))
    assert tm.values[0, 0] == 0.0
    assert tm.values[0, 1] == pytest.approx(0.8814, abs=1e-4)
    assert tm.values[0, 1] == pytest.approx(np.log(1 + np.sqrt(2)), abs=1e-15)
    assert tm.values[0, 2] == pytest.approx(np.arcsinh(2.5))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(0, 10 ** 6), st.floats(0.01, 100))
def test_transform_monotone(a, b, delta):
    ta, tb = transform(np.array([[a, b]]), np.array([delta, delta])).values[0]
    assert (a > b) == (ta > tb)
