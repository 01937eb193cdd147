import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from tailproj.projection import (CensoredSample, DegenerateSampleError,
                                 as_direction, censor, diagonal,
                                 max_projection, min_projection,
                                 min_projection_inverted)
from tailproj.simulators import sample_inverted_logistic, sample_logistic_ev

positive = st.floats(1e-3, 1e3)


def directions(d):
    return arrays(float, d, elements=st.floats(0.0, 1.0)).filter(
        lambda w: w.sum() > 1e-3).map(lambda w: w / w.sum())


def test_direction_validation():
    assert np.allclose(diagonal(3), [1 / 3] * 3)
    with pytest.raises(ValueError):
        as_direction([0.5, 0.6])
    with pytest.raises(ValueError):
        as_direction([1.2, -0.2])
    with pytest.raises(ValueError):
        as_direction([1.0])


def test_min_projection_examples():
    assert min_projection([[1, 2]], [0.5, 0.5])[0] == 2
    assert min_projection([[3, 7]], [1, 0])[0] == 3
    assert min_projection([[1, 2, 3]], [0.5, 0.25, 0.25])[0] == 2


def test_max_projection_examples():
    assert max_projection([[4, 1]], [0.5, 0.5])[0] == 2
    assert max_projection([[4, 1]], [1, 0])[0] == 4


def test_min_projection_inverted_examples():
    assert min_projection_inverted([[2, 2]], [0.5, 0.5])[0] == 1
    with pytest.raises(ValueError):
        min_projection_inverted([[0.0, 1.0]], [0.5, 0.5])


@settings(max_examples=50)
@given(arrays(float, (5, 3), elements=positive), directions(3))
def test_reciprocal_identity(x, w):
    # componentwise-reciprocal reading of max = 1/min
    np.testing.assert_allclose(max_projection(x, w),
                               1.0 / min_projection(1.0 / x, w), rtol=1e-12)
    np.testing.assert_allclose(min_projection_inverted(x, w),
                               min_projection(1.0 / x, w), rtol=1e-12)


@settings(max_examples=50)
@given(arrays(float, (4, 3), elements=positive), directions(3),
       st.permutations(range(3)))
def test_permutation_equivariance(x, w, perm):
    perm = list(perm)
    np.testing.assert_allclose(min_projection(x[:, perm], w[perm]),
                               min_projection(x, w))
    np.testing.assert_allclose(max_projection(x[:, perm], w[perm]),
                               max_projection(x, w))


@settings(max_examples=50)
@given(arrays(float, (4, 2), elements=positive), directions(2),
       st.floats(1e-3, 1e3))
def test_scale_homogeneity(x, w, c):
    np.testing.assert_allclose(min_projection(c * x, w),
                               c * min_projection(x, w), rtol=1e-12)


def test_logistic_min_inverted_mean_and_ks():
    x = sample_logistic_ev(0.8, 2000, seed=11)
    m = min_projection_inverted(x, [0.5, 0.5])
    assert abs(m.mean() - 2 ** 0.2) < 0.06
    A = 2 ** -0.2
    assert stats.kstest(m, stats.expon(scale=1 / A).cdf).pvalue > 0.01


def test_inverted_logistic_min_projection_ks():
    x = sample_inverted_logistic(0.6, 5000, seed=12)
    m = min_projection(x, [0.5, 0.5])
    A = 2 ** (0.6 - 1)
    assert stats.kstest(m, stats.expon(scale=1 / A).cdf).pvalue > 0.01


def test_censor_excesses_type7():
    v = np.arange(1, 101, dtype=float)
    s = censor(v, 0.95, "excesses_above_u")
    assert s.threshold == pytest.approx(95.05)
    assert s.values.size == 5 and np.all(s.values > 0)
    np.testing.assert_allclose(s.values, v[95:] - 95.05)


def test_censor_deficits_type7():
    v = np.arange(1, 101, dtype=float)
    s = censor(v, 0.05, "deficits_below_u")
    assert s.threshold == pytest.approx(5.95)
    assert s.n_uncensored == 5 and s.n_censored == 95
    assert np.array_equal(s.censored, v >= s.threshold)


def test_censor_left_censored():
    v = np.arange(1, 101, dtype=float)
    s = censor(v, 0.95, "left_censored_at_u")
    assert np.array_equal(s.censored, v <= s.threshold)
    assert s.values.size == 100


def test_censor_errors():
    with pytest.raises(DegenerateSampleError, match="degenerate threshold"):
        censor(np.ones(10), 0.5, "deficits_below_u")
    with pytest.raises(ValueError):
        censor(np.arange(10.0), 1.5, "deficits_below_u")
    with pytest.raises(ValueError):
        censor(np.arange(10.0), 0.5, "sideways")


@settings(max_examples=50)
@given(arrays(float, 30, elements=st.floats(0, 100), unique=True),
       st.floats(0.05, 0.95))
def test_censor_invariants(v, q):
    d = censor(v, q, "deficits_below_u")
    assert np.array_equal(d.censored, d.values >= d.threshold)
    lc = censor(v, q, "left_censored_at_u")
    assert np.array_equal(lc.censored, lc.values <= lc.threshold)
    e = censor(v, q, "excesses_above_u")
    assert np.all(e.values > 0)


def test_censored_sample_is_dataclass():
    s = CensoredSample(np.array([0.1, 0.5]), 0.5, "deficits_below_u",
                       np.array([False, True]))
    assert s.n_uncensored == 1 and s.n_censored == 1
