import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailproj.harness.bootstrap import (DegenerateResample, block_indices,
                                        bootstrap_dependence,
                                        percentile_bootstrap, resample_rows)
from tailproj.simulators import make_rng, sample_logistic_ev


def mean_refit(x):
    return lambda rows: np.array([x[rows].mean()])


def test_block_indices_sorted_labels():
    blocks = block_indices(["b", "a", "b", "c", "a"])
    assert [list(b) for b in blocks] == [[1, 4], [0, 2], [3]]
    two = block_indices(np.array([[2000, 1], [2000, 2], [2000, 1]]))
    assert [list(b) for b in two] == [[0, 2], [1]]


@settings(max_examples=30)
@given(st.integers(1, 50), st.integers(0, 1000))
def test_singleton_blocks_equal_iid(n, seed):
    blocks = block_indices(np.arange(n))
    a = resample_rows(make_rng(seed), n, blocks)
    b = resample_rows(make_rng(seed), n, None)
    assert np.array_equal(a, b)


def test_block_resample_keeps_blocks_whole():
    keys = np.repeat(np.arange(10), 5)
    blocks = block_indices(keys)
    rows = resample_rows(make_rng(0), 50, blocks)
    assert rows.size == 50
    for chunk in rows.reshape(10, 5):
        assert np.unique(keys[chunk]).size == 1


def test_percentile_interval_contains_estimate_and_is_deterministic():
    x = make_rng(1).normal(size=400)
    a = percentile_bootstrap(mean_refit(x), 400, B=200, seed=5)
    b = percentile_bootstrap(mean_refit(x), 400, B=200, seed=5)
    assert np.array_equal(a.replicates, b.replicates)
    assert a.lower[0] <= a.estimate[0] <= a.upper[0]
    # normal-theory width 2 * 1.96 * s / sqrt(n)
    width = a.upper[0] - a.lower[0]
    assert width == pytest.approx(2 * 1.96 * x.std() / 20, rel=0.2)


def test_width_shrinks_like_root_n():
    rng = make_rng(2)
    w = []
    for n in (400, 1600):
        x = rng.normal(size=n)
        r = percentile_bootstrap(mean_refit(x), n, B=300, seed=3)
        w.append(r.upper[0] - r.lower[0])
    assert w[0] / w[1] == pytest.approx(2.0, rel=0.25)


def test_jobs_do_not_change_result():
    x = make_rng(4).normal(size=100)
    a = percentile_bootstrap(mean_refit(x), 100, B=20, seed=1)
    b = percentile_bootstrap(_MeanRefit(x), 100, B=20, seed=1, jobs=2)
    np.testing.assert_array_equal(a.replicates, b.replicates)


class _MeanRefit:
    def __init__(self, x):
        self.x = x

    def __call__(self, rows):
        return np.array([self.x[rows].mean()])


def test_strata_redraws_counted():
    strata = np.r_[np.zeros(19), 1]
    x = np.arange(20.0)
    r = percentile_bootstrap(mean_refit(x), 20, B=20, strata=strata, seed=0)
    assert r.redraws > 0
    assert any("stratum" in m for m in r.log)


def test_failed_refits_redrawn():
    x = np.arange(50.0)

    def refit(rows):
        if 0 not in rows:
            raise DegenerateResample("row 0 missing")
        return np.array([x[rows].mean()])

    r = percentile_bootstrap(refit, 50, B=30, seed=2, estimate=[x.mean()])
    assert r.redraws > 0 and r.replicates.shape == (30, 1)


def test_hopeless_resampling_raises():
    def refit(rows):
        raise DegenerateResample("always")
    with pytest.raises(RuntimeError, match="too many"):
        percentile_bootstrap(refit, 10, B=5, seed=0, max_redraws=10,
                             estimate=[0.0])


def test_bootstrap_dependence_covers_truth():
    x = sample_logistic_ev(0.8, 10000, seed=8)
    tab, res = bootstrap_dependence(x, B=60, seed=9)
    assert list(tab.columns)[-3:] == ["estimate", "lower", "upper"]
    lo, up = tab["lower"].iloc[0], tab["upper"].iloc[0]
    assert lo <= tab["estimate"].iloc[0] <= up
    assert lo - 0.05 <= 2 ** 0.8 <= up + 0.05
