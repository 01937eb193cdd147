import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from tailproj.simulators import (ScenarioError, covariate_grid,
                                 covariate_param, load_scenario, make_rng,
                                 positive_stable, sample,
                                 sample_archimedean_mda,
                                 sample_gaussian_copula,
                                 sample_inverted_logistic, sample_logistic_ev,
                                 simulate_scenario, spawn_seeds, true_summary,
                                 validate_scenario)

N = 40000


def binomial_ok(hits, n, p, z=4.0):
    return abs(hits - n * p) <= z * math.sqrt(n * p * (1 - p))


def frechet_cdf(x):
    return np.exp(-1.0 / x)


# determinism ------------------------------------------------------------------

@pytest.mark.parametrize("fn,arg", [(sample_logistic_ev, 0.6),
                                    (sample_archimedean_mda, 0.6),
                                    (sample_inverted_logistic, 0.6),
                                    (sample_gaussian_copula, 0.4)])
def test_seeded_samplers_are_bit_identical(fn, arg):
    a, b = fn(arg, 500, seed=5), fn(arg, 500, seed=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, fn(arg, 500, seed=6))


def test_make_rng_is_philox_and_passthrough():
    g = make_rng(1)
    assert isinstance(g.bit_generator, np.random.Philox)
    assert make_rng(g) is g
    kids = spawn_seeds(3, 4)
    assert len({make_rng(k).integers(1 << 62) for k in kids}) == 4


# positive stable ----------------------------------------------------------------

@pytest.mark.parametrize("alpha", [0.3, 0.7])
def test_positive_stable_laplace_transform(alpha):
    logS = positive_stable(np.full(N, alpha), make_rng(1))
    for t in (0.5, 1.0, 2.0):
        emp = np.mean(np.exp(-t * np.exp(logS)))
        se = np.std(np.exp(-t * np.exp(logS))) / math.sqrt(N)
        assert abs(emp - math.exp(-t ** alpha)) < 4 * se


def test_positive_stable_small_alpha_finite():
    logS = positive_stable(np.full(1000, 0.02), make_rng(2))
    assert np.all(np.isfinite(logS))


# logistic -----------------------------------------------------------------------

@pytest.mark.parametrize("alpha", [0.3, 0.8, 1.0])
def test_logistic_margins_and_joint_cdf(alpha):
    x = sample_logistic_ev(alpha, N, seed=3)
    for j in range(2):
        assert stats.kstest(x[:, j], frechet_cdf).pvalue > 0.001
    for z in (0.5, 1.0, 3.0):
        p = math.exp(-(2 ** alpha) / z)
        assert binomial_ok(np.sum(np.all(x <= z, axis=1)), N, p)


def test_logistic_d3_joint_cdf():
    x = sample_logistic_ev(0.5, N, seed=4, d=3)
    p = math.exp(-(3 ** 0.5))
    assert binomial_ok(np.sum(np.all(x <= 1, axis=1)), N, p)


def test_logistic_covariate_vector_alpha():
    alpha = np.r_[np.full(N // 2, 0.3), np.full(N // 2, 0.9)]
    x = sample_logistic_ev(alpha, N, seed=5)
    for lo, a in ((0, 0.3), (N // 2, 0.9)):
        part = x[lo:lo + N // 2]
        assert binomial_ok(np.sum(np.all(part <= 1, axis=1)), N // 2, math.exp(-(2 ** a)))


def test_logistic_parameter_errors():
    for bad in (0.0, 1.5, -0.1, np.nan):
        with pytest.raises(ValueError):
            sample_logistic_ev(bad, 10, seed=0)
    with pytest.raises(ValueError):
        sample_logistic_ev([0.5, 0.6], 10, seed=0)
    with pytest.raises(ValueError):
        sample_logistic_ev(0.5, 0, seed=0)


# archimedean ----------------------------------------------------------------------

def archimedean_cdf(u, v, alpha):
    return 1.0 / (1.0 + ((1 / u - 1) ** (1 / alpha) + (1 / v - 1) ** (1 / alpha)) ** alpha)


@pytest.mark.parametrize("alpha", [0.2, 0.5, 0.9])
def test_archimedean_copula_frequencies(alpha):
    x = sample_archimedean_mda(alpha, N, seed=6)
    u = frechet_cdf(x)
    for j in range(2):
        assert stats.kstest(u[:, j], "uniform").pvalue > 0.001
    for q1, q2 in ((0.5, 0.5), (0.9, 0.9), (0.3, 0.8), (0.99, 0.99)):
        p = archimedean_cdf(q1, q2, alpha)
        hits = np.sum((u[:, 0] <= q1) & (u[:, 1] <= q2))
        assert binomial_ok(hits, N, p)


def test_archimedean_upper_tail_dependence():
    # chi = 2 - 2^alpha for the MDA of the logistic law
    alpha = 0.5
    x = sample_archimedean_mda(alpha, 200000, seed=7)
    u = 1e3
    joint = np.mean(np.all(x > u, axis=1)) / np.mean(x[:, 0] > u)
    assert joint == pytest.approx(2 - 2 ** alpha, abs=0.05)


def test_archimedean_zero_alpha_limit_allowed_boundaries():
    with pytest.raises(ValueError):
        sample_archimedean_mda(1.0, 10, seed=0)
    x = sample_archimedean_mda(0.01, 1000, seed=0)
    assert np.all(np.isfinite(x)) and np.all(x > 0)


# inverted logistic ------------------------------------------------------------------

@pytest.mark.parametrize("alpha", [0.4, 0.8])
def test_inverted_logistic_joint_survival(alpha):
    x = sample_inverted_logistic(alpha, N, seed=8)
    for j in range(2):
        assert stats.kstest(x[:, j], "expon").pvalue > 0.001
    for t in (0.3, 1.0, 2.0):
        p = math.exp(-t * 2 ** alpha)
        assert binomial_ok(np.sum(np.all(x > t, axis=1)), N, p)


def test_inverted_logistic_pareto_scale():
    a = sample_inverted_logistic(0.6, 100, seed=9)
    b = sample_inverted_logistic(0.6, 100, seed=9, scale="pareto")
    np.testing.assert_allclose(b, np.exp(a))
    with pytest.raises(ValueError):
        sample_inverted_logistic(0.6, 10, seed=9, scale="frechet")


# gaussian ------------------------------------------------------------------------------

@pytest.mark.parametrize("rho", [0.0, 0.5, 0.9])
def test_gaussian_spearman_and_margins(rho):
    x = sample_gaussian_copula(rho, N, seed=10)
    assert stats.kstest(x[:, 0], frechet_cdf).pvalue > 0.001
    rs = stats.spearmanr(x[:, 0], x[:, 1])[0]
    assert rs == pytest.approx(6 / math.pi * math.asin(rho / 2), abs=0.02)


def test_gaussian_extreme_tail_not_rounded():
    z = sample_gaussian_copula(0.5, 200000, seed=11, scale="normal")
    e = sample_gaussian_copula(0.5, 200000, seed=11, scale="exponential")
    assert np.all(np.isfinite(e)) and e.max() > 10
    np.testing.assert_allclose(e, -stats.norm.logsf(z), rtol=1e-10)


def test_gaussian_rho_one_rejected():
    with pytest.raises(ValueError):
        sample_gaussian_copula(1.0, 10, seed=0)


# scenarios --------------------------------------------------------------------

def test_covariate_param_values():
    assert covariate_param("alpha_mda", 0.0) == pytest.approx(math.log(1.5) / math.log(2))
    assert covariate_param("alpha_linear", 0.5) == pytest.approx(0.45)
    assert true_summary("alpha_linear", 1.0) == pytest.approx(2 ** 0.95)
    assert true_summary("rho_linear", 0.5) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        covariate_param("alpha_linear", 0.05)
    with pytest.raises(ValueError):
        covariate_param("nope", 0.5)


@given(st.floats(0.0, 1.0))
def test_alpha_mda_in_unit_interval(y):
    a = covariate_param("alpha_mda", y)
    assert 0 < a < 1


@settings(max_examples=30)
@given(st.integers(1, 500), st.integers(1, 20))
def test_covariate_grid_balanced(n, k):
    g = covariate_grid(n, np.arange(k))
    assert g.size == n
    counts = np.bincount(g.astype(int), minlength=k)
    assert counts.max() - counts.min() <= 1
    assert np.all(np.diff(g) >= 0)


def test_validate_scenario_errors():
    with pytest.raises(ScenarioError):
        validate_scenario({"family": "logistic_ev", "alpha": 1.5})
    with pytest.raises(ScenarioError):
        validate_scenario({"family": "clayton", "alpha": 0.5})
    with pytest.raises(ScenarioError):
        validate_scenario({"family": "gaussian"})
    with pytest.raises(ScenarioError):
        validate_scenario({"family": "gaussian", "param_kind": "alpha_linear"})
    with pytest.raises(ScenarioError):
        validate_scenario({"family": "logistic_ev", "alpha": 0.5, "n": -3})
    with pytest.raises(ScenarioError):
        validate_scenario([1, 2])


def test_simulate_scenario_table(tmp_path):
    spec = {"family": "logistic_ev", "param_kind": "alpha_linear",
            "grid_size": 5, "n": 1000, "seed": 3}
    p = tmp_path / "s.json"
    p.write_text(json.dumps(spec))
    loaded = load_scenario(p)
    df = simulate_scenario(loaded)
    assert list(df.columns) == ["row_id", "x1", "x2", "t"]
    assert len(df) == 1000 and df["t"].nunique() == 5
    again = simulate_scenario(loaded)
    assert df.equals(again)


def test_sample_dispatch():
    assert sample("gaussian", 0.3, 10, seed=1, scale="uniform").max() < 1
    with pytest.raises(ValueError):
        sample("logistic_ev", 0.5, 10, seed=1, scale="exponential")
    with pytest.raises(ValueError):
        sample("t_copula", 0.5, 10, seed=1)
