import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailproj.theory import (RHO_MAX, frechet_threshold, grid_theta_rho,
                             pickands_logistic, subasymptotic_theta,
                             summary_conversions)


def theta_oracle(r, rho, dps=50):
    """Direct high-precision evaluation of r - sqrt(radicand)."""
    with mpmath.workdps(dps):
        r, rho = mpmath.mpf(r), mpmath.mpf(rho)
        c = (2 * (1 + rho) ** mpmath.mpf(1.5) * (1 - rho) ** mpmath.mpf(-0.5)
             * (4 * mpmath.pi) ** (-rho / (1 + rho)) * r ** (-2 / (1 + rho))
             * mpmath.log(r) ** (-rho / (1 + rho)))
        return float(r - mpmath.sqrt(r * r - 4 * r + 2 + c))


# pickands_logistic ---------------------------------------------------------

def test_pickands_diagonal_value():
    assert pickands_logistic([0.5, 0.5], 0.8) == pytest.approx(2 ** -0.2, abs=1e-12)
    assert pickands_logistic([0.5, 0.5], 0.8) == pytest.approx(0.87055, abs=1e-5)


def test_pickands_independence_and_vertex():
    for w in ([0.3, 0.7], [0.5, 0.5], [0.1, 0.2, 0.7]):
        assert pickands_logistic(w, 1.0) == pytest.approx(1.0)
    assert pickands_logistic([1.0, 0.0], 0.4) == pytest.approx(1.0)


def test_pickands_alpha_range():
    for a in (0.0, -0.1, 1.2):
        with pytest.raises(ValueError):
            pickands_logistic([0.5, 0.5], a)


@given(st.floats(0.0, 1.0), st.floats(0.02, 1.0))
def test_pickands_bounds(w1, alpha):
    w = np.array([w1, 1 - w1])
    A = pickands_logistic(w, alpha)
    assert max(w) - 1e-12 <= A <= 1 + 1e-12


@given(st.floats(0.05, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0),
       st.floats(0.0, 1.0))
def test_pickands_convex_along_segments(alpha, a, b, lam):
    wa, wb = np.array([a, 1 - a]), np.array([b, 1 - b])
    mid = lam * wa + (1 - lam) * wb
    lhs = pickands_logistic(mid, alpha)
    rhs = lam * pickands_logistic(wa, alpha) + (1 - lam) * pickands_logistic(wb, alpha)
    assert lhs <= rhs + 1e-12


def test_pickands_small_alpha_tends_to_max():
    assert pickands_logistic([0.3, 0.7], 0.01) == pytest.approx(0.7, abs=1e-3)


# subasymptotic theta --------------------------------------------------------

def test_frechet_threshold_levels():
    assert frechet_threshold(1) == pytest.approx(-1 / math.log(0.9))
    assert frechet_threshold(1) == pytest.approx(9.4912, abs=1e-4)
    assert frechet_threshold(10) == pytest.approx(1e10, rel=1e-9)


@pytest.mark.parametrize("q", range(1, 11))
@pytest.mark.parametrize("rho", [0.0, 0.3, 0.5, 0.9, 0.99])
def test_theta_matches_high_precision_oracle(q, rho):
    r = frechet_threshold(q)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        got = subasymptotic_theta(r, rho)
    assert got == pytest.approx(theta_oracle(r, rho), rel=1e-12, abs=1e-13)


def test_theta_rho0_q5_and_q1():
    # the printed formula reaches 2 from above: 2 + 1/r + O(r^-2) at rho = 0
    r5 = frechet_threshold(5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        v = subasymptotic_theta(r5, 0.0)
    assert 1.9 <= v <= 2.0 + 1.01 / r5
    assert v - 2.0 == pytest.approx(1.0 / r5, rel=1e-3)
    with pytest.warns(RuntimeWarning):
        v = subasymptotic_theta(frechet_threshold(1), 0.0)
    assert v == pytest.approx(2.133, abs=1e-3)


def test_theta_domain_errors():
    with pytest.raises(ValueError):
        subasymptotic_theta(100.0, 1.0)
    with pytest.raises(ValueError):
        subasymptotic_theta(100.0, RHO_MAX + 1e-6)
    with pytest.raises(ValueError):
        subasymptotic_theta(1.0, 0.5)
    with pytest.raises(ValueError):
        subasymptotic_theta(0.5, 0.5)


def test_theta_rate_one_over_r():
    q = np.arange(4, 11)
    r = frechet_threshold(q)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        gap = 2.0 - np.array([subasymptotic_theta(v, 0.0) for v in r])
    slope = np.polyfit(np.log(r), np.log(np.abs(gap)), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.05)


def test_grid_shape_and_tail_behaviour():
    tab = grid_theta_rho()
    assert len(tab) == 100
    assert list(tab.columns) == ["q", "r", "rho", "theta"]
    assert not tab["theta"].isna().any()
    for rho, g in tab.groupby("rho"):
        tail = g[g.q >= 4].sort_values("q")["theta"].to_numpy()
        # monotone in q and converging to 2 (from above, for every rho)
        assert np.all(np.diff(tail) <= 0)
        assert np.all(np.diff(np.abs(tail - 2.0)) <= 0)
        if rho == 0.0:
            assert np.all(np.abs(g[g.q >= 3]["theta"] - 2) < 0.01)


def test_grid_no_nans_up_to_099():
    tab = grid_theta_rho(rho_grid=[0.95, 0.99])
    assert len(tab) == 20 and not tab["theta"].isna().any()


# summary conversions -------------------------------------------------------

def test_conversions_examples():
    s = summary_conversions(lam=1.0)
    assert s.eta == pytest.approx(0.5) and s.chibar == pytest.approx(0.0)
    s = summary_conversions(eta=1.0)
    assert s.lam == pytest.approx(0.5) and s.chibar == pytest.approx(1.0)
    assert summary_conversions(A=0.87055).theta == pytest.approx(1.7411)


def test_conversions_d_dimensional():
    s = summary_conversions(d=3, lam=1.0)
    assert s.eta == pytest.approx(1 / 3)
    assert summary_conversions(d=3, A=0.5).theta == pytest.approx(1.5)


def test_conversions_need_exactly_one_input():
    with pytest.raises(ValueError):
        summary_conversions()
    with pytest.raises(ValueError):
        summary_conversions(A=0.7, eta=0.7)
    with pytest.raises(ValueError):
        summary_conversions(eta=1.5)


@settings(max_examples=60)
@given(st.floats(0.5, 1.0))
def test_conversions_involutive(eta):
    s = summary_conversions(eta=eta)
    for key in ("A", "lam", "theta", "eta", "chibar"):
        back = summary_conversions(**{key: getattr(s, key)})
        assert back.eta == pytest.approx(eta, rel=1e-12)
