"""Closed-form dependence quantities.

Pickands function of the logistic family, conversions between the diagonal
summaries (A, lambda, theta, eta, chi-bar) and the sub-asymptotic extremal
coefficient implied by Gaussian dependence at a finite Frechet threshold.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .projection import as_direction

RHO_MAX = 0.999


def pickands_logistic(omega, alpha):
    """Pickands dependence function of the logistic model.

    ``A(w) = (sum_i w_i ** (1/alpha)) ** alpha``. Equals ``max(w)`` in the
    limit ``alpha -> 0`` and 1 at ``alpha = 1``.
    """
    w = as_direction(omega)
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    # factor out max(w) so tiny alpha does not underflow
    wmax = w.max()
    ratio = w / wmax
    return float(wmax * np.sum(ratio ** (1.0 / alpha)) ** alpha)


def frechet_threshold(q):
    """Unit Frechet quantile at level ``1 - 10**(-q)``."""
    q = np.asarray(q, dtype=float)
    return -1.0 / np.log1p(-(10.0 ** (-q)))


def gaussian_joint_tail(r, rho):
    """Asymptotic joint exceedance Pr(X1 > r, X2 > r) for Gaussian dependence
    on unit Frechet margins."""
    r = np.asarray(r, dtype=float)
    e = rho / (1.0 + rho)
    return ((1.0 + rho) ** 1.5 * (1.0 - rho) ** -0.5 * (4.0 * np.pi) ** (-e)
            * r ** (-2.0 / (1.0 + rho)) * np.log(r) ** (-e))


def subasymptotic_theta(r, rho):
    """Extremal coefficient obtained by matching the Gaussian joint tail to the
    second-order expansion of a bivariate extreme value joint tail at level r.

    Values above 2 at low thresholds are a property of the approximation and
    are returned unclipped (with a warning).
    """
    r = np.asarray(r, dtype=float)
    rho = float(rho)
    if not 0.0 <= rho <= RHO_MAX:
        raise ValueError(f"rho must lie in [0, {RHO_MAX}], got {rho}")
    if np.any(r <= 1.0):
        raise ValueError("threshold r must exceed 1")
    c = 2.0 * gaussian_joint_tail(r, rho)
    radicand = r * r - 4.0 * r + 2.0 + c
    if np.any(radicand < 0):
        raise ValueError("negative radicand: threshold too low for this rho")
    # r - sqrt(r^2 - 4r + 2 + c), rationalised to avoid cancellation at large r
    theta = (4.0 * r - 2.0 - c) / (r + np.sqrt(radicand))
    if np.any(theta > 2.0):
        warnings.warn("sub-asymptotic extremal coefficient exceeds 2 at low "
                      "threshold", RuntimeWarning, stacklevel=2)
    return theta if theta.ndim else float(theta)


def grid_theta_rho(q_levels=range(1, 11), rho_grid=None):
    """Tabulate theta(r(q), rho) as a tidy table (q, r, rho, theta)."""
    if rho_grid is None:
        rho_grid = np.round(np.arange(0.0, 1.0, 0.1), 10)
    q_levels = np.asarray(list(q_levels), dtype=float)
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for rho in rho_grid:
            r = frechet_threshold(q_levels)
            th = np.atleast_1d(subasymptotic_theta(r, rho))
            for q, rq, t in zip(q_levels, r, th):
                rows.append((int(q), rq, float(rho), t))
    return pd.DataFrame(rows, columns=["q", "r", "rho", "theta"])


@dataclass(frozen=True)
class DependenceSummary:
    """Mutually determined diagonal summaries in dimension ``d``."""

    d: int
    A: float
    lam: float
    theta: float
    eta: float
    chibar: float | None


def summary_conversions(d=2, *, A=None, lam=None, theta=None, eta=None,
                        chibar=None):
    """Fill every diagonal summary from exactly one given value.

    ``theta = d * A(1/d, ..., 1/d)`` and ``eta = 1 / (d * lam(1/d, ..., 1/d))``;
    ``chibar = 2 * eta - 1`` is only defined for ``d = 2``. Under asymptotic
    dependence ``lam = 1 / d``; an input of ``A``/``theta`` leaves the
    asymptotic-independence pair (lam, eta) at the values of an inverted
    max-stable model, i.e. ``lam = A``.
    """
    given = {k: v for k, v in dict(A=A, lam=lam, theta=theta, eta=eta,
                                   chibar=chibar).items() if v is not None}
    if len(given) != 1:
        raise ValueError("provide exactly one summary")
    if d < 2:
        raise ValueError("d must be at least 2")
    (name, value), = given.items()
    value = float(value)
    lo = 1.0 / d
    if name == "chibar":
        if d != 2:
            raise ValueError("chibar is defined for d = 2 only")
        if not -1.0 < value <= 1.0:
            raise ValueError("chibar must lie in (-1, 1]")
        eta = (1.0 + value) / 2.0
        name, value = "eta", eta
    if name == "theta":
        if not 1.0 <= value <= d:
            raise ValueError(f"theta must lie in [1, {d}]")
        A = value / d
    elif name == "A":
        if not lo <= value <= 1.0:
            raise ValueError(f"A must lie in [{lo}, 1]")
        A = value
    elif name == "eta":
        if not 0.0 < value <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        A = 1.0 / (d * value)
    else:  # lam
        if not lo <= value:
            raise ValueError(f"lambda must be at least {lo}")
        A = value
    lam = A
    eta_v = 1.0 / (d * lam)
    if name == "eta":
        eta_v = value
    theta_v = d * A if name != "theta" else value
    chi = 2.0 * eta_v - 1.0 if d == 2 else None
    if given.get("chibar") is not None:
        chi = float(given["chibar"])
    return DependenceSummary(d=d, A=A, lam=lam, theta=theta_v, eta=eta_v,
                             chibar=chi)
