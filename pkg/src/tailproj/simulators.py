"""Exact bivariate samplers and covariate-indexed parameter functions.

All samplers draw from ``numpy.random.Philox`` (a counter-based generator),
so a given ``(parameters, n, seed)`` reproduces the same sample on any
platform. Parameters may be scalars or length-``n`` vectors, one value per
row, which is how covariate-dependent scenarios are simulated.
"""
from __future__ import annotations

import json

import numpy as np
import pandas as pd
from scipy import special

from .margins import _from_log_pair
from .theory import RHO_MAX

FAMILIES = ("logistic_ev", "archimedean_mda", "inverted_logistic", "gaussian")


class ScenarioError(ValueError):
    """Malformed simulation scenario."""


def make_rng(seed=None):
    """Philox generator from an int, a ``SeedSequence`` or ``None``.

    An existing ``Generator`` is passed through unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def spawn_seeds(seed, n):
    """``n`` independent child seed sequences, reproducible from ``seed``."""
    return np.random.SeedSequence(seed).spawn(n)


def _param(value, n, name, lo, hi, lo_open, hi_open):
    v = np.asarray(value, float)
    if v.ndim > 1 or (v.ndim == 1 and v.size != n):
        raise ValueError(f"{name} must be a scalar or have length n={n}")
    bad = ((v < lo) | (v > hi) | (lo_open & (v == lo)) | (hi_open & (v == hi))
           | ~np.isfinite(v))
    if np.any(bad):
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise ValueError(f"{name} must lie in {lb}{lo}, {hi}{rb}")
    return np.broadcast_to(v, (n,))


def _check_n(n):
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    return int(n)


def positive_stable(alpha, rng):
    """log of a positive alpha-stable variable with Laplace transform
    ``exp(-t**alpha)`` (Kanter's representation), computed in logs so that
    small alpha does not overflow. ``alpha`` is a vector."""
    alpha = np.asarray(alpha, float)
    n = alpha.size
    U = rng.uniform(0.0, np.pi, n)
    W = rng.exponential(size=n)
    a = np.where(alpha < 1.0, alpha, 0.5)   # placeholder where alpha == 1
    logS = (np.log(np.sin(a * U)) - np.log(np.sin(U)) / a
            + (1.0 - a) / a * (np.log(np.sin((1.0 - a) * U)) - np.log(W)))
    # alpha = 1: the degenerate law at 1
    return np.where(alpha < 1.0, logS, 0.0)


def sample_logistic_ev(alpha, n, seed=None, d=2):
    """Logistic max-stable vectors with unit Frechet margins.

    ``F(z) = exp{-(sum_i z_i^(-1/alpha))^alpha}``, sampled as
    ``Z_i = (S / E_i)^alpha`` with ``S`` positive stable and ``E_i`` standard
    exponential. ``alpha = 1`` gives independence.
    """
    n = _check_n(n)
    alpha = _param(alpha, n, "alpha", 0.0, 1.0, True, False)
    rng = make_rng(seed)
    logS = positive_stable(alpha, rng)
    E = rng.exponential(size=(n, d))
    return np.exp(alpha[:, None] * (logS[:, None] - np.log(E)))


def sample_archimedean_mda(alpha, n, seed=None):
    """Archimedean copula with generator ``phi(t) = (1/t - 1)^(1/alpha)``,

    ``C(u, v) = 1 / (1 + [(1/u - 1)^(1/alpha) + (1/v - 1)^(1/alpha)]^alpha)``,

    returned on unit Frechet margins. It lies in the max-domain of attraction
    of the logistic distribution with the same ``alpha``.

    Sampled exactly through the Kendall-distribution construction: with
    ``K(w) = w + alpha w (1 - w)``, draw ``w = K^{-1}(p)`` and split
    ``phi(w)`` by an independent uniform ``s``. Everything is carried on the
    ``1 - w`` and ``-log u`` scales so the upper tail keeps full precision.
    """
    n = _check_n(n)
    alpha = _param(alpha, n, "alpha", 0.0, 1.0, True, True)
    rng = make_rng(seed)
    s = rng.uniform(size=n)
    p = rng.uniform(size=n)           # plays 1 - K(w)
    b = 1.0 - alpha
    r = 2.0 * p / (b + np.sqrt(b * b + 4.0 * alpha * p))      # r = 1 - w
    odds = r / (1.0 - r)                                     # phi(w)^alpha
    mlu = np.log1p(s ** alpha * odds)
    mlv = np.log1p((1.0 - s) ** alpha * odds)
    return np.column_stack([1.0 / mlu, 1.0 / mlv])


def sample_inverted_logistic(alpha, n, seed=None, scale="exponential", d=2):
    """Inverted logistic vectors.

    With ``Z`` logistic max-stable on Frechet margins, the exponential-scale
    vector is ``1 / Z`` and the Pareto-scale vector ``exp(1 / Z)``, so that
    ``Pr(X^P_1 > x^w_1, X^P_2 > x^w_2) = x^(-A(w))``.
    """
    if scale not in ("exponential", "pareto"):
        raise ValueError("scale must be 'exponential' or 'pareto'")
    Z = sample_logistic_ev(alpha, n, seed, d=d)
    XE = 1.0 / Z
    return XE if scale == "exponential" else np.exp(XE)


def sample_gaussian_copula(rho, n, seed=None, scale="frechet"):
    """Bivariate normal with correlation ``rho`` mapped to ``scale``
    (``uniform``, ``frechet``, ``exponential``, ``pareto`` or ``normal``).

    The probability integral transform uses ``log Phi`` and ``log(1 - Phi)``
    so extreme normals are not rounded to 0 or 1.
    """
    n = _check_n(n)
    rho = _param(rho, n, "rho", 0.0, 1.0, False, True)
    rng = make_rng(seed)
    z = rng.standard_normal((n, 2))
    x1 = z[:, 0]
    x2 = rho * z[:, 0] + np.sqrt(1.0 - rho * rho) * z[:, 1]
    x = np.column_stack([x1, x2])
    if scale == "normal":
        return x
    return _from_log_pair(special.log_ndtr(x), special.log_ndtr(-x), scale)


# ---------------------------------------------------------------------------
# covariate-dependent parameter functions

PARAM_KINDS = {
    # kind: (family, domain, parameter name)
    "alpha_mda": ("archimedean_mda", (0.0, 1.0), "alpha"),
    "alpha_linear": ("logistic_ev", (0.1, 1.0), "alpha"),
    "rho_linear": ("gaussian", (0.1, RHO_MAX), "rho"),
}


def covariate_param(kind, value):
    """Parameter curves of the simulation scenarios.

    ``alpha_mda(y) = log(1 + e^s / (1 + e^s)) / log 2`` with
    ``s = sin(2 pi y) + y^2`` on ``[0, 1]``; ``alpha_linear(t) = t - 0.05``
    and ``rho_linear(t) = t`` on ``[0.1, 1]`` (the latter stops short of 1,
    where the Gaussian copula degenerates).
    """
    try:
        _, (lo, hi), _ = PARAM_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown parameter kind {kind!r}") from None
    v = np.asarray(value, float)
    if np.any((v < lo - 1e-12) | (v > hi + 1e-12)) or not np.all(np.isfinite(v)):
        raise ValueError(f"{kind} argument must lie in [{lo}, {hi}]")
    if kind == "alpha_mda":
        s = np.sin(2.0 * np.pi * v) + v * v
        return np.log1p(special.expit(s)) / np.log(2.0)
    if kind == "alpha_linear":
        return v - 0.05
    return v.copy()


def true_summary(kind, value):
    """Closed-form dependence summary along a scenario's covariate:
    ``theta = 2^alpha`` for the max-stable scenarios and the Gaussian
    ``eta = (1 + rho) / 2``."""
    p = covariate_param(kind, value)
    return (1.0 + p) / 2.0 if kind == "rho_linear" else 2.0 ** p


SAMPLERS = {"logistic_ev": sample_logistic_ev,
            "archimedean_mda": sample_archimedean_mda,
            "inverted_logistic": sample_inverted_logistic,
            "gaussian": sample_gaussian_copula}

_SCALE_DEFAULT = {"logistic_ev": "frechet", "archimedean_mda": "frechet",
                  "inverted_logistic": "exponential", "gaussian": "frechet"}


def sample(family, param, n, seed=None, scale=None):
    """Dispatch to the sampler of ``family``; ``param`` is alpha or rho."""
    if family not in SAMPLERS:
        raise ValueError(f"unknown family {family!r}")
    scale = scale or _SCALE_DEFAULT[family]
    if family in ("logistic_ev", "archimedean_mda"):
        if scale != "frechet":
            raise ValueError(f"{family} samples on the frechet scale only")
        return SAMPLERS[family](param, n, seed)
    return SAMPLERS[family](param, n, seed, scale=scale)


def covariate_grid(n, grid):
    """Rows spread evenly over the covariate ``grid`` (sizes differ by at most
    one), in grid order."""
    grid = np.asarray(grid, float)
    counts = np.full(grid.size, n // grid.size)
    counts[: n % grid.size] += 1
    return np.repeat(grid, counts)


def validate_scenario(spec):
    """Check a scenario mapping and return it with defaults filled in.

    Keys: ``family``; either a constant ``alpha``/``rho`` or ``param_kind``
    with ``grid`` (list of covariate values) or ``grid_size``; optional
    ``covariate`` name (default ``t``), ``scale``, ``n``, ``seed``.
    """
    if not isinstance(spec, dict):
        raise ScenarioError("scenario must be a JSON object")
    out = dict(spec)
    fam = out.get("family")
    if fam not in FAMILIES:
        raise ScenarioError(f"family must be one of {FAMILIES}, got {fam!r}")
    pname = "rho" if fam == "gaussian" else "alpha"
    kind = out.get("param_kind")
    try:
        if kind is not None:
            if kind not in PARAM_KINDS:
                raise ScenarioError(f"unknown param_kind {kind!r}")
            if PARAM_KINDS[kind][2] != pname:
                raise ScenarioError(f"param_kind {kind!r} does not apply to "
                                    f"family {fam!r}")
            if "grid" in out:
                grid = np.asarray(out["grid"], float)
            else:
                lo, hi = PARAM_KINDS[kind][1]
                grid = np.linspace(lo, hi, int(out.get("grid_size", 50)))
            if grid.size == 0:
                raise ScenarioError("covariate grid is empty")
            covariate_param(kind, grid)
            out["grid"] = grid.tolist()
        else:
            if pname not in out:
                raise ScenarioError(f"scenario needs {pname!r} or param_kind")
            lo_open, hi_open = (False, True) if fam == "gaussian" else (True, fam == "archimedean_mda")
            _param(out[pname], 1, pname, 0.0, 1.0, lo_open, hi_open)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    if "n" in out and (not isinstance(out["n"], int) or out["n"] < 1):
        raise ScenarioError("n must be a positive integer")
    out.setdefault("covariate", "t" if kind != "alpha_mda" else "y")
    out.setdefault("scale", _SCALE_DEFAULT[fam])
    return out


def simulate_scenario(spec, n=None, seed=None):
    """Simulate a scenario into a table with ``row_id``, ``x1``, ``x2`` and,
    for covariate-dependent scenarios, the covariate column."""
    spec = validate_scenario(spec)
    n = int(n if n is not None else spec.get("n", 2000))
    seed = seed if seed is not None else spec.get("seed")
    fam = spec["family"]
    kind = spec.get("param_kind")
    cov = None
    if kind is not None:
        cov = covariate_grid(n, spec["grid"])
        param = covariate_param(kind, cov)
    else:
        param = spec["rho" if fam == "gaussian" else "alpha"]
    try:
        x = sample(fam, param, n, seed, spec["scale"])
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    df = pd.DataFrame({"row_id": np.arange(n)})
    for j in range(x.shape[1]):
        df[f"x{j + 1}"] = x[:, j]
    if cov is not None:
        df[spec["covariate"]] = cov
    return df


def load_scenario(path):
    with open(path) as fh:
        try:
            return validate_scenario(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON: {exc}") from None
