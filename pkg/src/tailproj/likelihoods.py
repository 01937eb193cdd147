"""Exponential likelihoods for projected structure variables and the
covariate-dependent dependence fit.

Three regimes:

``asymptotic_dependence``
    Frechet margins, tail-inverted min-projection, exponential model for the
    deficits below a low quantile with the rest right-censored. The rate is
    the Pickands function ``A_w``.
``asymptotic_independence_general``
    Exponential margins, min-projection, exponential model for the excesses
    above a high quantile. The rate is the angular dependence function
    ``lambda_w``.
``inverted_max_stable``
    As above, but the whole sample enters: values above the threshold with
    their exponential density, values below it left-censored.
"""
from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy import optimize, special, stats

from .gam.design import DesignBlocks, GamFormula, build_design
from .gam.fit import FitState, gcv_outer, pirls_fit
from .margins import convert_scale
from .projection import (CensoredSample, as_direction, censor, min_projection,
                         min_projection_inverted)


# ---------------------------------------------------------------------------
# links

class RestrictedLogit:
    """``h(x) = log{(x - 1/2) / (1 - x)}`` mapping (1/2, 1) onto the line."""

    name = "restricted_logit"
    lower, upper = 0.5, 1.0

    def link(self, x):
        x = np.asarray(x, float)
        return np.log(x - 0.5) - np.log1p(-x)

    def inverse(self, eta):
        return 0.5 + 0.5 * special.expit(eta)

    def d1(self, eta):
        s = special.expit(eta)
        return 0.5 * s * (1.0 - s)

    def d2(self, eta):
        s = special.expit(eta)
        return 0.5 * s * (1.0 - s) * (1.0 - 2.0 * s)

    def all(self, eta):
        """(h^-1, first, second derivative) sharing one logistic evaluation."""
        s = special.expit(eta)
        g1 = 0.5 * s * (1.0 - s)
        return 0.5 + 0.5 * s, g1, g1 * (1.0 - 2.0 * s)


class LogLink:
    name = "log"
    lower, upper = 0.0, np.inf

    def link(self, x):
        return np.log(x)

    def inverse(self, eta):
        return np.exp(eta)

    d1 = d2 = inverse

    def all(self, eta):
        r = np.exp(eta)
        return r, r, r


LINKS = {"restricted_logit": RestrictedLogit, "log": LogLink}


def get_link(link):
    if link is None:
        return LogLink()
    if isinstance(link, str):
        try:
            return LINKS[link]()
        except KeyError:
            raise ValueError(f"unknown link {link!r}") from None
    return link


# ---------------------------------------------------------------------------
# families

class Loglik(NamedTuple):
    value: float
    grad: np.ndarray
    hess: np.ndarray


class ExponentialTail:
    """Censored exponential likelihood in sufficient-statistic form.

    Each unit (an observation, or a group of observations sharing one linear
    predictor) carries ``a`` density terms with value sum ``b`` and log-sum
    ``e`` and ``c`` censored terms at the threshold ``u``. With rate ``r``:

    * deficits: ``a log r - r b - r c u``;
    * excesses: ``a log r - r b``;
    * left-censored: ``a log r - r b + c log(1 - exp(-r u))``.

    Grouping observations with identical design rows gives the same
    likelihood, score, information and deviance on far fewer rows.
    """

    def __init__(self, side, a, b, c, u, e, link=None, n_obs=None):
        if side not in FAMILIES:
            raise ValueError(f"unknown censoring side {side!r}")
        self.side = side
        self.a, self.b, self.c, self.e = (np.asarray(v, float) for v in (a, b, c, e))
        self.u = float(u)
        self.link = get_link(link)
        self.n_obs = int(n_obs if n_obs is not None else self.a.size)

    @classmethod
    def from_sample(cls, sample, link=None, groups=None):
        """Per-observation family, or one unit per group label in ``groups``."""
        m, cens = sample.values, sample.censored
        unc = ~cens
        a = unc.astype(float)
        b = np.where(unc, m, 0.0)
        e = np.where(unc & (m > 0), np.log(np.where(m > 0, m, 1.0)), 0.0)
        c = cens.astype(float)
        if groups is not None:
            k = int(groups.max()) + 1
            a, b, c, e = (np.bincount(groups, v, minlength=k) for v in (a, b, c, e))
        return cls(sample.side, a, b, c, sample.threshold, e, link, m.size)

    def _check_rate(self, rate):
        rate = np.broadcast_to(np.asarray(rate, float), self.a.shape)
        if np.any(rate <= 0):
            raise ValueError("rates must be strictly positive")
        return rate

    def rate_terms(self, r):
        """Per-unit (loglik, d/dr, d2/dr2)."""
        a, b = self.a, self.b
        ll = a * np.log(r) - r * b
        lr = a / r - b
        lrr = -a / r ** 2
        if self.side == "deficits_below_u":
            ll = ll - r * self.c * self.u
            lr = lr - self.c * self.u
        elif self.side == "left_censored_at_u" and self.u > 0:
            u, c = self.u, self.c
            ru = r * u
            em1 = np.expm1(ru)
            ll = ll + c * np.log(-np.expm1(-ru))
            lr = lr + c * u / em1
            lrr = lrr - c * u * u * (em1 + 1.0) / em1 ** 2
        return ll, lr, lrr

    def derivatives(self, eta):
        r, g1, g2 = self.link.all(eta)
        ll, lr, lrr = self.rate_terms(r)
        return ll, lr * g1, lrr * g1 * g1 + lr * g2

    def expected_information(self, r):
        u, n = self.u, self.a + self.c
        if self.side == "excesses_above_u":
            return self.a / r ** 2
        q = -np.expm1(-r * u)
        if self.side == "deficits_below_u":
            return n * q / r ** 2
        p = 1.0 - q
        return n * (p / r ** 2 + (u * u * p / q if u > 0 else 0.0))

    def fisher_weights(self, eta):
        r, g1, _ = self.link.all(eta)
        return self.expected_information(r) * g1 * g1

    def loglik(self, rate):
        return float(self.rate_terms(self._check_rate(rate))[0].sum())

    def unit_deviance(self, r):
        a, b, e = self.a, self.b, self.e
        # 2 sum (r m - 1 - log(r m)) over density terms
        dens = 2.0 * (r * b - a - a * np.log(r) - e)
        if self.side == "deficits_below_u":
            return dens + 2.0 * r * self.c * self.u
        if self.side == "left_censored_at_u" and self.u > 0:
            return dens - 2.0 * self.c * np.log(-np.expm1(-r * self.u))
        return dens

    def deviance(self, eta):
        return float(np.sum(self.unit_deviance(self.link.inverse(eta))))

    def constant_mle(self):
        return _constant_mle(self.side, self.a.sum(), self.b.sum(),
                             self.c.sum(), self.u)

    def initial_eta(self):
        r = self.constant_mle()
        lo, hi = self.link.lower, self.link.upper
        span = min(hi, 2.0) - lo
        r = max(r, lo + 1e-3 * span)
        if np.isfinite(hi):
            r = min(r, hi - 1e-3 * span)
        return float(self.link.link(r))


FAMILIES = ("deficits_below_u", "excesses_above_u", "left_censored_at_u")


def family_for(sample, link=None, groups=None):
    return ExponentialTail.from_sample(sample, link, groups)


def _loglik(side, rate, sample, link):
    if sample.side != side:
        raise ValueError(f"expected a {side} sample, got {sample.side}")
    fam = family_for(sample, link)
    rate = fam._check_rate(rate)
    eta = fam.link.link(rate)
    ll, d1, d2 = fam.derivatives(eta)
    return Loglik(float(ll.sum()), d1, d2)


def loglik_ad_censored(rate, sample, link=None):
    """Censored-deficit log-likelihood; gradient and Hessian diagonal are
    per observation, in the linear predictor of ``link`` (default log)."""
    return _loglik("deficits_below_u", rate, sample, link)


def loglik_ai_excess(rate, sample, link=None):
    """Exponential log-likelihood of positive excesses."""
    if not isinstance(sample, CensoredSample):
        e = np.asarray(sample, float)
        if np.any(e <= 0):
            raise ValueError("excesses must be strictly positive")
        sample = CensoredSample(e, 0.0, "excesses_above_u", np.zeros(e.size, bool))
    return _loglik("excesses_above_u", rate, sample, link)


def loglik_ims_leftcensored(rate, sample, link=None):
    """Left-censored exponential log-likelihood of the inverted max-stable
    regime."""
    return _loglik("left_censored_at_u", rate, sample, link)


def _constant_mle(side, n_obs, s_obs, n_cens, u):
    if side == "deficits_below_u":
        denom = s_obs + n_cens * u
        return float(n_obs / denom) if denom > 0 else np.inf
    if side == "excesses_above_u" or n_cens == 0 or u <= 0:
        return float(n_obs / s_obs) if s_obs > 0 else np.inf
    if n_obs == 0:
        return np.inf

    def score(r):
        return n_obs / r - s_obs + n_cens * u / np.expm1(r * u)

    hi = 1.0
    while score(hi) > 0:
        hi *= 2.0
    return float(optimize.brentq(score, 1e-12, hi, xtol=1e-15, rtol=1e-15))


def constant_rate_mle(sample):
    """Maximum likelihood estimate of a constant rate.

    Closed form for deficits ``n_obs / (sum m + n_cens u)`` and excesses
    ``1 / mean``; one-dimensional root of the score for the left-censored
    likelihood.
    """
    m, c = sample.values, sample.censored
    return _constant_mle(sample.side, (~c).sum(), m[~c].sum(), c.sum(),
                         sample.threshold)


# ---------------------------------------------------------------------------
# regimes and the dependence fit

@dataclass(frozen=True)
class Regime:
    name: str
    scale: str
    side: str
    default_quantile: float
    summary: str
    rate_name: str


REGIMES = {
    "asymptotic_dependence": Regime("asymptotic_dependence", "frechet",
                                    "deficits_below_u", 0.05, "theta", "A"),
    "asymptotic_independence_general": Regime(
        "asymptotic_independence_general", "exponential", "excesses_above_u",
        0.95, "eta", "lambda"),
    "inverted_max_stable": Regime("inverted_max_stable", "exponential",
                                  "left_censored_at_u", 0.95, "eta", "A"),
}
_ALIASES = {"ad": "asymptotic_dependence",
            "ai": "asymptotic_independence_general",
            "ims": "inverted_max_stable"}


def get_regime(regime):
    if isinstance(regime, Regime):
        return regime
    key = _ALIASES.get(regime, regime)
    try:
        return REGIMES[key]
    except KeyError:
        raise ValueError(f"unknown regime {regime!r}") from None


def structure_variable(data, omega, regime, scale=None):
    """Projected structure variable of a data matrix for ``regime``.

    ``scale`` names the scale of ``data``; it is converted to the regime's
    scale (unit Frechet for asymptotic dependence, standard exponential
    otherwise) when different.
    """
    reg = get_regime(regime)
    x = np.asarray(data, float)
    if scale is not None and scale != reg.scale:
        x = convert_scale(x, scale, reg.scale)
    if reg.scale == "frechet":
        return min_projection_inverted(x, omega)
    if np.any(x < 0):
        raise ValueError("exponential-scale data must be nonnegative")
    return min_projection(x, omega)


@dataclass
class DependenceFit:
    regime: Regime
    omega: np.ndarray
    threshold: float
    quantile_level: float | None
    link: object
    design: DesignBlocks
    state: FitState
    n_obs: int
    n_tail: int
    boundary: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def formula(self):
        return self.design.formula

    @property
    def is_diagonal(self):
        return np.allclose(self.omega, self.omega[0])

    def linear_predictor(self, newdata=None, n=None):
        X = self.design.predict_matrix(newdata if newdata is not None else {},
                                       n=n)
        return X @ self.state.coef, X

    def rate(self, newdata=None, n=None):
        return self.link.inverse(self.linear_predictor(newdata, n)[0])

    def predict(self, newdata=None, n=None, level=0.95):
        return predict_summaries(self, newdata, n=n, level=level)

    def to_dict(self):
        return {"regime": self.regime.name, "omega": self.omega.tolist(),
                "threshold": self.threshold,
                "quantile_level": self.quantile_level,
                "link": self.link.name, "n_obs": self.n_obs,
                "n_tail": self.n_tail, "boundary": self.boundary,
                "design": self.design.to_dict(),
                "state": self.state.to_dict(), "meta": self.meta}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(regime=get_regime(d["regime"]),
                   omega=np.asarray(d["omega"], float),
                   threshold=float(d["threshold"]),
                   quantile_level=d.get("quantile_level"),
                   link=get_link(d["link"]),
                   design=DesignBlocks.from_dict(d["design"]),
                   state=FitState.from_dict(d["state"]), n_obs=int(d["n_obs"]),
                   n_tail=int(d["n_tail"]), boundary=bool(d.get("boundary")),
                   meta=dict(d.get("meta", {})))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _subset_covariates(covariates, rows):
    if covariates is None:
        return None
    if isinstance(covariates, pd.DataFrame):
        return covariates.iloc[rows].reset_index(drop=True)
    return {k: np.asarray(v)[rows] for k, v in covariates.items()}


def fit_rate(sample, covariates=None, formula=None, link=None, gamma=None,
             **gcv_kw):
    """Fit a (possibly covariate-dependent) rate to a censored sample.

    Returns ``(design, state, boundary)``. Smoothing parameters are chosen by
    GCV unless ``gamma`` is given.
    """
    formula = formula if formula is not None else GamFormula([])
    if isinstance(formula, dict):
        formula = GamFormula.from_dict(formula)
    cov = covariates if covariates is not None else {}
    design = build_design(formula, cov, n=sample.values.size)
    # observations sharing a design row share the linear predictor: fit on
    # the distinct rows with aggregated sufficient statistics
    Xu, groups = np.unique(design.X, axis=0, return_inverse=True)
    groups = groups.ravel()
    if Xu.shape[0] <= design.n // 2:
        fam = family_for(sample, link, groups)
        work = dataclasses.replace(design, X=Xu)
    else:
        fam, work, groups = family_for(sample, link), design, None
    if gamma is None:
        state = gcv_outer(work, fam, **gcv_kw)
    else:
        state = pirls_fit(work, fam, np.asarray(gamma, float))
    if groups is not None:
        state.eta = state.eta[groups]
    rate = fam.link.inverse(state.eta)
    lo, hi = fam.link.lower, fam.link.upper
    span = (min(hi, 2.0) - lo)
    boundary = bool(np.any(rate - lo < 1e-6 * span) or
                    (np.isfinite(hi) and np.any(hi - rate < 1e-6 * span)) or
                    np.any(rate < 1e-8))
    if boundary:
        warnings.warn("boundary fit: fitted rate at the edge of the link "
                      "range", RuntimeWarning, stacklevel=2)
    return design, state, boundary


def fit_dependence(data, omega=None, regime="asymptotic_dependence",
                   quantile_level=None, formula=None, covariates=None,
                   link="restricted_logit", scale=None, gamma=None, **gcv_kw):
    """Two-step covariate-dependent dependence fit along direction ``omega``.

    ``data`` is an (n, d) matrix whose margins are already standardized
    (``scale`` names them if they differ from the regime's scale). The
    structure variable is censored at its empirical ``quantile_level``
    (defaults 5% for deficits, 95% for exceedances) and its exponential
    rate is fitted with the GAM ``formula`` on ``covariates``.
    """
    reg = get_regime(regime)
    x = np.asarray(data, float)
    if x.ndim != 2:
        raise ValueError("data must be an (n, d) matrix")
    omega = as_direction(omega if omega is not None else np.full(x.shape[1], 1.0 / x.shape[1]))
    q = reg.default_quantile if quantile_level is None else float(quantile_level)
    if (reg.side == "deficits_below_u" and q > 0.2) or (reg.side != "deficits_below_u" and q < 0.8):
        warnings.warn(f"threshold far from tail: quantile level {q} for "
                      f"{reg.name}", UserWarning, stacklevel=2)
    m = structure_variable(x, omega, reg, scale)
    sample = censor(m, q, reg.side)
    cov = _subset_covariates(covariates, sample.index) if reg.side == "excesses_above_u" else covariates
    link_obj = get_link(link)
    design, state, boundary = fit_rate(sample, cov, formula, link_obj, gamma,
                                       **gcv_kw)
    return DependenceFit(regime=reg, omega=omega, threshold=sample.threshold,
                         quantile_level=q, link=link_obj, design=design,
                         state=state, n_obs=x.shape[0],
                         n_tail=sample.n_uncensored, boundary=boundary)


def predict_summaries(fit, newdata=None, n=None, level=0.95):
    """Rate, diagonal summary and pointwise intervals at ``newdata``.

    Standard errors come from the penalized Hessian (delta method on the
    linear predictor); interval ends are mapped through the monotone link.
    For diagonal directions the asymptotic-dependence summary is
    ``theta = d A`` and the asymptotic-independence summary
    ``eta = 1 / (d lambda)``.
    """
    if n is None and not fit.formula.covariate_names:
        n = len(newdata) if newdata is not None and len(newdata) else 1
        if isinstance(newdata, dict) and newdata:
            n = len(np.asarray(next(iter(newdata.values()))))
    eta, X = fit.linear_predictor(newdata, n)
    se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X, fit.state.cov, X), 0))
    z = stats.norm.ppf(0.5 + level / 2.0)
    inv = fit.link.inverse
    rate, lo, hi = inv(eta), inv(eta - z * se), inv(eta + z * se)
    rate_se = fit.link.d1(eta) * se
    out = pd.DataFrame(index=range(eta.size))
    if newdata is not None:
        for name in fit.formula.covariate_names:
            out[name] = np.asarray(newdata[name])
    rname = fit.regime.rate_name
    out[rname] = rate
    out[f"{rname}_se"] = rate_se
    out[f"{rname}_lower"] = lo
    out[f"{rname}_upper"] = hi
    d = fit.omega.size
    if fit.is_diagonal:
        if fit.regime.summary == "theta":
            out["theta"] = d * rate
            out["theta_se"] = d * rate_se
            out["theta_lower"] = d * lo
            out["theta_upper"] = d * hi
        else:
            out["eta"] = 1.0 / (d * rate)
            out["eta_se"] = rate_se / (d * rate ** 2)
            out["eta_lower"] = 1.0 / (d * hi)
            out["eta_upper"] = 1.0 / (d * lo)
    return out
