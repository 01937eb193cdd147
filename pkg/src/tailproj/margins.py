"""Marginal modelling and probability integral transforms.

Data are moved between the raw scale and the standard scales used by the
projections: unit Frechet, standard Pareto, standard exponential and the
tail-inverted exponential ``1 / X^F``. Station margins are modelled by a GEV
distribution whose location and log-scale are additive smooth functions of
year and (cyclic) month.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .gam.design import GamFormula, build_design, cyclic, smooth, DesignBlocks
from .gam.fit import LOG10_GAMMA_BOUNDS, ConvergenceError, golden_section

SCALES = ("raw", "uniform", "frechet", "pareto", "exponential",
          "inverted_exponential")


def empirical_pit(x):
    """Ranks over ``n + 1`` with average ranks for ties; all values in (0, 1)."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("empirical PIT of an empty sample")
    return stats.rankdata(x, method="average") / (x.size + 1.0)


def clamp_probabilities(p, n):
    """Clip to ``[1/(4n), 1 - 1/(4n)]``."""
    lo = 1.0 / (4.0 * n)
    return np.clip(np.asarray(p, float), lo, 1.0 - lo)


def _log_pair(x, scale):
    """(log F, log(1 - F)) of values on a standard scale."""
    x = np.asarray(x, dtype=float)
    if scale == "uniform":
        return np.log(x), np.log1p(-x)
    if scale == "frechet":
        lp = -1.0 / x
        return lp, np.log(-np.expm1(lp))
    if scale == "exponential":
        return np.log(-np.expm1(-x)), -x
    if scale == "pareto":
        return np.log1p(-1.0 / x), -np.log(x)
    if scale == "inverted_exponential":
        return -x, np.log(-np.expm1(-x))
    raise ValueError(f"unknown scale {scale!r}")


def _from_log_pair(logp, log1mp, scale):
    if scale == "uniform":
        return np.exp(logp)
    if scale == "frechet":
        return -1.0 / logp
    if scale == "exponential":
        return -log1mp
    if scale == "pareto":
        return np.exp(-log1mp)
    if scale == "inverted_exponential":
        return -logp
    raise ValueError(f"unknown scale {scale!r}")


def scale_cdf(x, scale):
    """Distribution function of the standard law on ``scale``."""
    return np.exp(_log_pair(x, scale)[0])


def scale_quantile(u, scale):
    u = np.asarray(u, dtype=float)
    return _from_log_pair(np.log(u), np.log1p(-u), scale)


def to_scale(p, target):
    """Map probabilities ``p = F(x)`` to ``target``."""
    return scale_quantile(p, target)


def convert_scale(x, source, target):
    """Move values between standard scales without going through rounded
    probabilities (both tails keep full precision)."""
    if source == target:
        return np.asarray(x, dtype=float).copy()
    return _from_log_pair(*_log_pair(x, source), target)


def transform(x, fitted_cdf, target, n=None):
    """Apply a fitted marginal CDF, clamp, and map to ``target``.

    ``fitted_cdf`` is a callable returning probabilities; ``n`` (default
    ``len(x)``) sets the clamp ``[1/(4n), 1 - 1/(4n)]``.
    """
    x = np.asarray(x, dtype=float)
    if target not in SCALES or target == "raw":
        raise ValueError(f"unknown target scale {target!r}")
    p = np.asarray(fitted_cdf(x), dtype=float)
    p = clamp_probabilities(p, n or max(x.size, 1))
    return to_scale(p, target)


# ---------------------------------------------------------------------------
# GEV log-likelihood in (location, log-scale, shape)

def _xi_guard(xi):
    return np.where(np.abs(xi) < 1e-7, np.where(xi < 0, -1e-7, 1e-7), xi)


def gev_loglik(y, mu, logsigma, xi):
    """Per-observation GEV log-density (-inf outside the support)."""
    y, mu, logsigma = np.broadcast_arrays(*map(np.asarray, (y, mu, logsigma)))
    xi = _xi_guard(np.asarray(xi, float))
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        z = (y - mu) / np.exp(logsigma)
        s = 1.0 + xi * z
    out = np.full(z.shape, -np.inf)
    ok = s > 0
    ls = np.log(s[ok])
    xi_ok = np.broadcast_to(xi, z.shape)[ok]
    out[ok] = -logsigma[ok] - (1.0 + 1.0 / xi_ok) * ls - np.exp(-ls / xi_ok)
    return out


def gev_score(y, mu, logsigma, xi):
    """Per-observation gradient w.r.t. (location, log-scale, shape), (n, 3)."""
    xi = _xi_guard(np.asarray(xi, float))
    sigma = np.exp(logsigma)
    z = (y - mu) / sigma
    s = 1.0 + xi * z
    ls = np.log(s)
    t = np.exp(-ls / xi)
    r = (1.0 + xi - t) / s
    g_mu = r / sigma
    g_phi = -1.0 + z * r
    g_xi = (1.0 - t) * ls / xi ** 2 - (1.0 + 1.0 / xi) * z / s + t * z / (xi * s)
    return np.column_stack(np.broadcast_arrays(g_mu, g_phi, g_xi))


def _gev_hessian(y, mu, phi, xi):
    """Per-observation 3x3 Hessian by central differences of the analytic
    score, (n, 3, 3)."""
    base = [np.broadcast_to(np.asarray(v, float), y.shape).copy()
            for v in (mu, phi, xi)]
    # shrink steps for observations close to the support boundary
    s = 1.0 + _xi_guard(base[2]) * (y - base[0]) / np.exp(base[1])
    shrink = np.clip(s, 1e-4, 1.0)
    g0 = gev_score(y, *base)
    H = np.empty((y.size, 3, 3))
    with np.errstate(invalid="ignore", divide="ignore"):
        for j in range(3):
            h = 1e-5 * (1.0 + np.abs(base[j])) * shrink
            up = [b.copy() for b in base]
            dn = [b.copy() for b in base]
            up[j] += h
            dn[j] -= h
            gu, gd = gev_score(y, *up), gev_score(y, *dn)
            col = (gu - gd) / (2 * h)[:, None]
            # one-sided differences where a perturbation leaves the support
            bad = ~np.all(np.isfinite(col), axis=1)
            if bad.any():
                fwd = (gu - g0) / h[:, None]
                bwd = (g0 - gd) / h[:, None]
                alt = np.where(np.isfinite(fwd), fwd, bwd)
                col[bad] = alt[bad]
            H[:, :, j] = col
    return 0.5 * (H + H.transpose(0, 2, 1))


# ---------------------------------------------------------------------------
# GEV GAM

def _rows(covariates, n):
    if n is None and covariates:
        n = len(np.asarray(next(iter(covariates.values()))))
    return n


@dataclass
class GevFit:
    """Penalized GEV fit with additive location and log-scale predictors.

    The scale is modelled on the log scale, ``sigma = exp(...)``, so that
    fitted scales are positive everywhere.
    """

    mu_design: DesignBlocks
    sigma_design: DesignBlocks
    coef_mu: np.ndarray
    coef_sigma: np.ndarray
    xi: float
    gamma: np.ndarray
    edf: dict
    loglik: float
    penalized_loglik: float
    aic: float
    converged: bool
    n_obs: int
    cov: np.ndarray = field(repr=False, default=None)

    @property
    def mu0(self):
        return float(self.coef_mu[0]) if self.mu_design.formula.intercept else 0.0

    @property
    def sigma0(self):
        return float(np.exp(self.coef_sigma[0])) if self.sigma_design.formula.intercept else 1.0

    def location(self, covariates, n=None):
        n = _rows(covariates, n)
        return self.mu_design.predict_matrix(covariates, n) @ self.coef_mu

    def scale(self, covariates, n=None):
        n = _rows(covariates, n)
        return np.exp(self.sigma_design.predict_matrix(covariates, n)
                      @ self.coef_sigma)

    def cdf(self, y, covariates=None):
        y = np.asarray(y, float)
        mu = self.location(covariates, n=y.size)
        sigma = self.scale(covariates, n=y.size)
        return stats.genextreme.cdf(y, -self.xi, loc=mu, scale=sigma)

    def to_frechet(self, y, covariates=None):
        return transform(y, lambda v: self.cdf(v, covariates), "frechet")

    def to_dict(self):
        return {"mu0": self.mu0, "sigma0": self.sigma0, "xi": self.xi,
                "coef_mu": self.coef_mu.tolist(),
                "coef_sigma": self.coef_sigma.tolist(),
                "gamma": self.gamma.tolist(), "edf": self.edf,
                "loglik": self.loglik, "penalized_loglik": self.penalized_loglik,
                "aic": self.aic, "converged": self.converged,
                "n_obs": self.n_obs,
                "mu_design": self.mu_design.to_dict(),
                "sigma_design": self.sigma_design.to_dict()}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(mu_design=DesignBlocks.from_dict(d["mu_design"]),
                   sigma_design=DesignBlocks.from_dict(d["sigma_design"]),
                   coef_mu=np.asarray(d["coef_mu"], float),
                   coef_sigma=np.asarray(d["coef_sigma"], float),
                   xi=float(d["xi"]), gamma=np.asarray(d["gamma"], float),
                   edf=dict(d["edf"]), loglik=float(d["loglik"]),
                   penalized_loglik=float(d["penalized_loglik"]),
                   aic=float(d["aic"]), converged=bool(d["converged"]),
                   n_obs=int(d["n_obs"]))


def default_gev_formula(year_k=5, month_k=6):
    """Smooth trend in year plus cyclic month effect (period 12)."""
    return GamFormula([smooth("year", k=year_k),
                       cyclic("month", k=month_k, period=12)])


class _GevProblem:
    def __init__(self, y, Xm, Xs, penalties):
        self.y, self.Xm, self.Xs = y, Xm, Xs
        self.pm, self.ps = Xm.shape[1], Xs.shape[1]
        self.p = self.pm + self.ps + 1
        self.penalties = penalties

    def split(self, theta):
        return (theta[:self.pm], theta[self.pm:self.pm + self.ps],
                theta[-1])

    def predictors(self, theta):
        bm, bs, xi = self.split(theta)
        return self.Xm @ bm, self.Xs @ bs, xi

    def loglik(self, theta):
        return float(gev_loglik(self.y, *self.predictors(theta)).sum())

    def derivatives(self, theta):
        mu, phi, xi = self.predictors(theta)
        g = gev_score(self.y, mu, phi, xi)
        h = _gev_hessian(self.y, mu, phi, xi)
        Xm, Xs = self.Xm, self.Xs
        grad = np.concatenate([Xm.T @ g[:, 0], Xs.T @ g[:, 1], [g[:, 2].sum()]])
        H = np.zeros((self.p, self.p))
        im = slice(0, self.pm)
        is_ = slice(self.pm, self.pm + self.ps)
        H[im, im] = Xm.T @ (h[:, 0, 0][:, None] * Xm)
        H[im, is_] = Xm.T @ (h[:, 0, 1][:, None] * Xs)
        H[is_, is_] = Xs.T @ (h[:, 1, 1][:, None] * Xs)
        H[im, -1] = Xm.T @ h[:, 0, 2]
        H[is_, -1] = Xs.T @ h[:, 1, 2]
        H[-1, -1] = h[:, 2, 2].sum()
        H = np.triu(H) + np.triu(H, 1).T
        return grad, H

    def penalty(self, gamma):
        S = np.zeros((self.p, self.p))
        for g, P in zip(gamma, self.penalties):
            S += g * P
        return S


def _newton_gev(prob, gamma, theta0, max_iter=200, gtol=1e-6):
    S = prob.penalty(gamma)

    def objective(th):
        return prob.loglik(th) - 0.5 * th @ S @ th

    theta = theta0.copy()
    obj = objective(theta)
    if not np.isfinite(obj):
        raise ConvergenceError("starting values outside the GEV support")
    converged = False
    for _ in range(max_iter):
        g, H = prob.derivatives(theta)
        grad = g - S @ theta
        A = -H + S
        damp = 0.0
        while True:
            try:
                cf = linalg.cho_factor(A + damp * np.eye(prob.p), lower=True)
                break
            except linalg.LinAlgError:
                damp = max(2 * damp, 1e-6 * np.abs(np.diag(A)).max())
        step = linalg.cho_solve(cf, grad)
        decrement = grad @ step
        if np.max(np.abs(grad)) < gtol or decrement < 1e-12 * max(1.0, abs(obj)):
            converged = True
            break
        t = 1.0
        while t > 1e-10:
            new = theta + t * step
            new_obj = objective(new)
            if np.isfinite(new_obj) and new_obj >= obj - 1e-13 * abs(obj):
                break
            t *= 0.5
        else:
            # no representable ascent left: accept if the Newton decrement
            # is at the rounding floor of a heavily penalized problem
            converged = decrement < 1e-8 * max(1.0, abs(obj))
            break
        theta, obj = new, new_obj
    g, H = prob.derivatives(theta)
    return theta, obj, -H, S, converged


def fit_gev_gam(maxima, covariates=None, formula=None, sigma_formula=None,
                gamma=None, min_obs=50):
    """Penalized maximum likelihood for a GEV with smooth location and
    log-scale and a constant shape.

    Smoothing parameters minimize ``-2 loglik + 2 EDF`` by coordinate-wise
    golden-section search on ``log10(gamma)`` unless ``gamma`` is given.
    """
    y = np.asarray(maxima, dtype=float)
    if y.size < min_obs:
        raise ValueError(f"need at least {min_obs} maxima, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise ValueError("maxima must be finite")
    if np.ptp(y) == 0:
        raise ValueError("degenerate sample: zero variance")
    formula = formula if formula is not None else GamFormula([])
    sigma_formula = sigma_formula if sigma_formula is not None else formula
    cov = covariates if covariates is not None else {}
    dm = build_design(formula, cov, n=y.size)
    ds = build_design(sigma_formula, cov, n=y.size)
    pm, ps = dm.p, ds.p
    p = pm + ps + 1
    penalties = []
    for P in dm.penalties:
        Q = np.zeros((p, p))
        Q[:pm, :pm] = P
        penalties.append(Q)
    for P in ds.penalties:
        Q = np.zeros((p, p))
        Q[pm:pm + ps, pm:pm + ps] = P
        penalties.append(Q)
    prob = _GevProblem(y, dm.X, ds.X, penalties)

    # Gumbel moment start for intercept-only predictors
    s0 = y.std() * math.sqrt(6.0) / math.pi
    m0 = y.mean() - 0.5772 * s0
    bm = np.linalg.lstsq(dm.X, np.full(y.size, m0), rcond=None)[0]
    bs = np.linalg.lstsq(ds.X, np.full(y.size, math.log(s0)), rcond=None)[0]
    theta0 = np.concatenate([bm, bs, [0.05]])
    if not np.isfinite(prob.loglik(theta0)):
        theta0[-1] = 1e-3

    def fit_at(g, start):
        th, obj, info, S, conv = _newton_gev(prob, g, start)
        A = info + S
        try:
            Ainv = linalg.cho_solve(linalg.cho_factor(A, lower=True), np.eye(p))
        except linalg.LinAlgError:
            Ainv = np.linalg.pinv(A)
        F = Ainv @ info
        return th, obj, F, Ainv, conv

    K = len(penalties)
    cache = {}

    def evaluate(logg):
        key = tuple(np.round(logg, 10))
        if key not in cache:
            # warm start from the best converged candidate so far
            ok = [v for v in cache.values() if v[4]]
            start = min(ok, key=lambda v: v[5])[0] if ok else theta0
            th, obj, F, Ainv, conv = fit_at(10.0 ** np.asarray(logg), start)
            ll = prob.loglik(th)
            aic = -2 * ll + 2 * np.trace(F) if conv else np.inf
            cache[key] = (th, obj, F, Ainv, conv, aic)
        return cache[key]

    if gamma is not None:
        logg = np.log10(np.maximum(np.asarray(gamma, float), 1e-300))
        if logg.size != K:
            raise ValueError(f"expected {K} smoothing parameters")
    else:
        logg = np.zeros(K)
        if K:
            grid = np.arange(LOG10_GAMMA_BOUNDS[0], LOG10_GAMMA_BOUNDS[1] + 1e-9, 2.0)
            current = evaluate(logg)[5]
            for cycle in range(6):
                previous = current
                for k in range(K):
                    def f(v, k=k):
                        trial = logg.copy()
                        trial[k] = v
                        return evaluate(trial)[5]
                    if cycle == 0:
                        vals = [f(v) for v in grid]
                        j = int(np.argmin(vals))
                        a, b = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
                    else:
                        a = max(logg[k] - 1.0, LOG10_GAMMA_BOUNDS[0])
                        b = min(logg[k] + 1.0, LOG10_GAMMA_BOUNDS[1])
                    v, fv = golden_section(f, a, b, 0.05)
                    if fv <= f(logg[k]):
                        logg[k] = v
                current = evaluate(logg)[5]
                if cycle and abs(previous - current) <= 1e-4 * abs(current):
                    break
    th, obj, F, Ainv, conv, aic = evaluate(logg)
    if not conv:
        raise ConvergenceError("GEV fit did not converge")
    d = np.diag(F)
    edf = {}
    for prefix, design, off in (("mu", dm, 0), ("sigma", ds, pm)):
        for s in design.smooths:
            edf[f"{prefix}:{s.label}"] = float(d[off + s.cols.start:off + s.cols.stop].sum())
    bm, bs, xi = prob.split(th)
    sigma = np.exp(ds.X @ bs)
    if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
        raise ConvergenceError("non-positive fitted scale")
    return GevFit(mu_design=dm, sigma_design=ds, coef_mu=bm, coef_sigma=bs,
                  xi=float(xi), gamma=10.0 ** logg, edf=edf,
                  loglik=prob.loglik(th), penalized_loglik=float(obj),
                  aic=float(aic), converged=conv, n_obs=y.size, cov=Ainv)


def smooth_vs_parametric(maxima, covariates, formula, sigma_formula=None,
                         huge=1e10):
    """Compare the selected smooth fit with its parametric limit (every
    smoothing parameter sent to ``huge``): deviances and EDFs side by side."""
    smooth_fit = fit_gev_gam(maxima, covariates, formula, sigma_formula)
    para = fit_gev_gam(maxima, covariates, formula, sigma_formula,
                       gamma=np.full(smooth_fit.gamma.size, huge))
    return pd.DataFrame({
        "model": ["smooth", "parametric"],
        "deviance": [-2 * smooth_fit.loglik, -2 * para.loglik],
        "penalized_deviance": [-2 * smooth_fit.penalized_loglik,
                               -2 * para.penalized_loglik],
        "edf_total": [sum(smooth_fit.edf.values()), sum(para.edf.values())],
        "aic": [smooth_fit.aic, para.aic],
    })


# ---------------------------------------------------------------------------
# station data

STATION_COLUMNS = ("station_id", "lat", "lon", "station_type", "year",
                   "month", "value")


@dataclass
class StationSeries:
    station_id: str
    lat: float
    lon: float
    station_type: str
    year: np.ndarray
    month: np.ndarray
    value: np.ndarray

    @property
    def covariates(self):
        return {"year": self.year, "month": self.month}


def read_station_csv(path_or_buffer):
    """Read long-format monthly maxima into a dict of :class:`StationSeries`."""
    df = pd.read_csv(path_or_buffer)
    missing = [c for c in STATION_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"station file lacks columns {missing}")
    return stations_from_frame(df)


def stations_from_frame(df):
    out = {}
    for sid, g in df.groupby("station_id", sort=True):
        g = g.sort_values(["year", "month"])
        out[str(sid)] = StationSeries(
            station_id=str(sid), lat=float(g["lat"].iloc[0]),
            lon=float(g["lon"].iloc[0]),
            station_type=str(g["station_type"].iloc[0]),
            year=g["year"].to_numpy(int), month=g["month"].to_numpy(int),
            value=g["value"].to_numpy(float))
    return out


def stations_to_frame(stations):
    rows = []
    for st in stations.values():
        rows.append(pd.DataFrame({
            "station_id": st.station_id, "lat": st.lat, "lon": st.lon,
            "station_type": st.station_type, "year": st.year,
            "month": st.month, "value": st.value}))
    return pd.concat(rows, ignore_index=True)


def fit_station_margins(stations, formula=None, target="frechet"):
    """Fit a GEV GAM per station and return (fits, stations on ``target``)."""
    fits, out = {}, {}
    for sid, st in stations.items():
        f = formula
        if f is None:
            ny = np.unique(st.year).size
            f = default_gev_formula(year_k=min(5, ny), month_k=min(6, np.unique(st.month).size))
            if ny < 4:
                f = GamFormula([t for t in f.terms if t.covariate != "year"])
        fit = fit_gev_gam(st.value, st.covariates, f)
        fits[sid] = fit
        vals = transform(st.value, lambda v, fit=fit, st=st: fit.cdf(v, st.covariates),
                         target)
        out[sid] = StationSeries(sid, st.lat, st.lon, st.station_type,
                                 st.year, st.month, vals)
    return fits, out
