"""Pairwise station pipeline: great-circle pairs, stacked projected
observations and smooth dependence curves in distance and time.

Also hosts a synthetic station generator with spatially decaying
dependence, used to validate the pipeline in the absence of real data.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..gam.design import GamFormula, factor, smooth, tensor
from ..likelihoods import (DependenceFit, fit_dependence, get_regime,
                           predict_summaries, structure_variable)
from ..margins import StationSeries, convert_scale, fit_station_margins
from ..simulators import make_rng, positive_stable
from .bootstrap import DEFAULT_B, DegenerateResample, percentile_bootstrap

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088
MODELS = ("distance_only", "full_t_d_type")


def haversine(lat1, lon1, lat2, lon2, radius=EARTH_RADIUS_KM):
    """Great-circle distance in km between points given in degrees."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2.0 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def distance_bin(d, resolution_km=10.0):
    return np.floor(np.asarray(d, float) / resolution_km) * resolution_km


@dataclass
class PairRecord:
    id1: str
    id2: str
    distance: float
    bin: float
    type_pair: str
    year: np.ndarray
    month: np.ndarray
    x1: np.ndarray
    x2: np.ndarray

    @property
    def n(self):
        return self.year.size


def _pair_type(t1, t2):
    return t1 if t1 == t2 else "-".join(sorted((t1, t2)))


def build_pairs(stations, resolution_km=10.0, max_distance_km=None,
                same_type=False, min_overlap=24):
    """All station pairs aligned on their common (year, month) rows.

    Pairs are canonical (``id1 < id2``) and sorted, so the output does not
    depend on the order of ``stations``. Pairs with fewer than
    ``min_overlap`` common months are skipped with a log entry.
    """
    sts = sorted(stations.values() if isinstance(stations, dict) else stations,
                 key=lambda s: s.station_id)
    out = []
    for i, a in enumerate(sts):
        ka = a.year.astype(np.int64) * 12 + a.month.astype(np.int64)
        for b in sts[i + 1:]:
            if same_type and a.station_type != b.station_type:
                continue
            d = float(haversine(a.lat, a.lon, b.lat, b.lon))
            if max_distance_km is not None and d > max_distance_km:
                continue
            kb = b.year.astype(np.int64) * 12 + b.month.astype(np.int64)
            common, ia, ib = np.intersect1d(ka, kb, return_indices=True)
            if common.size < min_overlap:
                log.info("pair %s-%s skipped: %d common months < %d",
                         a.station_id, b.station_id, common.size, min_overlap)
                continue
            out.append(PairRecord(a.station_id, b.station_id, d,
                                  float(distance_bin(d, resolution_km)),
                                  _pair_type(a.station_type, b.station_type),
                                  a.year[ia], a.month[ia], a.value[ia],
                                  b.value[ib]))
    return out


def stack_pairs(pairs):
    """Long table of pair observations with covariates ``t`` (decimal
    time), ``d`` (binned distance) and ``type``, in canonical pair order."""
    pairs = sorted(pairs, key=lambda p: (p.id1, p.id2))
    frames = [pd.DataFrame({"pair": f"{p.id1}|{p.id2}", "year": p.year,
                            "month": p.month, "x1": p.x1, "x2": p.x2,
                            "d": p.bin, "distance": p.distance,
                            "type": p.type_pair}) for p in pairs]
    if not frames:
        raise ValueError("no pairs to stack")
    df = pd.concat(frames, ignore_index=True)
    df["t"] = df["year"] + (df["month"] - 0.5) / 12.0
    return df


def pipeline_formula(model, types, n_bins, k_d=8, k_t=6):
    """Additive model for the pair-level rate.

    ``distance_only``: type offset plus a smooth in distance.
    ``full_t_d_type``: type offset, smooths in time and distance and their
    tensor-product interaction.
    """
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}")
    terms = [factor("type")] if len(types) > 1 else []
    kd = max(4, min(k_d, n_bins))
    terms.append(smooth("d", k=kd))
    if model == "full_t_d_type":
        terms += [smooth("t", k=k_t), tensor("t", "d", k=(5, min(5, kd)))]
    return GamFormula(terms)


@dataclass
class PipelineResult:
    fit: DependenceFit
    data: pd.DataFrame
    curves: pd.DataFrame
    model: str
    scale: str = "frechet"

    @property
    def summary(self):
        return self.fit.regime.summary

    def type_effect(self, level):
        """Coefficient of a type level (link scale) and its standard error."""
        j = self.fit.design.names.index(f"type[{level}]")
        return (float(self.fit.state.coef[j]),
                float(np.sqrt(self.fit.state.cov[j, j])))


def _curve_grid(df, model, types, ref_type=None, n_t=None):
    dgrid = np.unique(df["d"].to_numpy())
    types = [ref_type] if ref_type else types
    rows = []
    tvals = [float(np.median(df["t"]))]
    if model == "full_t_d_type" and n_t:
        tvals = np.linspace(df["t"].min(), df["t"].max(), n_t).tolist()
    for ty in types:
        for t in tvals:
            rows.append(pd.DataFrame({"type": ty, "t": t, "d": dgrid}))
    return pd.concat(rows, ignore_index=True)


def _check_cells(m_tail_mask, df, min_count=10):
    counts = df.loc[m_tail_mask].groupby("d").size().reindex(
        np.unique(df["d"]), fill_value=0)
    thin = counts[counts < min_count]
    if len(thin):
        warnings.warn(f"insufficient exceedances in {len(thin)} distance "
                      "bin(s); the fit proceeds on the pooled data",
                      UserWarning, stacklevel=3)


def pairwise_dependence_pipeline(pairs, regime="asymptotic_dependence",
                                 model="distance_only", scale="frechet",
                                 quantile_level=None, link="log", k_d=8,
                                 k_t=6, n_t=None, **gcv_kw):
    """Fit the stacked pairwise model and tabulate its curves.

    ``pairs`` hold values on ``scale`` (margins already standardized per
    station); they are moved to the regime's scale, projected along the
    diagonal and censored at one global empirical quantile. The ``curves``
    table holds the diagonal summary (``theta`` or ``eta``) on the grid of
    distance bins for every pair type, at the median time (or on ``n_t``
    times for the full model).
    """
    reg = get_regime(regime)
    df = pairs if isinstance(pairs, pd.DataFrame) else stack_pairs(pairs)
    df = df.sort_values(["pair", "year", "month"], kind="stable").reset_index(drop=True)
    x = df[["x1", "x2"]].to_numpy(float)
    types = sorted(df["type"].unique())
    formula = pipeline_formula(model, types, df["d"].nunique(), k_d, k_t)
    covs = {c: df[c].to_numpy() for c in formula.covariate_names}
    fit = fit_dependence(x, regime=reg, quantile_level=quantile_level,
                         formula=formula, covariates=covs, link=link,
                         scale=scale, **gcv_kw)
    m = structure_variable(x, fit.omega, reg, scale)
    tail = m < fit.threshold if reg.side == "deficits_below_u" else m > fit.threshold
    _check_cells(tail, df)
    grid = _curve_grid(df, model, types, n_t=n_t)
    pred = predict_summaries(fit, {c: grid[c].to_numpy() for c in formula.covariate_names},
                             n=len(grid))
    curves = pd.concat([grid, pred.drop(columns=[c for c in pred.columns if c in grid])],
                       axis=1)
    return PipelineResult(fit, df, curves, model, scale)


class PipelineRefit:
    """Bootstrap refit of the pipeline on resampled stacked rows."""

    def __init__(self, df, grid, **kw):
        self.df, self.grid, self.kw = df, grid, kw

    def __call__(self, rows):
        sub = self.df.iloc[rows]
        if sub["type"].nunique() < self.df["type"].nunique():
            raise DegenerateResample("pair type absent from resample")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = pairwise_dependence_pipeline(sub.reset_index(drop=True),
                                               **self.kw)
        f = res.fit
        pred = predict_summaries(f, {c: self.grid[c].to_numpy()
                                     for c in f.formula.covariate_names},
                                 n=len(self.grid))
        col = f.regime.summary
        return pred[col].to_numpy()


def pipeline_bootstrap(result, B=DEFAULT_B, seed=None, level=0.95, jobs=1,
                       **kw):
    """Block bootstrap of a pipeline fit, resampling (year, month) blocks of
    the stacked data; returns the curves table with ``lower``/``upper``."""
    fit = result.fit
    kw = dict(regime=fit.regime, model=result.model, scale=result.scale,
              quantile_level=fit.quantile_level, link=fit.link.name, **kw)
    df = result.data
    grid = result.curves[[c for c in ("type", "t", "d") if c in result.curves]]
    refit = PipelineRefit(df, grid, **kw)
    keys = np.column_stack([df["year"].to_numpy(), df["month"].to_numpy()])
    col = fit.regime.summary
    res = percentile_bootstrap(refit, len(df), B=B, block_keys=keys,
                               strata=df["type"].to_numpy(), seed=seed,
                               level=level, jobs=jobs,
                               estimate=result.curves[col].to_numpy())
    out = result.curves[list(grid.columns) + [col]].copy()
    out["lower"], out["upper"] = res.lower, res.upper
    return out, res


# ---------------------------------------------------------------------------
# synthetic stations

@dataclass
class SpatialLogistic:
    """Max-stable mixture of logistic kernels over the plane.

    ``Z(s) = U(s) (sum_k S_k w_k(s)^(1/alpha))^alpha`` with positive stable
    ``S_k``, normalized Gaussian kernel weights ``w_k`` centred on a grid of
    ``knots`` and an independent nugget ``U(s)``. Margins are unit Frechet
    and the pairwise Pickands function on the diagonal is
    ``A = (1/2) sum_k (w_k(s1)^(1/alpha) + w_k(s2)^(1/alpha))^alpha``,
    equal to ``2^(alpha - 1)`` at zero distance and tending to 1 far apart.
    """

    alpha: float
    bandwidth_km: float
    knots: np.ndarray               # (K, 2) planar coordinates in km

    def weights(self, xy):
        xy = np.atleast_2d(xy)
        d2 = ((xy[:, None, :] - self.knots[None, :, :]) ** 2).sum(-1)
        logw = -0.5 * d2 / self.bandwidth_km ** 2
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        return w / w.sum(axis=1, keepdims=True)

    def pickands(self, xy1, xy2):
        a = self.alpha
        w1, w2 = self.weights(xy1), self.weights(xy2)
        return 0.5 * np.sum((w1 ** (1 / a) + w2 ** (1 / a)) ** a, axis=1)

    def sample(self, xy, n, rng):
        a = self.alpha
        w = self.weights(xy)                           # (S, K)
        K = self.knots.shape[0]
        logS = positive_stable(np.full(n * K, a), rng).reshape(n, K)
        # log sum_k S_k w_k^(1/a), stabilized
        lw = np.log(np.maximum(w, 1e-300)) / a
        z = logS[:, None, :] + lw[None, :, :]
        zmax = z.max(axis=2, keepdims=True)
        lsum = zmax[..., 0] + np.log(np.exp(z - zmax).sum(axis=2))
        logU = -a * np.log(rng.exponential(size=(n, xy.shape[0])))
        return np.exp(logU + a * lsum)


def _local_xy(lat, lon, lat0, lon0):
    """Equirectangular projection in km around (lat0, lon0)."""
    ky = np.pi * EARTH_RADIUS_KM / 180.0
    return np.column_stack([(np.asarray(lon) - lon0) * ky * np.cos(np.radians(lat0)),
                            (np.asarray(lat) - lat0) * ky])


@dataclass
class SyntheticNetwork:
    stations: dict                  # raw-scale StationSeries
    frechet: dict                   # the same on unit Frechet margins
    field: SpatialLogistic
    inverted: bool
    traffic_weight: float
    xy: dict

    def true_pickands(self, id1, id2):
        """Diagonal Pickands function of the pair's (uninverted) max-stable
        vector, including the traffic attenuation."""
        A = float(self.field.pickands(self.xy[id1], self.xy[id2])[0])
        b = self.traffic_weight
        t1 = self.stations[id1].station_type == "traffic"
        t2 = self.stations[id2].station_type == "traffic"
        if t1 and t2:
            return b * A + 1.0 - b
        if t1 or t2:
            # V(z1/b, z2) + (1 - b)/z1 at (2, 2), by direct evaluation
            a = self.field.alpha
            w1 = self.field.weights(self.xy[id1])[0]
            w2 = self.field.weights(self.xy[id2])[0]
            V = np.sum((w1 ** (1 / a) * b ** (1 / a) + w2 ** (1 / a)) ** a)
            return float(0.5 * (V + 1.0 - b))
        return A


def synthetic_stations(n_stations=20, n_years=30, seed=None, alpha=0.85,
                       bandwidth_km=60.0, extent_km=300.0, knot_spacing_km=None,
                       inverted=True, traffic_fraction=0.0, traffic_weight=0.6,
                       center=(50.0, 10.0), start_year=1990):
    """A network of stations with monthly maxima whose dependence decays
    with distance.

    Unit Frechet fields come from :class:`SpatialLogistic`; with
    ``inverted=True`` each field is inverted (``1 / Z`` on exponential
    margins), giving asymptotic independence with pairwise
    ``eta = 1 / (2 A)``. Traffic stations mix the field with an independent
    component, ``max(b Z, (1 - b) Y)``, which weakens their dependence. Raw
    values carry a seasonal GEV location, a linear trend and constant
    scale and shape, so that the margins need estimating.
    """
    rng = make_rng(seed)
    lat0, lon0 = center
    ky = np.pi * EARTH_RADIUS_KM / 180.0
    half = extent_km / 2.0
    xy_all = rng.uniform(-half, half, size=(n_stations, 2))
    lat = lat0 + xy_all[:, 1] / ky
    lon = lon0 + xy_all[:, 0] / (ky * np.cos(np.radians(lat0)))
    xy_all = _local_xy(lat, lon, lat0, lon0)
    spacing = knot_spacing_km or bandwidth_km / 2.0
    g = np.arange(-half - bandwidth_km, half + bandwidth_km + 1e-9, spacing)
    knots = np.array([(a, b) for a in g for b in g])
    fld = SpatialLogistic(alpha, bandwidth_km, knots)
    n = n_years * 12
    Z = fld.sample(xy_all, n, rng)
    types = np.where(rng.uniform(size=n_stations) < traffic_fraction,
                     "traffic", "background")
    Y = 1.0 / rng.exponential(size=Z.shape)
    b = traffic_weight
    Z = np.where(types[None, :] == "traffic",
                 np.maximum(b * Z, (1.0 - b) * Y), Z)
    U = np.exp(-1.0 / Z)            # uniform margins, upper tail = strong
    if inverted:
        # inverted field: large values when Z is small; exponential 1/Z
        U = -np.expm1(-1.0 / Z)
    year = start_year + np.repeat(np.arange(n_years), 12)
    month = np.tile(np.arange(1, 13), n_years)
    mu = 40.0 + 8.0 * np.cos(2 * np.pi * (month - 1) / 12.0) - 0.2 * (year - start_year)
    sigma, xi = 6.0, 0.1
    raw, fre, xyd = {}, {}, {}
    for j in range(n_stations):
        sid = f"S{j + 1:02d}"
        u = U[:, j]
        val = mu + sigma * ((-np.log(u)) ** (-xi) - 1.0) / xi
        raw[sid] = StationSeries(sid, float(lat[j]), float(lon[j]), str(types[j]),
                                 year.copy(), month.copy(), val)
        fre[sid] = StationSeries(sid, float(lat[j]), float(lon[j]), str(types[j]),
                                 year.copy(), month.copy(), -1.0 / np.log(u))
        xyd[sid] = xy_all[j]
    return SyntheticNetwork(raw, fre, fld, inverted, b, xyd)


def station_pipeline(stations, regime="asymptotic_dependence",
                     model="distance_only", standardized=False,
                     resolution_km=10.0, max_distance_km=None, same_type=False,
                     min_overlap=24, margin_formula=None, **kw):
    """Margins, pairs and the stacked dependence fit in one call.

    Raw stations get a GEV GAM per station and are moved to unit Frechet;
    ``standardized=True`` declares them already on that scale.
    """
    if len(stations) < 2:
        raise ValueError("the pairwise pipeline needs at least 2 stations")
    if standardized:
        std = stations
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, std = fit_station_margins(stations, margin_formula, "frechet")
    pairs = build_pairs(std, resolution_km, max_distance_km, same_type,
                        min_overlap)
    if not pairs:
        raise ValueError("no station pairs with enough common months")
    return pairwise_dependence_pipeline(pairs, regime=regime, model=model,
                                        scale="frechet", **kw)


def convert_pairs(pairs, source, target):
    """Copies of ``pairs`` with values moved between standard scales."""
    out = []
    for p in pairs:
        out.append(PairRecord(p.id1, p.id2, p.distance, p.bin, p.type_pair,
                              p.year, p.month, convert_scale(p.x1, source, target),
                              convert_scale(p.x2, source, target)))
    return out
