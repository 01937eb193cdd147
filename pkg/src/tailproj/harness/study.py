"""Monte-Carlo RMSE studies of the covariate-dependent dependence fit."""
from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from ..gam.design import GamFormula, factor, smooth
from ..gam.fit import ConvergenceError
from ..likelihoods import fit_dependence, get_regime
from ..simulators import (PARAM_KINDS, covariate_grid, covariate_param, sample,
                          true_summary, validate_scenario)

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.05


@dataclass
class StudyConfig:
    """A simulation study.

    ``scenario`` follows :func:`tailproj.simulators.validate_scenario`. The
    sample size at each threshold level is chosen so that every covariate
    value carries ``exceedances_per_cell`` tail observations on average,
    unless ``n`` fixes it. Threshold levels are quantile levels of the
    structure variable: deficit levels such as 0.05 for the asymptotic
    dependence regime, exceedance levels such as 0.95 otherwise.
    """

    scenario: dict
    threshold_levels: list
    repetitions: int = 50
    seed: int = 0
    exceedances_per_cell: int = 100
    n: int | None = None
    formula: dict | None = None
    link: str = "restricted_logit"
    regime: str | None = None

    def __post_init__(self):
        self.scenario = validate_scenario(self.scenario)
        if self.repetitions < 2:
            raise ValueError("a study needs at least 2 repetitions")
        lv = np.asarray(self.threshold_levels, float)
        if lv.size == 0 or np.any((lv <= 0) | (lv >= 1)):
            raise ValueError("threshold levels must lie in (0, 1)")
        self.threshold_levels = lv.tolist()
        if self.regime is None:
            self.regime = ("asymptotic_independence_general"
                           if self.scenario["family"] == "gaussian"
                           else "inverted_max_stable"
                           if self.scenario["family"] == "inverted_logistic"
                           else "asymptotic_dependence")
        get_regime(self.regime)

    @property
    def grid(self):
        g = self.scenario.get("grid")
        return np.asarray(g if g is not None else [0.0], float)

    @property
    def covariate(self):
        return self.scenario["covariate"] if self.scenario.get("param_kind") else None

    def gam_formula(self):
        if self.formula is not None:
            return GamFormula.from_dict(self.formula)
        if self.covariate is None:
            return GamFormula([])
        # a smooth cannot have more coefficients than distinct covariate values
        return GamFormula([smooth(self.covariate, k=min(10, self.grid.size))])

    def sample_size(self, level):
        if self.n is not None:
            return int(self.n)
        tail = level if get_regime(self.regime).side == "deficits_below_u" else 1.0 - level
        return int(round(self.exceedances_per_cell * self.grid.size / tail))

    def truth(self):
        kind = self.scenario.get("param_kind")
        if kind is not None:
            return true_summary(kind, self.grid)
        fam = self.scenario["family"]
        if fam == "gaussian":
            return np.array([(1.0 + self.scenario["rho"]) / 2.0])
        a = self.scenario["alpha"]
        return np.array([2.0 ** -a if fam == "inverted_logistic" else 2.0 ** a])

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class StudyResult:
    table: pd.DataFrame
    estimates: dict                 # level -> (R, G) array, NaN rows failed
    failures: dict
    config: StudyConfig
    run_log: list = field(default_factory=list)


def simulate_cell(config, n, seed):
    """One dataset of the study scenario: (data, covariate dict or None)."""
    sc = config.scenario
    kind = sc.get("param_kind")
    if kind is not None:
        cov = covariate_grid(n, config.grid)
        param = covariate_param(kind, cov)
    else:
        cov = None
        param = sc["rho" if sc["family"] == "gaussian" else "alpha"]
    scale = get_regime(config.regime).scale
    if sc["family"] in ("logistic_ev", "archimedean_mda"):
        scale = "frechet"
    x = sample(sc["family"], param, n, seed, scale)
    covs = {config.covariate: cov} if cov is not None else None
    return x, covs


def _summary_column(regime):
    return get_regime(regime).summary


def _one_rep(args):
    config, level, seed = args
    n = config.sample_size(level)
    x, covs = simulate_cell(config, n, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            fit = fit_dependence(x, regime=config.regime, quantile_level=level,
                                 formula=config.gam_formula(), covariates=covs,
                                 link=config.link)
        except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
            return None, repr(exc)
    if not fit.state.converged:
        return None, "not converged"
    new = {config.covariate: config.grid} if config.covariate else None
    pred = fit.predict(new, n=None if new else 1)
    return pred[_summary_column(config.regime)].to_numpy(), None


def _map(fn, tasks, jobs):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def rmse_study(config, jobs=1):
    """Repeat simulate-and-fit ``config.repetitions`` times per threshold.

    Returns a tidy table with columns ``scenario, threshold, covariate,
    estimate, truth, bias, rmse`` where ``estimate`` is the mean over
    successful repetitions and
    ``rmse(y) = sqrt(mean_r (theta_r(y) - theta(y))^2)``. Each repetition
    gets its own seed spawned from ``config.seed``; results are reduced in
    repetition order so ``jobs`` does not change them.
    """
    levels = config.threshold_levels
    R = config.repetitions
    root = np.random.SeedSequence(config.seed)
    seeds = root.spawn(len(levels) * R)
    tasks = [(config, lv, seeds[i * R + r])
             for i, lv in enumerate(levels) for r in range(R)]
    results = _map(_one_rep, tasks, jobs)
    truth = config.truth()
    estimates, failures, run_log, rows = {}, {}, [], []
    for i, lv in enumerate(levels):
        est = np.full((R, truth.size), np.nan)
        fails = 0
        for r in range(R):
            val, err = results[i * R + r]
            s = seeds[i * R + r]
            run_log.append({"threshold": lv, "rep": r,
                            "seed_entropy": str(s.entropy),
                            "spawn_key": list(s.spawn_key), "error": err})
            if err is None:
                est[r] = val
            else:
                fails += 1
                log.warning("repetition %d at level %s failed: %s", r, lv, err)
        if fails > MAX_FAILURE_RATE * R:
            raise RuntimeError(f"{fails} of {R} repetitions failed at "
                               f"threshold level {lv}")
        failures[lv] = fails
        estimates[lv] = est
        ok = est[~np.isnan(est).any(axis=1)]
        err = ok - truth
        for g in range(truth.size):
            rows.append({"scenario": config.scenario["family"], "threshold": lv,
                         "covariate": config.grid[g] if config.covariate else np.nan,
                         "estimate": ok[:, g].mean(), "truth": truth[g],
                         "bias": err[:, g].mean(),
                         "rmse": np.sqrt(np.mean(err[:, g] ** 2)),
                         "n_ok": ok.shape[0]})
    return StudyResult(pd.DataFrame(rows), estimates, failures, config, run_log)


def mean_rmse(result):
    """Mean over the covariate grid of the RMSE curve, per threshold."""
    return result.table.groupby("threshold", sort=False)["rmse"].mean()


@dataclass
class DummyFactorReport:
    curves: pd.DataFrame            # covariate, level, estimate, lower, upper, truth
    offset: float
    offset_se: float
    coverage: dict                  # level -> fraction of grid covered
    edf_with_factor: float
    edf_without_factor: float

    @property
    def offset_within_3se(self):
        return abs(self.offset) <= 3.0 * self.offset_se


def dummy_factor_study(config, level=None, seed=None, factor_name="I"):
    """Fit a model with a random two-level factor that has no true effect.

    The model has a level offset plus a separate smooth per level; the report
    gives per-level curves with 95% bands, the pointwise coverage of the truth
    by each band, the level-2 offset with its standard error, and the total
    EDF with and without the factor.
    """
    if config.covariate is None:
        raise ValueError("the dummy factor study needs a covariate scenario")
    level = config.threshold_levels[0] if level is None else level
    ss = np.random.SeedSequence(config.seed if seed is None else seed)
    s_data, s_factor = ss.spawn(2)
    n = config.sample_size(level)
    x, covs = simulate_cell(config, n, s_data)
    rng = np.random.Generator(np.random.Philox(s_factor))
    covs[factor_name] = np.where(rng.uniform(size=n) < 0.5, "1", "2")
    y = config.covariate
    k = config.gam_formula().terms[0].k if config.gam_formula().terms else 10
    f_full = GamFormula([factor(factor_name), smooth(y, k=k, by=factor_name)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        full = fit_dependence(x, regime=config.regime, quantile_level=level,
                              formula=f_full, covariates=covs, link=config.link)
        base = fit_dependence(x, regime=config.regime, quantile_level=level,
                              formula=GamFormula([smooth(y, k=k)]),
                              covariates={y: covs[y]}, link=config.link)
    summ = _summary_column(config.regime)
    truth = config.truth()
    frames, coverage = [], {}
    for lv in ("1", "2"):
        new = {y: config.grid, factor_name: np.full(config.grid.size, lv)}
        p = full.predict(new)
        cov = (p[f"{summ}_lower"] <= truth) & (truth <= p[f"{summ}_upper"])
        coverage[lv] = float(cov.mean())
        frames.append(pd.DataFrame({"covariate": config.grid, "level": lv,
                                    "estimate": p[summ],
                                    "lower": p[f"{summ}_lower"],
                                    "upper": p[f"{summ}_upper"],
                                    "truth": truth}))
    j = full.design.names.index(f"{factor_name}[2]")
    return DummyFactorReport(
        curves=pd.concat(frames, ignore_index=True),
        offset=float(full.state.coef[j]),
        offset_se=float(np.sqrt(full.state.cov[j, j])),
        coverage=coverage, edf_with_factor=full.state.edf_total,
        edf_without_factor=base.state.edf_total)


def scenario_kinds():
    return sorted(PARAM_KINDS)
