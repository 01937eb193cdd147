"""Percentile (block) bootstrap for fitted curves."""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..gam.fit import ConvergenceError
from ..likelihoods import fit_dependence, get_regime
from ..projection import DegenerateSampleError
from ..simulators import make_rng

log = logging.getLogger(__name__)

DEFAULT_B = 300


class DegenerateResample(RuntimeError):
    """Raised by a refit to request a fresh resample."""


_RETRY = (DegenerateResample, DegenerateSampleError, ConvergenceError,
          np.linalg.LinAlgError)


@dataclass
class BootstrapResult:
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    replicates: np.ndarray          # (B, G)
    redraws: int
    level: float
    log: list = field(default_factory=list)

    def table(self, index=None, name="estimate"):
        df = pd.DataFrame({name: self.estimate, "lower": self.lower,
                           "upper": self.upper})
        if index is not None:
            for k, v in index.items():
                df.insert(0, k, np.asarray(v))
        return df


def block_indices(keys):
    """Row indices grouped by block label, blocks in sorted label order."""
    keys = np.asarray(keys)
    if keys.ndim > 1:
        keys = np.array(["|".join(map(str, r)) for r in keys])
    _, inv = np.unique(keys, return_inverse=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    bounds = np.flatnonzero(np.diff(inv[order])) + 1
    return np.split(order, bounds)


def resample_rows(rng, n_rows, blocks=None):
    """One bootstrap draw: i.i.d. rows, or whole blocks with replacement."""
    if blocks is None:
        return rng.integers(0, n_rows, n_rows)
    pick = rng.integers(0, len(blocks), len(blocks))
    return np.concatenate([blocks[j] for j in pick])


def _strata_ok(rows, strata, levels):
    return strata is None or np.unique(strata[rows]).size == levels


def _map(fn, items, jobs):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _safe(refit):
    def run(rows):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                return np.asarray(refit(rows), float)
        except _RETRY as exc:
            return exc
    return run


class _SafeRefit:
    # picklable counterpart of ``_safe`` for process pools
    def __init__(self, refit):
        self.refit = refit

    def __call__(self, rows):
        return _safe(self.refit)(rows)


def percentile_bootstrap(refit, n_rows, B=DEFAULT_B, block_keys=None,
                         strata=None, seed=None, level=0.95, estimate=None,
                         jobs=1, max_redraws=None):
    """Pointwise percentile intervals of ``refit(rows)``.

    ``refit`` takes an index array into the original rows and returns the
    curve of interest. Rows are resampled in blocks defined by
    ``block_keys`` (one label per row, e.g. year and month) or i.i.d. when
    it is ``None``. A resample that misses a level of ``strata``, or whose
    refit raises a degenerate-sample or convergence error, is redrawn; the
    redraws are counted. Resamples are drawn sequentially from one seeded
    stream, so the result does not depend on ``jobs``.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    rng = make_rng(seed)
    blocks = block_indices(block_keys) if block_keys is not None else None
    strata = np.asarray(strata) if strata is not None else None
    n_levels = np.unique(strata).size if strata is not None else 0
    max_redraws = max_redraws if max_redraws is not None else 10 * B
    redraws = 0
    run_log = []

    def draw():
        nonlocal redraws
        while True:
            rows = resample_rows(rng, n_rows, blocks)
            if _strata_ok(rows, strata, n_levels):
                return rows
            redraws += 1
            run_log.append("resample missing a stratum; redrawn")
            if redraws > max_redraws:
                raise RuntimeError("too many degenerate resamples")

    draws = [draw() for _ in range(B)]
    fn = _SafeRefit(refit) if jobs and jobs > 1 else _safe(refit)
    results = _map(fn, draws, jobs)
    for b in range(B):
        while isinstance(results[b], Exception):
            redraws += 1
            run_log.append(f"replicate {b}: {results[b]!r}; redrawn")
            if redraws > max_redraws:
                raise RuntimeError("too many degenerate resamples")
            results[b] = fn(draw())
    reps = np.vstack([np.atleast_1d(r) for r in results])
    alpha = (1.0 - level) / 2.0
    lower, upper = np.quantile(reps, [alpha, 1.0 - alpha], axis=0)
    if estimate is None:
        estimate = _safe(refit)(np.arange(n_rows))
        if isinstance(estimate, Exception):
            raise estimate
    if redraws:
        log.info("%d bootstrap resamples redrawn", redraws)
    return BootstrapResult(np.atleast_1d(np.asarray(estimate, float)), lower,
                           upper, reps, redraws, level, run_log)


class DependenceRefit:
    """Refit of :func:`fit_dependence` on resampled rows, evaluated on a
    prediction grid; returns the diagonal summary (or the rate)."""

    def __init__(self, data, covariates=None, newdata=None, column=None,
                 **fit_kw):
        self.data = np.asarray(data, float)
        self.covariates = covariates
        self.newdata = newdata
        self.fit_kw = fit_kw
        reg = get_regime(fit_kw.get("regime", "asymptotic_dependence"))
        self.column = column or reg.summary

    def __call__(self, rows):
        cov = None
        if self.covariates is not None:
            cov = {k: np.asarray(v)[rows] for k, v in self.covariates.items()}
        fit = fit_dependence(self.data[rows], covariates=cov, **self.fit_kw)
        n = None if self.newdata else 1
        pred = fit.predict(self.newdata, n=n)
        col = self.column if self.column in pred else fit.regime.rate_name
        return pred[col].to_numpy()


def bootstrap_dependence(data, covariates=None, newdata=None, B=DEFAULT_B,
                         block_keys=None, seed=None, level=0.95, jobs=1,
                         **fit_kw):
    """Percentile bootstrap of the full two-step dependence fit.

    Every replicate recomputes the threshold on the resampled rows.
    Returns a table with the ``newdata`` covariates, the full-sample
    ``estimate`` and the ``lower``/``upper`` interval ends.
    """
    refit = DependenceRefit(data, covariates, newdata, **fit_kw)
    res = percentile_bootstrap(refit, len(refit.data), B=B,
                               block_keys=block_keys, seed=seed, level=level,
                               jobs=jobs)
    return res.table(newdata), res
