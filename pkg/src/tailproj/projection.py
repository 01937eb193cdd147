"""Simplex directions, max-/min-projections and threshold censoring."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIDES = ("deficits_below_u", "excesses_above_u", "left_censored_at_u")


class DegenerateSampleError(ValueError):
    """Raised when a threshold cannot separate the sample."""


def as_direction(omega, atol=1e-12):
    """Validate a point of the closed unit simplex and return it as an array."""
    w = np.asarray(omega, dtype=float).ravel()
    if w.size < 2:
        raise ValueError("direction needs at least two weights")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("direction weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > atol:
        raise ValueError(f"direction weights must sum to 1, got {w.sum()!r}")
    return w


def diagonal(d=2):
    return np.full(d, 1.0 / d)


def _check(x, w):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != w.size:
        raise ValueError(f"data has {x.shape[1]} columns, direction has "
                         f"{w.size} weights")
    return x


def min_projection(x, omega):
    """Row-wise ``min_i x_i / w_i``; a zero weight drops its coordinate."""
    w = as_direction(omega)
    x = _check(x, w)
    keep = w > 0
    return np.min(x[:, keep] / w[keep], axis=1)


def max_projection(x, omega):
    """Row-wise ``max_i w_i x_i``."""
    w = as_direction(omega)
    x = _check(x, w)
    keep = w > 0
    return np.max(x[:, keep] * w[keep], axis=1)


def min_projection_inverted(xF, omega):
    """``1 / max_i w_i xF_i``, the min-projection of the tail-inverted
    exponential variables ``1 / xF``."""
    x = np.asarray(xF, dtype=float)
    if np.any(x <= 0):
        raise ValueError("Frechet-scale input must be strictly positive")
    return 1.0 / max_projection(x, omega)


@dataclass
class CensoredSample:
    """Projected values with their threshold and censoring bookkeeping.

    For ``excesses_above_u`` the stored values are the positive excesses
    ``m - u`` and ``index`` gives their rows in the uncensored input.
    """

    values: np.ndarray
    threshold: float
    side: str
    censored: np.ndarray
    quantile_level: float | None = None
    index: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"unknown side {self.side!r}")
        self.values = np.asarray(self.values, dtype=float)
        self.censored = np.asarray(self.censored, dtype=bool)
        if self.index is None:
            self.index = np.arange(self.values.size)

    @property
    def n_uncensored(self):
        return int((~self.censored).sum())

    @property
    def n_censored(self):
        return int(self.censored.sum())

    def subset(self, rows):
        rows = np.asarray(rows)
        return CensoredSample(self.values[rows], self.threshold, self.side,
                              self.censored[rows], self.quantile_level,
                              self.index[rows])


def censor(values, quantile_level, side, threshold=None):
    """Split projected values at their empirical quantile (linear
    interpolation between order statistics).

    ``threshold`` overrides the quantile when given.
    """
    m = np.asarray(values, dtype=float).ravel()
    if side not in SIDES:
        raise ValueError(f"unknown side {side!r}")
    if m.size == 0:
        raise DegenerateSampleError("empty sample")
    if threshold is None:
        if not 0.0 < quantile_level < 1.0:
            raise ValueError("quantile level must lie in (0, 1)")
        if np.ptp(m) == 0:
            raise DegenerateSampleError("degenerate threshold: constant sample")
        u = float(np.quantile(m, quantile_level))
    else:
        u = float(threshold)
    if side == "deficits_below_u":
        cens = m >= u
        if cens.all():
            raise DegenerateSampleError("no deficits below the threshold")
        return CensoredSample(m, u, side, cens, quantile_level)
    if side == "left_censored_at_u":
        cens = m <= u
        if cens.all():
            raise DegenerateSampleError("no exceedances above the threshold")
        return CensoredSample(m, u, side, cens, quantile_level)
    keep = np.flatnonzero(m > u)
    if keep.size == 0:
        raise DegenerateSampleError("no positive excesses above the threshold")
    return CensoredSample(m[keep] - u, u, side, np.zeros(keep.size, bool),
                          quantile_level, keep)
