"""Cubic B-spline bases and their exact second-derivative penalties."""
from __future__ import annotations

import warnings

import numpy as np
from scipy.interpolate import BSpline

DEGREE = 3
# 3-point Gauss-Legendre integrates the piecewise-quadratic product of two
# piecewise-linear second derivatives exactly on each knot interval.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(3)


def quantile_knots(x, k):
    """Clamped cubic knot vector with ``k - 4`` interior knots placed at
    quantiles of the distinct covariate values.

    Coincident quantiles are de-duplicated and ``k`` reduced with a warning.
    """
    x = np.asarray(x, dtype=float)
    ux = np.unique(x)
    if k < 4:
        raise ValueError("cubic spline needs k >= 4")
    if k > ux.size:
        raise ValueError(f"basis dimension {k} exceeds the {ux.size} distinct "
                         "covariate values")
    lo, hi = ux[0], ux[-1]
    n_int = k - 4
    interior = np.quantile(ux, np.linspace(0, 1, n_int + 2)[1:-1])
    interior = np.unique(interior)
    interior = interior[(interior > lo) & (interior < hi)]
    if interior.size < n_int:
        warnings.warn(f"tied knot quantiles: basis dimension reduced from {k} "
                      f"to {interior.size + 4}", RuntimeWarning, stacklevel=2)
    return np.concatenate([[lo] * 4, interior, [hi] * 4])


def bspline_basis(x, knots, deriv=0):
    """Evaluate every cubic B-spline on ``knots`` at ``x`` -> (n, k)."""
    x = np.asarray(x, dtype=float)
    k = len(knots) - DEGREE - 1
    spl = BSpline(knots, np.eye(k), DEGREE, extrapolate=True)
    return spl(x, nu=deriv)


def _gauss_points(breaks):
    a, b = breaks[:-1], breaks[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    half = 0.5 * (b - a)
    pts = (0.5 * (a + b))[:, None] + half[:, None] * _GL_X[None, :]
    wts = half[:, None] * _GL_W[None, :]
    return pts.ravel(), wts.ravel()


def bspline_penalty(knots):
    """Gram matrix of second derivatives, ``int B_i''(t) B_j''(t) dt``."""
    pts, wts = _gauss_points(np.unique(knots))
    d2 = bspline_basis(pts, knots, deriv=2)
    return d2.T @ (wts[:, None] * d2)


def greville(knots):
    """Greville abscissae: the coefficients reproducing ``h(t) = t``."""
    k = len(knots) - DEGREE - 1
    return np.array([knots[i + 1:i + 1 + DEGREE].mean() for i in range(k)])


class CyclicBasis:
    """Periodic cubic B-splines on ``k`` equally spaced knots over one period
    starting at ``origin``."""

    def __init__(self, k, period, origin=0.0):
        if k < 4:
            raise ValueError("cyclic cubic spline needs k >= 4")
        if period <= 0:
            raise ValueError("period must be positive")
        self.k, self.period, self.origin = int(k), float(period), float(origin)
        h = self.period / self.k
        self.knots = self.origin + h * np.arange(-DEGREE, self.k + DEGREE + 1)

    def _wrap(self, x):
        return self.origin + np.mod(np.asarray(x, float) - self.origin,
                                    self.period)

    def __call__(self, x, deriv=0):
        raw = BSpline(self.knots, np.eye(self.k + DEGREE), DEGREE,
                      extrapolate=False)(self._wrap(x), nu=deriv)
        raw = np.nan_to_num(raw)
        out = raw[:, :self.k].copy()
        out[:, :DEGREE] += raw[:, self.k:]
        return out

    def penalty(self):
        breaks = self.origin + self.period / self.k * np.arange(self.k + 1)
        pts, wts = _gauss_points(breaks)
        d2 = self(pts, deriv=2)
        return d2.T @ (wts[:, None] * d2)
