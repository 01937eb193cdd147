"""Declarative additive formulas compiled to model matrices and penalties.

A :class:`GamFormula` lists linear, factor, smooth and tensor-product terms.
:func:`build_design` fixes knots, factor levels and identifiability
constraints on the training covariates and returns :class:`DesignBlocks`,
which can rebuild the matrix for new covariate values.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import CyclicBasis, bspline_basis, bspline_penalty, quantile_knots

BASES = ("cubic_spline", "cyclic_spline")


# ---------------------------------------------------------------------------
# formula

@dataclass
class Term:
    type: str
    covariate: str | None = None
    covariates: list | None = None
    basis: str = "cubic_spline"
    k: object = 10
    by: str | None = None
    period: float | None = None
    origin: float = 0.0

    def __post_init__(self):
        if self.type not in ("linear", "factor", "smooth", "tensor"):
            raise ValueError(f"unknown term type {self.type!r}")
        if self.type == "tensor":
            if not self.covariates or len(self.covariates) != 2:
                raise ValueError("tensor terms take exactly two covariates")
            ks = self.k if isinstance(self.k, (list, tuple)) else [self.k] * 2
            self.k = [int(v) for v in ks]
        elif self.covariate is None:
            raise ValueError(f"{self.type} term needs a covariate")
        if self.type == "smooth":
            if self.basis not in BASES:
                raise ValueError(f"unknown basis {self.basis!r}")
            if self.basis == "cyclic_spline" and not self.period:
                raise ValueError("cyclic terms must declare a period")
            self.k = int(self.k)

    @property
    def label(self):
        if self.type == "tensor":
            inner = ",".join(self.covariates)
            name = f"ti({inner})"
        elif self.type == "smooth":
            name = f"{'cc' if self.basis == 'cyclic_spline' else 's'}({self.covariate})"
        else:
            name = self.covariate
        return f"{name}:{self.by}" if self.by else name

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class GamFormula:
    terms: list = field(default_factory=list)
    intercept: bool = True

    def __post_init__(self):
        self.terms = [t if isinstance(t, Term) else Term(**t)
                      for t in self.terms]

    @property
    def covariate_names(self):
        names = []
        for t in self.terms:
            names += t.covariates if t.type == "tensor" else [t.covariate]
            if t.by:
                names.append(t.by)
        return list(dict.fromkeys(names))

    def to_dict(self):
        return {"intercept": self.intercept,
                "terms": [t.to_dict() for t in self.terms]}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(terms=list(d.get("terms", [])),
                   intercept=bool(d.get("intercept", True)))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def smooth(covariate, k=10, by=None, basis="cubic_spline", period=None,
           origin=0.0):
    return Term("smooth", covariate=covariate, k=k, by=by, basis=basis,
                period=period, origin=origin)


def cyclic(covariate, k, period, origin=0.0, by=None):
    return smooth(covariate, k=k, by=by, basis="cyclic_spline", period=period,
                  origin=origin)


def tensor(cov1, cov2, k=(5, 5), by=None):
    return Term("tensor", covariates=[cov1, cov2], k=list(k), by=by)


def linear(covariate, by=None):
    return Term("linear", covariate=covariate, by=by)


def factor(covariate):
    return Term("factor", covariate=covariate)


# ---------------------------------------------------------------------------
# built terms

def _column(covariates, name, n=None):
    try:
        col = covariates[name]
    except (KeyError, IndexError, TypeError):
        raise KeyError(f"unknown covariate {name!r}") from None
    col = np.asarray(col)
    if n is not None and col.shape[0] != n:
        raise ValueError(f"covariate {name!r} has {col.shape[0]} rows, "
                         f"expected {n}")
    return col


def _levels(values):
    return sorted({str(v) for v in values})


def _sum_to_zero(B):
    """Null-space basis of the constraint ``1' B beta = 0`` (Householder QR)."""
    c = B.sum(axis=0)[:, None]
    q, _ = np.linalg.qr(c, mode="complete")
    return q[:, 1:]


class _Marginal:
    """One univariate spline: raw basis, raw penalty and evaluation."""

    def __init__(self, term_k, basis, period=None, origin=0.0, x=None,
                 knots=None):
        self.basis, self.period, self.origin = basis, period, origin
        if basis == "cyclic_spline":
            self.cyc = CyclicBasis(term_k, period, origin)
            n_distinct = np.unique(np.mod(np.asarray(x, float) - origin,
                                          period)).size if x is not None else None
            if n_distinct is not None and term_k > n_distinct:
                raise ValueError(f"basis dimension {term_k} exceeds the "
                                 f"{n_distinct} distinct covariate values")
            self.knots = self.cyc.knots
        else:
            self.knots = (np.asarray(knots, float) if knots is not None
                          else quantile_knots(x, term_k))
            self.lo, self.hi = self.knots[0], self.knots[-1]

    @property
    def k(self):
        return self.cyc.k if self.basis == "cyclic_spline" else len(self.knots) - 4

    def __call__(self, x):
        if self.basis == "cyclic_spline":
            return self.cyc(x)
        x = np.asarray(x, float)
        if np.any((x < self.lo) | (x > self.hi)):
            warnings.warn("covariate outside the training range: spline "
                          "extrapolated", RuntimeWarning, stacklevel=3)
        return bspline_basis(x, self.knots)

    def penalty(self):
        if self.basis == "cyclic_spline":
            return self.cyc.penalty()
        return bspline_penalty(self.knots)

    def to_dict(self):
        return {"basis": self.basis, "k": self.k, "period": self.period,
                "origin": self.origin, "knots": self.knots.tolist()}

    @classmethod
    def from_dict(cls, d):
        if d["basis"] == "cyclic_spline":
            return cls(d["k"], d["basis"], d["period"], d["origin"])
        return cls(d["k"], d["basis"], knots=d["knots"])


class BuiltTerm:
    """A term frozen on training data. Subclasses produce columns, penalties
    (on the term's own columns) and a serializable state."""

    n_penalties = 0
    is_smooth = False

    def __init__(self, term):
        self.term = term

    def penalty_blocks(self):
        return []

    def state(self):
        return {}


class _Intercept(BuiltTerm):
    label = "(Intercept)"

    def __init__(self):
        super().__init__(None)
        self.names = ["(Intercept)"]

    def columns(self, cov, n):
        return np.ones((n, 1))


class _Factor(BuiltTerm):
    def __init__(self, term, cov=None, n=None, state=None):
        super().__init__(term)
        self.label = term.label
        self.levels = (state["levels"] if state else
                       _levels(_column(cov, term.covariate, n)))
        if len(self.levels) < 2:
            warnings.warn(f"factor {term.covariate!r} has a single level; "
                          "term dropped", RuntimeWarning, stacklevel=3)
        self.names = [f"{term.covariate}[{lv}]" for lv in self.levels[1:]]

    def columns(self, cov, n):
        v = np.array([str(x) for x in _column(cov, self.term.covariate, n)])
        unknown = set(v) - set(self.levels)
        if unknown:
            raise ValueError(f"unknown level(s) {sorted(unknown)} for factor "
                             f"{self.term.covariate!r}")
        return np.column_stack([(v == lv).astype(float)
                                for lv in self.levels[1:]] or [np.empty((n, 0))])

    def state(self):
        return {"levels": self.levels}


def _by_masks(term, cov, n, levels):
    if term.by is None:
        return [(None, np.ones(n, bool))]
    v = np.array([str(x) for x in _column(cov, term.by, n)])
    unknown = set(v) - set(levels)
    if unknown:
        raise ValueError(f"unknown level(s) {sorted(unknown)} for factor "
                         f"{term.by!r}")
    return [(lv, v == lv) for lv in levels]


class _Linear(BuiltTerm):
    def __init__(self, term, cov=None, n=None, state=None):
        super().__init__(term)
        self.label = term.label
        if state:
            self.levels = state["levels"]
        else:
            self.levels = (_levels(_column(cov, term.by, n)) if term.by
                           else [None])
        self.names = [term.covariate if lv is None
                      else f"{term.covariate}:{term.by}[{lv}]"
                      for lv in self.levels]

    def columns(self, cov, n):
        x = _column(cov, self.term.covariate, n).astype(float)
        return np.column_stack([x * m for _, m in
                                _by_masks(self.term, cov, n, self.levels)])

    def state(self):
        return {"levels": self.levels}


class _Smooth(BuiltTerm):
    """Univariate smooth, optionally replicated per level of a factor.

    Each replicate is centred on the rows of its level by absorbing the
    sum-to-zero constraint, leaving ``k - 1`` columns and one penalty.
    """

    is_smooth = True

    def __init__(self, term, cov=None, n=None, state=None):
        super().__init__(term)
        if state:
            self.marg = _Marginal.from_dict(state["marginal"])
            self.levels = state["levels"]
            self.Z = [np.asarray(z) for z in state["Z"]]
        else:
            x = _column(cov, term.covariate, n).astype(float)
            self.levels = _levels(_column(cov, term.by, n)) if term.by else [None]
            self.marg = _Marginal(term.k, term.basis, term.period, term.origin,
                                  x=x)
            B = self.marg(x)
            self.Z = [_sum_to_zero(B[m]) for _, m in
                      _by_masks(term, cov, n, self.levels)]
        self.S_raw = self.marg.penalty()
        self.kdim = self.marg.k
        self.width = self.kdim - 1
        self.n_penalties = len(self.levels)

    def sublabels(self):
        base = f"{'cc' if self.term.basis == 'cyclic_spline' else 's'}({self.term.covariate})"
        return [base if lv is None else f"{base}:{self.term.by}[{lv}]"
                for lv in self.levels]

    @property
    def names(self):
        return [f"{lab}.{j + 1}" for lab in self.sublabels()
                for j in range(self.width)]

    def columns(self, cov, n):
        x = _column(cov, self.term.covariate, n).astype(float)
        B = self.marg(x)
        cols = [(B @ Z) * m[:, None] for Z, (_, m) in
                zip(self.Z, _by_masks(self.term, cov, n, self.levels))]
        return np.hstack(cols)

    def penalty_blocks(self):
        """List of (column offset within term, width, matrix)."""
        return [(i * self.width, self.width, Z.T @ self.S_raw @ Z)
                for i, Z in enumerate(self.Z)]

    def penalty_groups(self):
        return [[i] for i in range(len(self.levels))]

    def state(self):
        return {"marginal": self.marg.to_dict(), "levels": self.levels,
                "Z": [z.tolist() for z in self.Z]}


class _Tensor(BuiltTerm):
    """Tensor-product interaction of two constrained cubic marginals.

    Marginals are centred before the row-wise Kronecker product (so main
    effects stay separately identifiable) and the product columns are
    centred afterwards. Two penalties per replicate: ``S1 x I`` and ``I x S2``.
    """

    is_smooth = True

    def __init__(self, term, cov=None, n=None, state=None):
        super().__init__(term)
        c1, c2 = term.covariates
        if state:
            self.m1 = _Marginal.from_dict(state["m1"])
            self.m2 = _Marginal.from_dict(state["m2"])
            self.levels = state["levels"]
            self.Z1 = [np.asarray(z) for z in state["Z1"]]
            self.Z2 = [np.asarray(z) for z in state["Z2"]]
            self.means = [np.asarray(v) for v in state["means"]]
        else:
            x1 = _column(cov, c1, n).astype(float)
            x2 = _column(cov, c2, n).astype(float)
            self.levels = _levels(_column(cov, term.by, n)) if term.by else [None]
            self.m1 = _Marginal(term.k[0], "cubic_spline", x=x1)
            self.m2 = _Marginal(term.k[1], "cubic_spline", x=x2)
            B1, B2 = self.m1(x1), self.m2(x2)
            self.Z1, self.Z2, self.means = [], [], []
            for _, m in _by_masks(term, cov, n, self.levels):
                z1, z2 = _sum_to_zero(B1[m]), _sum_to_zero(B2[m])
                T = _row_kron(B1[m] @ z1, B2[m] @ z2)
                self.Z1.append(z1)
                self.Z2.append(z2)
                self.means.append(T.mean(axis=0))
        self.w1, self.w2 = self.m1.k - 1, self.m2.k - 1
        self.width = self.w1 * self.w2
        self.kdim = self.width + 1
        self.n_penalties = 2 * len(self.levels)

    def sublabels(self):
        base = f"ti({','.join(self.term.covariates)})"
        return [base if lv is None else f"{base}:{self.term.by}[{lv}]"
                for lv in self.levels]

    @property
    def names(self):
        return [f"{lab}.{j + 1}" for lab in self.sublabels()
                for j in range(self.width)]

    def columns(self, cov, n):
        c1, c2 = self.term.covariates
        B1 = self.m1(_column(cov, c1, n).astype(float))
        B2 = self.m2(_column(cov, c2, n).astype(float))
        cols = []
        for z1, z2, mu, (_, m) in zip(self.Z1, self.Z2, self.means,
                                      _by_masks(self.term, cov, n, self.levels)):
            cols.append((_row_kron(B1 @ z1, B2 @ z2) - mu) * m[:, None])
        return np.hstack(cols)

    def penalty_blocks(self):
        out = []
        S1, S2 = self.m1.penalty(), self.m2.penalty()
        for i, (z1, z2) in enumerate(zip(self.Z1, self.Z2)):
            P1 = np.kron(z1.T @ S1 @ z1, np.eye(self.w2))
            P2 = np.kron(np.eye(self.w1), z2.T @ S2 @ z2)
            out += [(i * self.width, self.width, P1),
                    (i * self.width, self.width, P2)]
        return out

    def penalty_groups(self):
        return [[2 * i, 2 * i + 1] for i in range(len(self.levels))]

    def state(self):
        return {"m1": self.m1.to_dict(), "m2": self.m2.to_dict(),
                "levels": self.levels,
                "Z1": [z.tolist() for z in self.Z1],
                "Z2": [z.tolist() for z in self.Z2],
                "means": [m.tolist() for m in self.means]}


def _row_kron(A, B):
    return (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], -1)


_BUILDERS = {"factor": _Factor, "linear": _Linear, "smooth": _Smooth,
             "tensor": _Tensor}


# ---------------------------------------------------------------------------
# design blocks

@dataclass
class SmoothInfo:
    """Bookkeeping for one penalized smooth (one level of a by-smooth)."""

    label: str
    cols: slice
    penalties: list
    k: int


@dataclass
class DesignBlocks:
    X: np.ndarray
    penalties: list
    penalty_scale: np.ndarray
    smooths: list
    names: list
    formula: GamFormula
    terms: list = field(repr=False, default_factory=list)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def raw_penalties(self):
        """Penalties on the integrated-squared-second-derivative scale."""
        return [S / c for S, c in zip(self.penalties, self.penalty_scale)]

    def predict_matrix(self, covariates, n=None):
        n = _infer_n(self.formula, covariates, n)
        blocks = [t.columns(covariates, n) for t in self.terms]
        return np.hstack(blocks) if blocks else np.empty((n, 0))

    def to_dict(self):
        return {"formula": self.formula.to_dict(),
                "states": [t.state() for t in self.terms],
                "penalty_scale": self.penalty_scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        """Rebuild a prediction-only design (no training matrix)."""
        formula = GamFormula.from_dict(d["formula"])
        states = list(d["states"])
        terms = []
        if formula.intercept:
            terms.append(_Intercept())
            states.pop(0)
        for term, st in zip(formula.terms, states):
            terms.append(_BUILDERS[term.type](term, state=st))
        obj = _assemble(formula, terms, X=None,
                        scale=np.asarray(d["penalty_scale"], float))
        return obj


def _infer_n(formula, covariates, n):
    if n is not None:
        return int(n)
    names = formula.covariate_names
    if not names:
        raise ValueError("cannot infer the number of rows of an "
                         "intercept-only design; pass n")
    return len(_column(covariates, names[0]))


def _assemble(formula, terms, X, scale=None):
    names, smooths, penalties = [], [], []
    offset = 0
    p = sum(len(t.names) for t in terms)
    raw = []
    for t in terms:
        w = len(t.names)
        if t.is_smooth:
            blocks = t.penalty_blocks()
            labels = t.sublabels()
            for g, lab in zip(t.penalty_groups(), labels):
                ids = []
                start = offset + blocks[g[0]][0]
                for j in g:
                    off, width, P = blocks[j]
                    S = np.zeros((p, p))
                    S[offset + off:offset + off + width,
                      offset + off:offset + off + width] = P
                    ids.append(len(raw))
                    raw.append(S)
                smooths.append(SmoothInfo(lab, slice(start, start + blocks[g[0]][1]),
                                          ids, t.kdim))
        names += t.names
        offset += w
    if scale is None:
        scale = np.ones(len(raw))
        if X is not None:
            for s in smooths:
                Xs = X[:, s.cols]
                maxx = np.abs(Xs).sum(axis=1).max() ** 2
                for i in s.penalties:
                    norm_s = np.abs(raw[i]).sum(axis=0).max()
                    scale[i] = maxx / norm_s if norm_s > 0 else 1.0
    penalties = [S * c for S, c in zip(raw, scale)]
    return DesignBlocks(X=X, penalties=penalties, penalty_scale=np.asarray(scale),
                        smooths=smooths, names=names, formula=formula,
                        terms=terms)


def build_design(formula, covariates, n=None):
    """Compile ``formula`` on training covariates.

    Knots sit at covariate quantiles; every smooth is centred; penalties are
    the exact integrated squared second derivatives, rescaled per smooth so
    that smoothing parameters are comparable across terms and invariant to
    affine changes of covariate units.
    """
    if isinstance(formula, dict):
        formula = GamFormula.from_dict(formula)
    n = _infer_n(formula, covariates, n)
    terms = [_Intercept()] if formula.intercept else []
    for term in formula.terms:
        terms.append(_BUILDERS[term.type](term, covariates, n))
    X = np.hstack([t.columns(covariates, n) for t in terms])
    return _assemble(formula, terms, X)
