"""Penalized additive models: spline bases, design compilation, PIRLS/GCV."""
from .design import (DesignBlocks, GamFormula, Term, build_design, cyclic,
                     factor, linear, smooth, tensor)
from .fit import (ConvergenceError, FitState, Gaussian, edf, gcv_outer,
                  penalty_matrix, pirls_fit)

__all__ = ["DesignBlocks", "GamFormula", "Term", "build_design", "cyclic",
           "factor", "linear", "smooth", "tensor", "ConvergenceError",
           "FitState", "Gaussian", "edf", "gcv_outer", "penalty_matrix",
           "pirls_fit"]
