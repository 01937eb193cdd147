"""Covariate-dependent extremal dependence from max-/min-projections.

Multivariate threshold exceedances are reduced to a univariate structure
variable along a simplex direction, whose tail is exponential with a rate
given by the Pickands dependence function (asymptotic dependence) or the
angular dependence function (asymptotic independence). Rates are modelled
as smooth functions of covariates with penalized censored-exponential GAMs.
"""
__version__ = "0.1.0"
