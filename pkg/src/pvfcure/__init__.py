"""Bayesian PVF-frailty cure rate model with negative binomial competing causes."""

from .model import (
    BaselineParams,
    CountingParams,
    DomainError,
    FrailtyParams,
    ModelKind,
    ParamVector,
    baseline_hazard,
    cumulative_baseline_hazard,
    cure_rate,
    frailty_marginal_density,
    frailty_marginal_survival,
    negbin_pgf,
    negbin_pmf,
    population_density,
    population_survival,
)
from .inference import ObservedData, PriorSpec, log_likelihood, log_posterior, log_prior

__version__ = "0.1.0"
