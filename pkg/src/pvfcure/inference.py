"""Likelihood, priors and unnormalized posterior under right censoring.

Covariates enter through the mean number of causes, ``theta_i = exp(x_i @ beta)``.
Support violations evaluate to ``-inf`` instead of raising so a Metropolis
step can reject them cheaply.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import (
    ETA_LIMIT,
    GAMMA_LIMIT,
    SIGMA2_LIMIT,
    ModelKind,
    ParamVector,
    log_population_parts,
)

__all__ = [
    "ModelKind",
    "ObservedData",
    "PriorSpec",
    "log_likelihood",
    "log_likelihood_terms",
    "log_prior",
    "log_posterior",
    "log_posterior_expanded",
    "make_log_posterior",
]


@dataclass(frozen=True, eq=False)
class ObservedData:
    """Right-censored sample ``(w_i, delta_i, x_i)``.

    ``covariates`` is the full design matrix, leading column of ones
    included. ``covariate_names`` names the non-intercept columns.
    """

    times: np.ndarray
    events: np.ndarray
    covariates: np.ndarray
    covariate_names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        events = np.asarray(self.events).ravel()
        if events.dtype != bool:
            if not np.all(np.isin(events, (0, 1))):
                raise ValueError("events must be 0/1 or boolean")
            events = events.astype(bool)
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if times.size == 0:
            raise ValueError("dataset is empty")
        if not (times.size == events.size == X.shape[0]):
            raise ValueError("times, events and covariates must have the same number of rows")
        if not np.all(np.isfinite(times)) or np.any(times <= 0):
            raise ValueError("times must be finite and strictly positive")
        if not np.all(np.isfinite(X)):
            raise ValueError("covariates must be finite")
        if not np.allclose(X[:, 0], 1.0):
            raise ValueError("first covariate column must be the intercept (all ones)")
        names = self.covariate_names
        if names is None:
            names = tuple(f"x{j}" for j in range(1, X.shape[1]))
        names = tuple(names)
        if len(names) != X.shape[1] - 1:
            raise ValueError("covariate_names must name every non-intercept column")
        for name, value in (("times", times), ("events", events), ("covariates", X)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "covariate_names", names)

    @classmethod
    def from_covariates(cls, times, events, x=None, names: Sequence[str] | None = None) -> "ObservedData":
        """Build from raw covariates, prepending the intercept column."""
        times = np.asarray(times, dtype=float)
        if x is None:
            X = np.ones((times.size, 1))
        else:
            x = np.asarray(x, dtype=float)
            if x.ndim == 1:
                x = x[:, None]
            X = np.column_stack([np.ones(times.size), x])
        return cls(times, events, X, None if names is None else tuple(names))

    @property
    def m(self) -> int:
        return self.times.size

    @property
    def n_events(self) -> int:
        return int(self.events.sum())

    @property
    def n_beta(self) -> int:
        return self.covariates.shape[1]

    @property
    def censored_fraction(self) -> float:
        return 1.0 - self.n_events / self.m

    def param_names(self, kind: ModelKind | str) -> list[str]:
        return ParamVector.names(kind, self.n_beta, self.covariate_names)

    def __eq__(self, other):
        if not isinstance(other, ObservedData):
            return NotImplemented
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.events, other.events)
            and np.array_equal(self.covariates, other.covariates)
            and self.covariate_names == other.covariate_names
        )


@dataclass(frozen=True)
class PriorSpec:
    """Independent priors.

    Normal priors are given by their variance. Gamma priors are
    ``(shape, rate)``; the defaults have mean 1 and variances 1, 100 and 1
    for eta, lambda and sigma2. gamma is Uniform(0, 1).
    """

    beta_variance: float = 100.0
    alpha_variance: float = 100.0
    eta_gamma: tuple[float, float] = (1.0, 1.0)
    lambda_gamma: tuple[float, float] = (0.01, 0.01)
    sigma2_gamma: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        values = [self.beta_variance, self.alpha_variance, *self.eta_gamma, *self.lambda_gamma, *self.sigma2_gamma]
        if not all(np.isfinite(v) and v > 0 for v in values):
            raise ValueError("prior variances and gamma (shape, rate) must be strictly positive")

    @staticmethod
    def gamma_from_moments(mean: float, variance: float) -> tuple[float, float]:
        """(shape, rate) of the gamma law with the given mean and variance."""
        return mean**2 / variance, mean / variance


@functools.lru_cache(maxsize=64)
def _gamma_norm(shape: float, rate: float) -> float:
    return shape * math.log(rate) - math.lgamma(shape)


def _gamma_logpdf(x, shape, rate):
    if np.ndim(x) == 0:
        return _gamma_norm(shape, rate) + (shape - 1.0) * math.log(x) - rate * x
    return _gamma_norm(shape, rate) + (shape - 1.0) * np.log(x) - rate * x


def _normal_logpdf(x, variance):
    return -0.5 * math.log(2 * math.pi * variance) - 0.5 * np.square(x) / variance


def _check_kind(v: ParamVector, kind) -> ModelKind:
    kind = ModelKind.parse(kind)
    if v.kind is not kind:
        raise ValueError(f"parameter vector is {v.kind.value} but model kind is {kind.value}")
    return kind


def log_likelihood_terms(v: ParamVector, d: ObservedData, kind: ModelKind | str = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-observation ``(log S_pop(w_i), log f_pop(w_i))``."""
    if kind is not None:
        _check_kind(v, kind)
    g, s2 = (None, None) if v.frailty is None else (v.frailty.gamma, v.frailty.sigma2)
    theta = np.exp(d.covariates @ v.beta)
    return log_population_parts(d.times, v.baseline.alpha, v.baseline.lam, g, s2, v.eta, theta)


def _log_lik_array(theta: np.ndarray, d: ObservedData, kind: ModelKind) -> float:
    if kind is ModelKind.PVFCR:
        alpha, lam, g, s2, eta = theta[:5]
        beta = theta[5:]
        if not (lam > 0 and eta >= 0 and 0.0 < g < 1.0 and s2 >= 0):
            return -np.inf
    else:
        alpha, lam, eta = theta[:3]
        beta = theta[3:]
        g = s2 = None
        if not (lam > 0 and eta >= 0):
            return -np.inf
    with np.errstate(all="ignore"):
        th = np.exp(d.covariates @ beta)
        log_s, log_f = log_population_parts(d.times, alpha, lam, g, s2, eta, th)
        value = float(np.sum(np.where(d.events, log_f, log_s)))
    return value if np.isfinite(value) else -np.inf


def _log_prior_array(theta: np.ndarray, p: PriorSpec, kind: ModelKind) -> float:
    if kind is ModelKind.PVFCR:
        alpha, lam, g, s2, eta = theta[:5]
        beta = theta[5:]
        if not (0.0 < g < 1.0) or not s2 > 0:
            return -np.inf
    else:
        alpha, lam, eta = theta[:3]
        beta = theta[3:]
        s2 = None
    if not (lam > 0 and eta > 0) or not np.all(np.isfinite(theta)):
        return -np.inf
    total = _normal_logpdf(alpha, p.alpha_variance) + _normal_logpdf(beta, p.beta_variance).sum()
    total += _gamma_logpdf(lam, *p.lambda_gamma) + _gamma_logpdf(eta, *p.eta_gamma)
    if s2 is not None:
        total += _gamma_logpdf(s2, *p.sigma2_gamma)
    return float(total)


def log_likelihood(v: ParamVector, d: ObservedData, kind: ModelKind | str) -> float:
    """Sum of ``log f_pop`` over events and ``log S_pop`` over censored units."""
    kind = _check_kind(v, kind)
    theta = v.to_array()
    if not np.all(np.isfinite(theta)):
        return -np.inf
    return _log_lik_array(theta, d, kind)


def log_prior(v: ParamVector, p: PriorSpec, kind: ModelKind | str) -> float:
    kind = _check_kind(v, kind)
    return _log_prior_array(v.to_array(), p, kind)


def log_posterior(v: ParamVector, d: ObservedData, p: PriorSpec, kind: ModelKind | str) -> float:
    """Unnormalized log posterior: ``log_prior + log_likelihood``."""
    kind = _check_kind(v, kind)
    return make_log_posterior(d, p, kind)(v.to_array())


def make_log_posterior(d: ObservedData, p: PriorSpec, kind: ModelKind | str):
    """Log posterior as a function of the flat coordinate array (``ParamVector.to_array`` order)."""
    kind = ModelKind.parse(kind)

    def evaluate(theta: np.ndarray) -> float:
        lp = _log_prior_array(theta, p, kind)
        if lp == -np.inf:
            return -np.inf
        ll = _log_lik_array(theta, d, kind)
        return lp + ll if ll > -np.inf else -np.inf

    return evaluate


def log_posterior_expanded(v: ParamVector, d: ObservedData, p: PriorSpec, kind: ModelKind | str) -> float:
    """Unnormalized log posterior written out term by term in closed form.

    An independent route to :func:`log_posterior` that composes the
    posterior kernel directly from ``w_i``, ``delta_i`` and ``x_i`` instead of
    going through log S / log f. Only valid away from the limit branches
    (``gamma``, ``sigma2``, ``eta`` not tiny); it is a cross-check, not the
    production path.
    """
    kind = ModelKind.parse(kind)
    lp = log_prior(v, p, kind)
    if lp == -np.inf:
        return -np.inf
    alpha, lam, eta, beta = v.baseline.alpha, v.baseline.lam, v.eta, v.beta
    if eta < ETA_LIMIT:
        raise ValueError("expanded form needs eta away from the Poisson limit")
    w, delta, X = d.times, d.events.astype(float), d.covariates
    r = delta.sum()
    xb = X @ beta
    base = r * np.log(lam) + np.sum(delta * xb) + r * alpha + np.sum(delta * (lam - 1.0) * np.log(w))
    if kind is ModelKind.PVFCR:
        g, s2 = v.frailty.gamma, v.frailty.sigma2
        if g < GAMMA_LIMIT or s2 < SIGMA2_LIMIT:
            raise ValueError("expanded form needs gamma and sigma2 away from their limits")
        k = (1.0 - g) / (g * s2)
        inner = 1.0 + s2 * np.exp(alpha) * w**lam / (1.0 - g)
        surv = np.exp(k * (1.0 - inner**g))
        value = (
            base
            + r * k
            + np.sum(delta * (g - 1.0) * np.log(inner))
            + np.sum((-1.0 / eta - delta) * np.log(1.0 + eta * np.exp(xb) * (1.0 - surv)))
            - np.sum(delta * k * inner**g)
        )
    else:
        cum = np.exp(alpha) * w**lam
        surv = np.exp(-cum)
        value = (
            base
            - np.sum(delta * cum)
            + np.sum((-1.0 / eta - delta) * np.log(1.0 + eta * np.exp(xb) * (1.0 - surv)))
        )
    return float(lp + value) if np.isfinite(value) else -np.inf
