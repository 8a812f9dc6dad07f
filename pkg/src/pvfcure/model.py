"""Closed-form quantities of the PVF-frailty cure rate model.

The promotion time of each latent cause has a Weibull baseline with
cumulative hazard ``H0(t) = exp(alpha) * t**lambda``, multiplied by a power
variance function (PVF) frailty with unit mean and variance ``sigma2``. The
number of latent causes is negative binomial with mean ``theta`` and
dispersion ``eta``. Integrating both out gives an improper population
survival function that plateaus at the cure rate.

Everything is evaluated in log space and exponentiated at the boundary.
Functions broadcast over ``t`` and over array-valued parameters, which lets
the estimators evaluate a whole posterior sample in one call.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

# Below these values the limit expressions are used instead of the general
# formula: gamma-frailty form, no-frailty (CR) form, Poisson form.
GAMMA_LIMIT = 1e-5
SIGMA2_LIMIT = 1e-8
ETA_LIMIT = 1e-8


class DomainError(ValueError):
    """An argument lies outside the domain of a model function."""


class ModelKind(str, enum.Enum):
    """PVF-frailty cure rate model or the nested usual cure rate model."""

    PVFCR = "pvfcr"
    CR = "cr"

    @classmethod
    def parse(cls, value: "ModelKind | str") -> "ModelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown model kind {value!r}; expected 'pvfcr' or 'cr'") from None


@dataclass(frozen=True)
class BaselineParams:
    """Weibull baseline: log-rate ``alpha`` and shape ``lam``."""

    alpha: float
    lam: float

    def check(self) -> "BaselineParams":
        if not np.all(np.asarray(self.lam) > 0):
            raise DomainError(f"lambda must be positive, got {self.lam}")
        return self


@dataclass(frozen=True)
class FrailtyParams:
    """PVF frailty with mean fixed at one.

    ``gamma`` is the PVF index in (0, 1) and ``sigma2`` the frailty variance.
    The precision ``1 / sigma2`` is implied and never stored.
    """

    gamma: float
    sigma2: float

    def check(self) -> "FrailtyParams":
        g = np.asarray(self.gamma)
        if not np.all((g > 0) & (g < 1)):
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not np.all(np.asarray(self.sigma2) >= 0):
            raise DomainError(f"sigma2 must be nonnegative, got {self.sigma2}")
        return self


@dataclass(frozen=True)
class CountingParams:
    """Negative binomial number of competing causes."""

    eta: float
    theta: float

    def check(self) -> "CountingParams":
        eta = np.asarray(self.eta)
        theta = np.asarray(self.theta)
        if not np.all(theta > 0):
            raise DomainError(f"theta must be positive, got {self.theta}")
        if not np.all(eta >= 0):
            raise DomainError(f"eta must be nonnegative, got {self.eta}")
        return self


@dataclass(frozen=True)
class ParamVector:
    """Full parameter set ``(alpha, lambda, gamma, sigma2, eta, beta)``.

    ``frailty`` is ``None`` for the usual cure rate model, which has no
    frailty coordinates at all.
    """

    baseline: BaselineParams
    frailty: Optional[FrailtyParams]
    eta: float
    beta: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))

    def check(self) -> "ParamVector":
        self.baseline.check()
        if self.frailty is not None:
            self.frailty.check()
        if not self.eta >= 0:
            raise DomainError(f"eta must be nonnegative, got {self.eta}")
        return self

    @property
    def kind(self) -> ModelKind:
        return ModelKind.CR if self.frailty is None else ModelKind.PVFCR

    def theta(self, x) -> np.ndarray:
        """Mean number of causes ``exp(x @ beta)`` for a row or a design matrix."""
        return np.exp(np.asarray(x, dtype=float) @ self.beta)

    def counting(self, x) -> CountingParams:
        return CountingParams(self.eta, self.theta(x))

    def to_array(self) -> np.ndarray:
        head = [self.baseline.alpha, self.baseline.lam]
        if self.frailty is not None:
            head += [self.frailty.gamma, self.frailty.sigma2]
        head.append(self.eta)
        return np.concatenate([np.asarray(head, dtype=float), self.beta])

    @classmethod
    def from_array(cls, values: Sequence[float], kind: ModelKind | str) -> "ParamVector":
        kind = ModelKind.parse(kind)
        v = np.asarray(values, dtype=float)
        if kind is ModelKind.PVFCR:
            return cls(BaselineParams(v[0], v[1]), FrailtyParams(v[2], v[3]), v[4], v[5:])
        return cls(BaselineParams(v[0], v[1]), None, v[2], v[3:])

    @staticmethod
    def names(kind: ModelKind | str, n_beta: int, covariate_names: Sequence[str] | None = None) -> list[str]:
        """Coordinate names matching :meth:`to_array` order."""
        kind = ModelKind.parse(kind)
        head = ["alpha", "lambda"]
        if kind is ModelKind.PVFCR:
            head += ["gamma", "sigma2"]
        head.append("eta")
        if covariate_names is None:
            betas = [f"beta{j}" for j in range(n_beta)]
        else:
            betas = ["beta0"] + [f"beta_{c}" for c in covariate_names]
            if len(betas) != n_beta:
                raise ValueError("covariate_names must name every non-intercept column")
        return head + betas


def _as_time(t, strict: bool) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    bad = (t <= 0) if strict else (t < 0)
    if np.any(bad) or np.any(np.isnan(t)):
        kind = "positive" if strict else "nonnegative"
        raise DomainError(f"time must be {kind}")
    return t


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


# -- raw broadcasting kernels (no validation) --------------------------------


def _log_cum_hazard(t, alpha, lam):
    with np.errstate(divide="ignore"):
        return alpha + lam * np.log(t)


def _frailty_terms(h, gamma, sigma2):
    """``(log S, tilt)`` of the PVF marginal given cumulative hazard ``h``.

    ``tilt = (gamma - 1) * log(1 + sigma2 * h / (1 - gamma))`` is the extra
    factor of the marginal density over ``h0 * S``. ``gamma=None`` means no
    frailty. Scalar parameters branch in Python; arrays use ``np.where``.
    """
    if gamma is None:
        return -h, 0.0
    if np.ndim(gamma) == 0 and np.ndim(sigma2) == 0:
        if sigma2 < SIGMA2_LIMIT:
            return -h, 0.0
        if gamma < GAMMA_LIMIT:
            inner = np.log1p(sigma2 * h)
            return -inner / sigma2, -inner
        one_m_g = 1.0 - gamma
        inner = np.log1p(sigma2 * h / one_m_g)
        return -one_m_g / (gamma * sigma2) * np.expm1(gamma * inner), (gamma - 1.0) * inner
    with np.errstate(all="ignore"):
        small_g = gamma < GAMMA_LIMIT
        g_eff = np.where(small_g, 0.0, gamma)
        one_m_g = 1.0 - g_eff
        inner = np.log1p(sigma2 * h / one_m_g)
        general = -one_m_g / (gamma * sigma2) * np.expm1(gamma * inner)
        log_s = np.where(small_g, -inner / sigma2, general)
        tilt = (g_eff - 1.0) * inner
    no_frailty = sigma2 < SIGMA2_LIMIT
    return np.where(no_frailty, -h, log_s), np.where(no_frailty, 0.0, tilt)


def _pgf_terms(log_s, eta, theta):
    """``(one_minus_s, log1p(eta*theta*(1-s)) / eta)``, the latter tending to ``theta*(1-s)``."""
    one_m_s = -np.expm1(log_s)
    if np.ndim(eta) == 0:
        if eta < ETA_LIMIT:
            return one_m_s, theta * one_m_s
        return one_m_s, np.log1p(eta * theta * one_m_s) / eta
    with np.errstate(all="ignore"):
        general = np.log1p(eta * theta * one_m_s) / eta
    return one_m_s, np.where(eta < ETA_LIMIT, theta * one_m_s, general)


def _log_frailty_survival_from_h(h, gamma, sigma2):
    return _frailty_terms(h, gamma, sigma2)[0]


def _log_frailty_density_from_h(t, log_h, gamma, sigma2, lam):
    """log f = log h0 + (gamma - 1) log(1 + sigma2 H0 / (1 - gamma)) + log S."""
    log_s, tilt = _frailty_terms(np.exp(log_h), gamma, sigma2)
    return log_h + np.log(lam) - np.log(t) + tilt + log_s


def _log_pgf_from_log_s(log_s, eta, theta):
    """log A_N(s) with s = exp(log_s); Poisson form for tiny ``eta``."""
    return -_pgf_terms(log_s, eta, theta)[1]


def log_population_parts(t, alpha, lam, gamma, sigma2, eta, theta):
    """Return ``(log S_pop(t), log f_pop(t))`` with all arguments broadcast.

    ``gamma``/``sigma2`` are ``None`` for the usual cure rate model. ``t``
    must be positive; no validation is done here, this is the hot path used
    by the likelihood and the estimators.
    """
    log_t = np.log(t)
    log_h = alpha + lam * log_t
    log_s, tilt = _frailty_terms(np.exp(log_h), gamma, sigma2)
    one_m_s, scaled = _pgf_terms(log_s, eta, theta)
    # log f_pop = log theta + log f - (1/eta + 1) log1p(eta theta (1 - S)); the
    # eta-scaled log1p term covers the -1/eta part and tends to theta (1 - S).
    if np.ndim(eta) == 0 and eta < ETA_LIMIT:
        extra = 0.0
    else:
        extra = np.where(np.asarray(eta) < ETA_LIMIT, 0.0, np.log1p(eta * theta * one_m_s))
    log_f = np.log(theta) + log_h + np.log(lam) - log_t + tilt + log_s - scaled - extra
    return -scaled, log_f


def log_population_survival_raw(t, alpha, lam, gamma, sigma2, eta, theta):
    """Broadcasting log S_pop without validation; ``t = 0`` gives 0."""
    h = np.exp(_log_cum_hazard(t, alpha, lam))
    return _log_pgf_from_log_s(_log_frailty_survival_from_h(h, gamma, sigma2), eta, theta)


# -- public API ---------------------------------------------------------------


def cumulative_baseline_hazard(t, p: BaselineParams):
    """Weibull cumulative hazard ``exp(alpha) * t**lambda``."""
    t = _as_time(t, strict=False)
    p.check()
    return _scalar(np.exp(_log_cum_hazard(t, p.alpha, p.lam)))


def baseline_hazard(t, p: BaselineParams):
    """Weibull hazard ``exp(alpha) * lambda * t**(lambda - 1)``.

    Only defined for ``t > 0``: for ``lambda < 1`` the hazard diverges as
    ``t -> 0+`` and is not clamped.
    """
    t = _as_time(t, strict=True)
    p.check()
    return _scalar(np.exp(p.alpha) * p.lam * t ** (p.lam - 1.0))


def _checked_frailty(p: BaselineParams, f: Optional[FrailtyParams]):
    p.check()
    if f is None:
        return None, None
    f.check()
    return f.gamma, f.sigma2


def frailty_marginal_survival(t, p: BaselineParams, f: Optional[FrailtyParams]):
    t = _as_time(t, strict=False)
    g, s2 = _checked_frailty(p, f)
    h = np.exp(_log_cum_hazard(t, p.alpha, p.lam))
    return _scalar(np.exp(_log_frailty_survival_from_h(h, g, s2)))


def frailty_marginal_density(t, p: BaselineParams, f: Optional[FrailtyParams]):
    t = _as_time(t, strict=True)
    g, s2 = _checked_frailty(p, f)
    return _scalar(np.exp(_log_frailty_density_from_h(t, _log_cum_hazard(t, p.alpha, p.lam), g, s2, p.lam)))


def negbin_pgf(s, c: CountingParams):
    """Probability generating function ``{1 + eta*theta*(1 - s)}**(-1/eta)``."""
    s = np.asarray(s, dtype=float)
    if np.any((s < 0) | (s > 1)) or np.any(np.isnan(s)):
        raise DomainError("s must lie in [0, 1]")
    c.check()
    with np.errstate(divide="ignore"):
        log_s = np.log(s)
    return _scalar(np.exp(_log_pgf_from_log_s(log_s, c.eta, c.theta)))


def negbin_pmf(n, c: CountingParams):
    """P(N = n) for the negative binomial with mean theta and dispersion eta."""
    n = np.asarray(n)
    if np.any(n < 0) or np.any(n != np.floor(n)):
        raise DomainError("n must be a nonnegative integer")
    c.check()
    n = n.astype(float)
    eta, theta = np.asarray(c.eta, dtype=float), np.asarray(c.theta, dtype=float)
    with np.errstate(all="ignore"):
        inv = 1.0 / eta
        log_p = (
            gammaln(n + inv) - gammaln(n + 1.0) - gammaln(inv)
            + n * (np.log(eta * theta) - np.log1p(eta * theta))
            - inv * np.log1p(eta * theta)
        )
        poisson = n * np.log(theta) - theta - gammaln(n + 1.0)
    return _scalar(np.exp(np.where(eta < ETA_LIMIT, poisson, log_p)))


def _frailty_args(v: ParamVector):
    v.check()
    if v.frailty is None:
        return None, None
    return v.frailty.gamma, v.frailty.sigma2


def log_population_survival(t, v: ParamVector, x):
    t = _as_time(t, strict=False)
    g, s2 = _frailty_args(v)
    return _scalar(log_population_survival_raw(t, v.baseline.alpha, v.baseline.lam, g, s2, v.eta, v.theta(x)))


def population_survival(t, v: ParamVector, x):
    """Improper survival ``A_N(S(t))``; tends to :func:`cure_rate` as t grows."""
    return _scalar(np.exp(log_population_survival(t, v, x)))


def log_population_density(t, v: ParamVector, x):
    t = _as_time(t, strict=True)
    g, s2 = _frailty_args(v)
    _, log_f = log_population_parts(t, v.baseline.alpha, v.baseline.lam, g, s2, v.eta, v.theta(x))
    return _scalar(log_f)


def population_density(t, v: ParamVector, x):
    return _scalar(np.exp(log_population_density(t, v, x)))


def cure_rate_raw(eta, theta):
    """Broadcasting ``(1 + eta*theta)**(-1/eta)`` with the Poisson limit."""
    eta = np.asarray(eta, dtype=float)
    with np.errstate(all="ignore"):
        general = np.exp(-np.log1p(eta * theta) / eta)
    return np.where(eta < ETA_LIMIT, np.exp(-theta), general)


def cure_rate(v: ParamVector, x):
    """Long-run plateau of the population survival for covariate row ``x``."""
    v.check()
    return _scalar(cure_rate_raw(v.eta, v.theta(x)))


def invert_population_survival(u, v: ParamVector, x):
    """Time ``t`` with ``population_survival(t) == u`` for ``u`` in (p0, 1].

    Returns ``inf`` at ``u == p0``. Raises :class:`DomainError` below the
    cure rate, where no finite or infinite time solves the equation.
    """
    u = np.asarray(u, dtype=float)
    theta = v.theta(x)
    eta = v.eta
    if eta < ETA_LIMIT:
        one_m_s = -np.log(u) / theta
    else:
        one_m_s = np.expm1(-eta * np.log(u)) / (eta * theta)
    if np.any(one_m_s > 1 + 1e-12) or np.any(one_m_s < 0):
        raise DomainError("u must lie in [cure rate, 1]")
    with np.errstate(divide="ignore"):
        log_s = np.log1p(-np.minimum(one_m_s, 1.0))
    if v.frailty is None or v.frailty.sigma2 < SIGMA2_LIMIT:
        h = -log_s
    elif v.frailty.gamma < GAMMA_LIMIT:
        s2 = v.frailty.sigma2
        h = np.expm1(-s2 * log_s) / s2
    else:
        g, s2 = v.frailty.gamma, v.frailty.sigma2
        h = (1.0 - g) / s2 * np.expm1(np.log1p(-g * s2 / (1.0 - g) * log_s) / g)
    with np.errstate(divide="ignore"):
        t = np.exp((np.log(h) - v.baseline.alpha) / v.baseline.lam)
    return _scalar(t)
