"""Posterior summaries computed from a thinned chain."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .inference import ObservedData
from .model import ModelKind, ParamVector, cure_rate_raw, log_population_parts, log_population_survival_raw
from .sampler import ChainResult


class Interval(NamedTuple):
    lower: float
    upper: float


class CureRateEstimate(NamedTuple):
    mean: float
    hpd: Interval
    draws: np.ndarray


@dataclass
class SurvivalCurve:
    time_grid: np.ndarray
    values: np.ndarray
    profile: np.ndarray


@dataclass
class CpoReport:
    """Per-observation CPO estimates and their summed log.

    Observations whose ``g`` underflowed to zero or went non-finite for some
    draw are listed in ``flagged`` and left out of ``total_log``.
    """

    per_observation: np.ndarray
    total_log: float
    log_cpo: np.ndarray
    flagged: list[int] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


def _draw_columns(chain: ChainResult):
    """Split draws into ``(alpha, lam, gamma, sigma2, eta, beta)`` column arrays."""
    d = chain.draws
    if chain.kind is ModelKind.PVFCR:
        return d[:, 0], d[:, 1], d[:, 2], d[:, 3], d[:, 4], d[:, 5:]
    return d[:, 0], d[:, 1], None, None, d[:, 2], d[:, 3:]


def posterior_mean(chain: ChainResult) -> ParamVector:
    """Coordinatewise mean of the draws on the original parameter scale."""
    if chain.n_draws < 1:
        raise ValueError("chain has no draws")
    return ParamVector.from_array(chain.draws.mean(axis=0), chain.kind)


def posterior_sd(chain: ChainResult) -> np.ndarray:
    """Sample standard deviation of each coordinate (zero for a single draw)."""
    if chain.n_draws < 2:
        return np.zeros(chain.draws.shape[1])
    return chain.draws.std(axis=0, ddof=1)


def hpd_interval(sample: Sequence[float], level: float = 0.95) -> Interval:
    """Shortest window holding ``ceil(level * n)`` sorted sample points.

    Ties go to the window with the lowest left endpoint.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = x.size
    if n < 2:
        raise ValueError("need at least two sample points")
    # round() guards against level * n landing a hair above an integer.
    k = max(1, math.ceil(round(level * n, 9)))
    widths = x[k - 1:] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return Interval(float(x[i]), float(x[i + k - 1]))


def cure_rates_per_draw(chain: ChainResult, x) -> np.ndarray:
    _, _, _, _, eta, beta = _draw_columns(chain)
    theta = np.exp(beta @ np.asarray(x, dtype=float))
    return cure_rate_raw(eta, theta)


def cure_rate_estimate(chain: ChainResult, x, level: float = 0.95) -> CureRateEstimate:
    """Average of the per-draw cure rates for covariate row ``x``, with its HPD."""
    p0 = cure_rates_per_draw(chain, x)
    hpd = hpd_interval(p0, level) if p0.size >= 2 else Interval(float(p0[0]), float(p0[0]))
    return CureRateEstimate(float(p0.mean()), hpd, p0)


def survival_curve_estimate(chain: ChainResult, x, grid) -> SurvivalCurve:
    """Pointwise posterior mean of the improper population survival."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be an increasing vector of nonnegative times")
    alpha, lam, gamma, sigma2, eta, beta = _draw_columns(chain)
    theta = np.exp(beta @ np.asarray(x, dtype=float))
    col = lambda a: None if a is None else a[:, None]  # noqa: E731
    with np.errstate(all="ignore"):
        log_s = log_population_survival_raw(grid[None, :], col(alpha), col(lam), col(gamma), col(sigma2), col(eta), col(theta))
    values = np.exp(log_s).mean(axis=0)
    return SurvivalCurve(grid, values, np.asarray(x, dtype=float))


def log_g_matrix(chain: ChainResult, d: ObservedData) -> np.ndarray:
    """``log g(w_i | draw_k)`` as an (n_draws, m) array.

    g is the population density for events and the population survival for
    censored units.
    """
    alpha, lam, gamma, sigma2, eta, beta = _draw_columns(chain)
    theta = np.exp(beta @ d.covariates.T)
    col = lambda a: None if a is None else a[:, None]  # noqa: E731
    with np.errstate(all="ignore"):
        log_s, log_f = log_population_parts(d.times[None, :], col(alpha), col(lam), col(gamma), col(sigma2), col(eta), theta)
    return np.where(d.events[None, :], log_f, log_s)


def cpo_from_log_g(log_g: np.ndarray) -> CpoReport:
    """Harmonic-mean CPO from an (n_draws, m) array of log g values."""
    log_g = np.atleast_2d(np.asarray(log_g, dtype=float))
    n_p = log_g.shape[0]
    bad = ~np.all(np.isfinite(log_g), axis=0)
    with np.errstate(all="ignore"):
        log_cpo = -(logsumexp(-log_g, axis=0) - np.log(n_p))
    log_cpo = np.where(bad, np.nan, log_cpo)
    flagged = [int(i) for i in np.flatnonzero(bad)]
    diagnostics = [f"observation {i}: g is zero or non-finite for some draw; excluded from total" for i in flagged]
    if flagged:
        warnings.warn(f"{len(flagged)} observation(s) excluded from the CPO total", RuntimeWarning, stacklevel=2)
    return CpoReport(
        per_observation=np.exp(log_cpo),
        total_log=float(np.sum(log_cpo[~bad])),
        log_cpo=log_cpo,
        flagged=flagged,
        diagnostics=diagnostics,
    )


def cpo(chain: ChainResult, d: ObservedData, kind: ModelKind | str | None = None) -> CpoReport:
    """Monte Carlo CPO per observation and the summed log-CPO (larger is better)."""
    if kind is not None and ModelKind.parse(kind) is not chain.kind:
        raise ValueError("chain and requested model kind differ")
    return cpo_from_log_g(log_g_matrix(chain, d))


def parameter_table(chain: ChainResult, level: float = 0.95) -> list[dict]:
    """Mean, SD and HPD bounds per parameter."""
    rows = []
    for name, col in zip(chain.param_names, chain.draws.T):
        col = np.ascontiguousarray(col)
        lo, hi = hpd_interval(col, level) if col.size >= 2 else (col[0], col[0])
        sd = col.std(ddof=1) if col.size >= 2 else 0.0
        rows.append({"parameter": name, "mean": float(col.mean()), "sd": float(sd),
                     "hpd_lower": float(lo), "hpd_upper": float(hi)})
    return rows
