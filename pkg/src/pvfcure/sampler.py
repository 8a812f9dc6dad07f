"""Adaptive random-walk Metropolis sampling of the posterior.

The chain runs on an unconstrained working space (log for positive
parameters, logit for gamma) with the log-Jacobian added to the target. The
Gaussian proposal covariance is re-estimated every ``adapt_interval``
iterations during burn-in from the most recent half of the chain history
(scaled by ``2.38**2 / dim``) and frozen afterwards, so the
retained draws come from a fixed Metropolis kernel. Dropping the oldest half
keeps the start-up transient from inflating the proposal when burn-in is
short.

Random numbers come from numpy's Philox-4x64 counter-based generator seeded
through :class:`numpy.random.SeedSequence`; replicate streams are obtained
with ``spawn_key``, so results do not depend on the number of workers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .inference import ObservedData, PriorSpec, log_posterior, make_log_posterior
from .model import ModelKind, ParamVector

log = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.random.Philox (Philox-4x64-10) via SeedSequence"
ADAPT_SCALE = 2.38**2
ADAPT_JITTER = 1e-6
INITIAL_STEP = 0.1


class InitializationError(RuntimeError):
    """The requested starting point has zero posterior density."""


class SamplerConfigurationError(RuntimeError):
    """No usable starting point could be found."""


def make_rng(seed: int, *spawn_key: int) -> np.random.Generator:
    """Philox generator for ``seed``, optionally on a derived substream."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in spawn_key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SamplerConfig:
    total_iterations: int = 40000
    burn_in: int = 10000
    thin: int = 30
    adapt_interval: int = 100
    seed: int = 0
    init: Union[ParamVector, str] = "default"

    def __post_init__(self):
        if self.total_iterations < 1 or self.burn_in < 0 or self.thin < 1 or self.adapt_interval < 1:
            raise ValueError("iterations and thin must be positive, burn-in nonnegative")
        if self.total_iterations <= self.burn_in:
            raise ValueError("total_iterations must exceed burn_in")
        if not (isinstance(self.init, ParamVector) or self.init == "default"):
            raise ValueError("init must be a ParamVector or 'default'")

    @property
    def n_keep(self) -> int:
        return (self.total_iterations - self.burn_in) // self.thin

    @classmethod
    def standard(cls, kind: ModelKind | str, seed: int = 0) -> "SamplerConfig":
        """40000/10000/30 for PVFCR and 30000/10000/20 for CR; 1000 draws each."""
        if ModelKind.parse(kind) is ModelKind.PVFCR:
            return cls(40000, 10000, 30, seed=seed)
        return cls(30000, 10000, 20, seed=seed)


@dataclass
class ChainResult:
    """Thinned post-burn-in sample on the original parameter scale."""

    draws: np.ndarray
    param_names: list[str]
    kind: ModelKind
    acceptance_rate: float
    log_posterior_trace: np.ndarray
    seed: int
    acceptance_rate_burn_in: float = float("nan")
    geweke_z: np.ndarray = field(default_factory=lambda: np.zeros(0))
    proposal_cov: Optional[np.ndarray] = None

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def converged_flag(self) -> bool:
        """True unless a Geweke-style |z| exceeds 2 for some coordinate."""
        return bool(np.all(np.abs(self.geweke_z) <= 2.0))

    def param(self, name: str) -> np.ndarray:
        return self.draws[:, self.param_names.index(name)]

    def param_vectors(self):
        for row in self.draws:
            yield ParamVector.from_array(row, self.kind)


# -- working-space transform --------------------------------------------------


def _positive_slots(kind: ModelKind) -> list[int]:
    return [1, 3, 4] if kind is ModelKind.PVFCR else [1, 2]


def to_working(theta: np.ndarray, kind: ModelKind) -> np.ndarray:
    """Map original coordinates to the unconstrained sampling space."""
    z = np.array(theta, dtype=float)
    pos = _positive_slots(kind)
    z[pos] = np.log(z[pos])
    if kind is ModelKind.PVFCR:
        g = z[2]
        z[2] = np.log(g) - np.log1p(-g)
    return z


def from_working(z: np.ndarray, kind: ModelKind) -> tuple[np.ndarray, float]:
    """Inverse transform plus ``log |d theta / d z|``."""
    theta = np.array(z, dtype=float)
    pos = _positive_slots(kind)
    theta[pos] = np.exp(z[pos])
    log_jac = float(np.sum(z[pos]))
    if kind is ModelKind.PVFCR:
        # Numerically stable logistic and log(g (1 - g)).
        y = z[2]
        theta[2] = 1.0 / (1.0 + np.exp(-y)) if y >= 0 else np.exp(y) / (1.0 + np.exp(y))
        log_jac += -abs(y) - 2.0 * np.log1p(np.exp(-abs(y)))
    return theta, log_jac


# -- generic adaptive Metropolis ------------------------------------------------


@dataclass
class _RawChain:
    kept: np.ndarray
    kept_logp: np.ndarray
    accept_burn: float
    accept_keep: float
    cov: np.ndarray


def adaptive_metropolis(
    log_target: Callable[[np.ndarray], float],
    x0: np.ndarray,
    config: SamplerConfig,
    rng: Optional[np.random.Generator] = None,
    proposal_cov: Optional[np.ndarray] = None,
    adapt: bool = True,
    on_adapt: Optional[Callable[[int, np.ndarray], None]] = None,
) -> _RawChain:
    """Random-walk Metropolis with covariance adaptation during burn-in.

    Parameters
    ----------
    log_target : callable
        Unnormalized log density on R^d; ``-inf`` means outside the support.
    x0 : array
        Starting point, must have finite ``log_target``.
    proposal_cov : array, optional
        Initial proposal covariance. Defaults to ``(0.1**2 / d) I``.
    adapt : bool
        Disable to keep ``proposal_cov`` fixed for the whole run.
    on_adapt : callable, optional
        Called as ``on_adapt(iteration, new_cov)`` after each update.
    """
    if rng is None:
        rng = make_rng(config.seed)
    x = np.array(x0, dtype=float)
    d = x.size
    lp = float(log_target(x))
    if not np.isfinite(lp):
        raise InitializationError("log target is not finite at the starting point")
    cov = (INITIAL_STEP**2 / d) * np.eye(d) if proposal_cov is None else np.array(proposal_cov, dtype=float)
    chol = np.linalg.cholesky(np.atleast_2d(cov))

    n = config.total_iterations
    noise = rng.standard_normal((n, d))
    log_u = np.log(rng.random(n))
    history = np.empty((config.burn_in + 1, d)) if adapt else None
    n_keep = config.n_keep
    kept = np.empty((n_keep, d))
    kept_logp = np.empty(n_keep)
    acc_burn = acc_keep = 0
    k = 0
    if history is not None:
        history[0] = x

    for i in range(n):
        prop = x + chol @ noise[i]
        lp_prop = log_target(prop)
        if lp_prop - lp > log_u[i]:
            x, lp = prop, lp_prop
            if i < config.burn_in:
                acc_burn += 1
            else:
                acc_keep += 1
        it = i + 1
        if it <= config.burn_in:
            if history is not None:
                history[it] = x
                if it % config.adapt_interval == 0:
                    emp = np.atleast_2d(np.cov(history[(it + 1) // 2 : it + 1], rowvar=False))
                    cov = (ADAPT_SCALE / d) * (emp + ADAPT_JITTER * np.eye(d))
                    chol = np.linalg.cholesky(cov)
                    if on_adapt is not None:
                        on_adapt(it, cov)
        else:
            j = it - config.burn_in
            if j % config.thin == 0 and k < n_keep:
                kept[k] = x
                kept_logp[k] = lp
                k += 1

    n_after = n - config.burn_in
    return _RawChain(
        kept=kept,
        kept_logp=kept_logp,
        accept_burn=acc_burn / config.burn_in if config.burn_in else float("nan"),
        accept_keep=acc_keep / n_after,
        cov=cov,
    )


def geweke_z(draws: np.ndarray, first: float = 0.1, last: float = 0.5) -> np.ndarray:
    """Two-window mean comparison (naive variances) per coordinate."""
    draws = np.atleast_2d(draws)
    n = draws.shape[0]
    a = draws[: max(int(first * n), 2)]
    b = draws[n - max(int(last * n), 2):]
    var = a.var(axis=0, ddof=1) / a.shape[0] + b.var(axis=0, ddof=1) / b.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (a.mean(axis=0) - b.mean(axis=0)) / np.sqrt(var)
    return np.where(var > 0, z, 0.0)


# -- posterior chains -----------------------------------------------------------


def default_init(d: ObservedData, kind: ModelKind | str) -> ParamVector:
    """Interior starting point: crude event-rate alpha, lambda=1, gamma=0.5, sigma2=0.5, eta=0.5, beta=0."""
    kind = ModelKind.parse(kind)
    r = d.n_events
    alpha = float(np.log(r / d.times.sum())) if r > 0 else -1.0
    head = [alpha, 1.0] + ([0.5, 0.5] if kind is ModelKind.PVFCR else []) + [0.5]
    return ParamVector.from_array(np.concatenate([head, np.zeros(d.n_beta)]), kind)


def _fallback_inits(d: ObservedData, kind: ModelKind):
    first = default_init(d, kind)
    yield first
    base = first.to_array()
    n_head = 5 if kind is ModelKind.PVFCR else 3
    for alpha in (0.0, -1.0, 1.0, -3.0):
        v = base.copy()
        v[0] = alpha
        v[n_head:] = 0.0
        yield ParamVector.from_array(v, kind)


def run_chain(
    d: ObservedData,
    p: PriorSpec,
    kind: ModelKind | str,
    c: SamplerConfig,
    rng: Optional[np.random.Generator] = None,
    on_adapt: Optional[Callable[[int, np.ndarray], None]] = None,
) -> ChainResult:
    """Sample the posterior of ``kind`` given data ``d`` and priors ``p``.

    Deterministic given ``c.seed`` (or the supplied ``rng``).
    """
    kind = ModelKind.parse(kind)
    if isinstance(c.init, ParamVector):
        if c.init.kind is not kind:
            raise InitializationError("init parameter vector does not match the model kind")
        if not np.isfinite(log_posterior(c.init, d, p, kind)):
            raise InitializationError("log posterior is -inf at the supplied initial point")
        start = c.init
    else:
        start = next((v for v in _fallback_inits(d, kind) if np.isfinite(log_posterior(v, d, p, kind))), None)
        if start is None:
            raise SamplerConfigurationError("log posterior is not finite at any fallback initial point")

    log_post = make_log_posterior(d, p, kind)

    def target(z):
        theta, log_jac = from_working(z, kind)
        lp = log_post(theta)
        return lp + log_jac if lp > -np.inf else -np.inf

    raw = adaptive_metropolis(
        target,
        to_working(start.to_array(), kind),
        c,
        rng=rng if rng is not None else make_rng(c.seed),
        on_adapt=on_adapt,
    )
    draws = np.array([from_working(z, kind)[0] for z in raw.kept])
    trace = np.array([log_post(t) for t in draws])
    result = ChainResult(
        draws=draws,
        param_names=d.param_names(kind),
        kind=kind,
        acceptance_rate=raw.accept_keep,
        log_posterior_trace=trace,
        seed=c.seed,
        acceptance_rate_burn_in=raw.accept_burn,
        geweke_z=geweke_z(draws),
        proposal_cov=raw.cov,
    )
    log.debug("%s chain: acceptance %.3f, converged flag %s", kind.value, result.acceptance_rate, result.converged_flag)
    return result
