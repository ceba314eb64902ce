"""Preconditioned Crank-Nicolson MCMC with Robbins-Monro adaptation of the
proposal scale ``beta``.

The proposal ``x' = sqrt(1 - beta^2) x + beta xi`` with ``xi ~ N(0, I)`` leaves
the standard Gaussian invariant, so for a target ``l(x) pi(x)`` the
Metropolis-Hastings ratio reduces to ``l(x') / l(x)``.

Chains are advanced in lock-step as a batch; each chain keeps its own ``beta``
and its own adaptation counter, so a batch of one is exactly a single chain.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .target import SmoothedTarget

logger = logging.getLogger(__name__)

BETA_MIN = 1e-4
BETA_MAX = 0.999


def default_alpha_star(dim: int) -> float:
    """Target acceptance: higher for low-dimensional problems."""
    return 0.35 if dim < 20 else 0.25


@dataclass(frozen=True)
class PcnConfig:
    chain_length: int
    beta0: float = 0.5
    alpha_star: float | None = None  # None -> default_alpha_star(dim)
    burn_in_fraction: float = 0.10

    def __post_init__(self):
        if not 0 < self.beta0 <= 1:
            raise ValueError("beta0 must lie in (0, 1]")
        if self.alpha_star is not None and not 0 < self.alpha_star < 1:
            raise ValueError("alpha_star must lie in (0, 1)")
        if self.chain_length < 1:
            raise ValueError("chain_length must be >= 1")

    def target_acceptance(self, dim: int) -> float:
        return default_alpha_star(dim) if self.alpha_star is None else self.alpha_star


@dataclass
class ChainState:
    current: np.ndarray
    current_log_likelihood: float
    current_g: float
    beta: float
    step_index: int = 1
    accept_count: int = 0


@dataclass
class ChainResult:
    """Output of a batch of chains, all arrays indexed ``[chain, step]``."""

    samples: np.ndarray  # (n_chains, L, d)
    g: np.ndarray  # (n_chains, L)
    log_likelihood: np.ndarray  # (n_chains, L)
    accepted: np.ndarray  # (n_chains, L) bool
    accept_prob: np.ndarray  # (n_chains, L)
    betas: np.ndarray  # (n_chains, L), beta used for the proposal at each step
    model_calls: int
    anomalies: int = 0

    @property
    def n_chains(self) -> int:
        return self.samples.shape[0]

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean())


def propose(x, beta, rng: np.random.Generator) -> np.ndarray:
    """pCN proposal for one point ``(d,)`` or a batch ``(n, d)``.

    ``beta`` may be a scalar or one value per row.
    """
    x = np.asarray(x, dtype=float)
    xi = rng.standard_normal(x.shape)
    beta = np.asarray(beta, dtype=float)
    if x.ndim == 2 and beta.ndim == 1:
        beta = beta[:, None]
    return np.sqrt(1.0 - beta * beta) * x + beta * xi


def accept_probability(log_l_proposed, log_l_current):
    """``min(1, exp(log_l_proposed - log_l_current))``.

    Both arguments equal to ``-inf`` means the chain sits outside the
    support; the probability is 0 and the event is logged.
    """
    a = np.asarray(log_l_proposed, dtype=float)
    b = np.asarray(log_l_current, dtype=float)
    stuck = np.isneginf(a) & np.isneginf(b)
    with np.errstate(invalid="ignore"):
        diff = np.where(stuck, -np.inf, a - b)
    alpha = np.exp(np.minimum(diff, 0.0))
    if np.any(stuck):
        logger.warning("pCN: %d chain(s) outside the target support", int(np.sum(stuck)))
    return float(alpha) if alpha.ndim == 0 else alpha


def adapt_beta(beta_t, alpha_t, alpha_star: float, t):
    """Robbins-Monro update ``log beta += t**-0.5 (alpha_t - alpha_star)``, clamped."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 1):
        raise ValueError("adaptation index t must be >= 1")
    new = np.asarray(beta_t, dtype=float) * np.exp((np.asarray(alpha_t) - alpha_star) / np.sqrt(t))
    new = np.clip(new, BETA_MIN, BETA_MAX)
    return float(new) if new.ndim == 0 else new


def run_chains(
    seeds: np.ndarray,
    target: SmoothedTarget,
    config: PcnConfig,
    rng: np.random.Generator,
    seed_g: np.ndarray | None = None,
) -> ChainResult:
    """Advance ``len(seeds)`` independent chains for ``config.chain_length`` steps.

    ``seed_g`` holds cached limit-state values at the seeds; if omitted they
    are evaluated (and counted). Each step costs one model call per chain;
    a rejected step repeats the current state without re-evaluating it.
    """
    x = np.array(np.atleast_2d(seeds), dtype=float)
    n, d = x.shape
    if d != target.dim:
        raise ValueError(f"seed dimension {d} != target dimension {target.dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("seeds must be finite")
    ls = target.limit_state
    calls0 = ls.call_counter
    g = np.asarray(ls(x) if seed_g is None else seed_g, dtype=float).reshape(n).copy()
    log_l = np.asarray(target.log_likelihood(g), dtype=float).reshape(n).copy()
    alpha_star = config.target_acceptance(d)
    beta = np.full(n, config.beta0)

    L = config.chain_length
    samples = np.empty((n, L, d))
    g_out = np.empty((n, L))
    ll_out = np.empty((n, L))
    acc_out = np.empty((n, L), dtype=bool)
    prob_out = np.empty((n, L))
    beta_out = np.empty((n, L))
    anomalies = 0

    for t in range(1, L + 1):
        beta_out[:, t - 1] = beta
        prop = propose(x, beta, rng)
        g_prop = ls(prop)
        ll_prop = target.log_likelihood(g_prop)
        stuck = np.isneginf(ll_prop) & np.isneginf(log_l)
        anomalies += int(stuck.sum())
        alpha = accept_probability(ll_prop, log_l)
        acc = rng.random(n) < alpha
        x[acc] = prop[acc]
        g[acc] = g_prop[acc]
        log_l[acc] = ll_prop[acc]
        samples[:, t - 1] = x
        g_out[:, t - 1] = g
        ll_out[:, t - 1] = log_l
        acc_out[:, t - 1] = acc
        prob_out[:, t - 1] = alpha
        beta = adapt_beta(beta, alpha, alpha_star, t)

    return ChainResult(
        samples=samples,
        g=g_out,
        log_likelihood=ll_out,
        accepted=acc_out,
        accept_prob=prob_out,
        betas=beta_out,
        model_calls=ls.call_counter - calls0,
        anomalies=anomalies,
    )


def run_chain(
    seed_point,
    target: SmoothedTarget,
    config: PcnConfig,
    rng: np.random.Generator,
    seed_g: float | None = None,
) -> ChainResult:
    """Single-chain convenience wrapper around :func:`run_chains`."""
    sg = None if seed_g is None else np.array([seed_g], dtype=float)
    return run_chains(np.atleast_2d(np.asarray(seed_point, dtype=float)), target, config, rng, sg)


def step(state: ChainState, target: SmoothedTarget, alpha_star: float, rng: np.random.Generator) -> ChainState:
    """One pCN iteration on a :class:`ChainState` (mutated and returned)."""
    prop = propose(state.current, state.beta, rng)
    g_prop = float(target.limit_state(prop))
    ll_prop = float(target.log_likelihood(g_prop))
    alpha = accept_probability(ll_prop, state.current_log_likelihood)
    if rng.random() < alpha:
        state.current = prop
        state.current_g = g_prop
        state.current_log_likelihood = ll_prop
        state.accept_count += 1
    state.beta = adapt_beta(state.beta, alpha, alpha_star, state.step_index)
    state.step_index += 1
    return state


def burn_in_split(n_chains: int, chain_length: int, fraction: float = 0.10) -> np.ndarray:
    """Per-chain burn-in lengths summing to ``floor(fraction * n_chains * L)``."""
    total = math.floor(fraction * n_chains * chain_length + 1e-9)
    base, extra = divmod(total, n_chains)
    out = np.full(n_chains, base, dtype=int)
    out[:extra] += 1
    return out
