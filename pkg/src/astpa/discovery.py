"""Rare-event domain discovery.

A dispersed Gaussian population is pushed towards ``{g <= 0}`` through a
sequence of nested sets ``F_j = {g <= lambda_j}``. At each level the best
``p0 * N`` points seed short Markov chains that target ``1 / pi`` restricted
to ``F_j``; the reciprocal density rewards moving away from the origin, so the
population diffuses outward quickly. The final rare-event points only serve
as pCN seeds; they never enter the probability estimate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .pcn import BETA_MAX, BETA_MIN, adapt_beta, propose
from .target import GaussianPrior, LimitState, SmoothedTarget

SEED_MODES = ("weighted", "uniform")
KERNELS = ("rw", "pcn")


class DiscoveryError(RuntimeError):
    """Discovery could not produce enough rare-event seeds."""


def default_seed_mode(dim: int) -> str:
    return "weighted" if dim < 20 else "uniform"


@dataclass(frozen=True)
class DiscoveryConfig:
    n_level: int = 300
    p0: float = 0.1
    epsilon: float = 4.0
    n_chains: int = 10
    seed_mode: str | None = None  # None -> default_seed_mode(dim)
    max_levels: int = 30
    beta0: float = 0.5
    alpha_star: float = 0.3
    kernel: str = "rw"

    def __post_init__(self):
        if self.n_level < 1 or self.n_chains < 1 or self.max_levels < 1:
            raise ValueError("n_level, n_chains and max_levels must be positive")
        if not 0 < self.p0 < 1:
            raise ValueError("p0 must lie in (0, 1)")
        if self.n_seeds < 1:
            raise ValueError("p0 * n_level must round to at least 1")
        if not self.epsilon >= 1:
            raise ValueError("epsilon must be >= 1")
        if self.seed_mode is not None and self.seed_mode not in SEED_MODES:
            raise ValueError(f"seed_mode must be one of {SEED_MODES}")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}")

    @property
    def n_seeds(self) -> int:
        return int(round(self.p0 * self.n_level))

    @property
    def steps_per_seed(self) -> int:
        return int(round(1.0 / self.p0)) - 1

    def mode_for(self, dim: int) -> str:
        return default_seed_mode(dim) if self.seed_mode is None else self.seed_mode


@dataclass
class DiscoveryLevel:
    threshold: float
    points: np.ndarray
    g: np.ndarray


@dataclass
class DiscoveryResult:
    rare_event_samples: np.ndarray
    rare_event_g: np.ndarray
    thresholds: list[float]
    seeds: np.ndarray
    seed_g: np.ndarray
    model_calls: int
    levels: list[DiscoveryLevel] = field(default_factory=list)

    @property
    def n_levels(self) -> int:
        """Number of conditional levels run after the initial draw."""
        return len(self.thresholds) - 1


def intermediate_threshold(g_values, p0: float) -> float:
    """Rank statistic at ``ceil(p0 * N)`` (1-based) of the ascending g-values."""
    g = np.sort(np.asarray(g_values, dtype=float).ravel())
    if g.size == 0:
        raise ValueError("empty g-value list")
    # guard against 0.1 * 300 = 30.000000000000004
    rank = max(1, math.ceil(p0 * g.size - 1e-9))
    return float(g[rank - 1])


def reciprocal_conditional_step(
    x,
    g_x,
    lambda_j: float,
    beta,
    limit_state: LimitState,
    rng: np.random.Generator,
    kernel: str = "pcn",
):
    """One Metropolis-Hastings step targeting ``1{g <= lambda_j} / pi(x)``.

    ``kernel="pcn"`` proposes ``sqrt(1 - beta^2) x + beta xi``; that proposal
    is reversible for ``pi`` so the acceptance probability becomes
    ``min(1, (pi(x) / pi(x'))**2) * 1{g(x') <= lambda_j}``.
    ``kernel="rw"`` proposes ``x + beta xi`` and accepts with
    ``min(1, pi(x) / pi(x')) * 1{g(x') <= lambda_j}``.

    The prior factor is tested first; the limit state is evaluated only for
    proposals that survive it. Works on a single point or a batch. Returns
    ``(x_new, g_new, accepted, n_evaluations)``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    gb = np.atleast_1d(np.asarray(g_x, dtype=float)).copy()
    if np.any(gb > lambda_j):
        raise ValueError("current point(s) must satisfy g <= lambda_j")
    beta = np.broadcast_to(np.asarray(beta, dtype=float), gb.shape)
    if kernel == "pcn":
        prop = propose(xb, beta, rng)
        exponent = 1.0
    elif kernel == "rw":
        prop = xb + beta[:, None] * rng.standard_normal(xb.shape)
        exponent = 0.5
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    # log pi(x) - log pi(x') = (|x'|^2 - |x|^2) / 2 for the standard normal
    log_prior_factor = np.minimum(
        0.0, exponent * (np.sum(prop**2, axis=1) - np.sum(xb**2, axis=1))
    )
    u = rng.random(gb.size)
    survive = np.log(u) < log_prior_factor
    accepted = np.zeros(gb.size, dtype=bool)
    n_eval = int(survive.sum())
    if n_eval:
        g_prop = limit_state(prop[survive])
        ok = g_prop <= lambda_j
        idx = np.flatnonzero(survive)[ok]
        accepted[idx] = True
        xb = xb.copy()
        xb[idx] = prop[idx]
        gb[idx] = g_prop[ok]
    if single:
        return xb[0], float(gb[0]), bool(accepted[0]), n_eval
    return xb, gb, accepted, n_eval


def select_seeds(
    rare_samples: np.ndarray,
    n_chains: int,
    mode: str,
    rng: np.random.Generator,
    log_weights: np.ndarray | None = None,
) -> np.ndarray:
    """Indices of ``n_chains`` distinct seeds drawn without replacement.

    ``weighted`` draws with probability proportional to ``exp(log_weights)``
    (the target density at each point); ``uniform`` ignores the weights.
    """
    n = len(rare_samples)
    if n < n_chains:
        raise DiscoveryError(f"only {n} rare-event samples for {n_chains} chains")
    if mode == "uniform":
        return rng.choice(n, size=n_chains, replace=False)
    if mode != "weighted":
        raise ValueError(f"unknown seed mode {mode!r}")
    if log_weights is None:
        raise ValueError("weighted selection needs log_weights")
    lw = np.asarray(log_weights, dtype=float)
    p = np.exp(lw - logsumexp(lw))
    p /= p.sum()
    if np.count_nonzero(p) < n_chains:
        # weights underflowed: fall back to the largest ones
        return np.argsort(-lw, kind="stable")[:n_chains]
    return rng.choice(n, size=n_chains, replace=False, p=p)


def discover(
    limit_state: LimitState,
    config: DiscoveryConfig,
    rng: np.random.Generator,
    target: SmoothedTarget | None = None,
) -> DiscoveryResult:
    """Run the multi-level discovery stage and pick ``config.n_chains`` seeds.

    ``target`` supplies the weights for ``weighted`` seed selection.
    """
    d = limit_state.dim
    calls0 = limit_state.call_counter
    mode = config.mode_for(d)
    if mode == "weighted" and target is None:
        raise ValueError("weighted seed selection requires the smoothed target")

    x = GaussianPrior(d, config.epsilon).sample(config.n_level, rng)
    g = limit_state(x)
    lam = intermediate_threshold(g, config.p0)
    thresholds = [lam]
    levels = [DiscoveryLevel(lam, x, g)]
    beta = config.beta0
    t = 1
    n_s = config.n_seeds

    while lam > 0:
        if len(thresholds) > config.max_levels:
            raise DiscoveryError(
                f"no rare-event region after {config.max_levels} levels (lambda={lam:.4g})"
            )
        order = np.argsort(g, kind="stable")[:n_s]
        cur_x, cur_g = x[order], g[order]
        xs, gs = [cur_x], [cur_g]
        for _ in range(config.steps_per_seed):
            cur_x, cur_g, acc, _n = reciprocal_conditional_step(
                cur_x, cur_g, lam, beta, limit_state, rng, config.kernel
            )
            beta = float(np.clip(adapt_beta(beta, acc.mean(), config.alpha_star, t), BETA_MIN, BETA_MAX))
            t += 1
            xs.append(cur_x)
            gs.append(cur_g)
        # seed-major ordering: each seed followed by its chain states
        x = np.stack(xs, axis=1).reshape(-1, d)
        g = np.stack(gs, axis=1).reshape(-1)
        lam = intermediate_threshold(g, config.p0)
        thresholds.append(lam)
        levels.append(DiscoveryLevel(lam, x, g))

    in_f = g <= 0
    all_x, all_g = x[in_f], g[in_f]
    if len(all_x) < config.n_chains:
        raise DiscoveryError(
            f"{len(all_x)} rare-event samples, {config.n_chains} chains requested"
        )
    # the seed pool is the set of distinct rare points (population order);
    # repeated states only top it up when there are too few distinct ones
    _, first = np.unique(all_x, axis=0, return_index=True)
    first = np.sort(first)
    rare_x, rare_g = all_x[first], all_g[first]
    log_w = target.log_target_from_g(rare_x, rare_g) if target is not None else None
    if len(rare_x) >= config.n_chains:
        idx = select_seeds(rare_x, config.n_chains, mode, rng, log_w)
        seeds, seed_g = rare_x[idx], rare_g[idx]
    else:
        rest = np.setdiff1d(np.arange(len(all_x)), first)
        lw_rest = target.log_target_from_g(all_x[rest], all_g[rest]) if target is not None else None
        extra = rest[select_seeds(all_x[rest], config.n_chains - len(first), mode, rng, lw_rest)]
        seeds = np.concatenate([rare_x, all_x[extra]])
        seed_g = np.concatenate([rare_g, all_g[extra]])
    return DiscoveryResult(
        rare_event_samples=all_x,
        rare_event_g=all_g,
        thresholds=thresholds,
        seeds=seeds,
        seed_g=seed_g,
        model_calls=limit_state.call_counter - calls0,
        levels=levels,
    )


def write_trace_csv(result: DiscoveryResult, path: str | Path) -> None:
    """Dump per-level populations and the selected seeds for plotting."""
    path = Path(path)
    d = result.seeds.shape[1]
    header = ["kind", "level", "threshold", "g"] + [f"x{i + 1}" for i in range(d)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for j, lev in enumerate(result.levels):
            for xi, gi in zip(lev.points, lev.g):
                w.writerow(["level", j, f"{lev.threshold:.6e}", f"{gi:.6e}"] + [f"{v:.6e}" for v in xi])
        for xi, gi in zip(result.seeds, result.seed_g):
            w.writerow(["seed", len(result.levels) - 1, "", f"{gi:.6e}"] + [f"{v:.6e}" for v in xi])
