"""End-to-end estimator: discovery, pCN sampling of the smoothed target,
shifted estimate, inverse importance sampling and uncertainty bookkeeping.

The final estimate is ``p_hat = p_tilde * C_hat`` where ``p_tilde`` averages
``1{g <= 0} / l(g)`` over the post-burn-in chain samples and ``C_hat`` is the
normalising constant of the sampled target.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import gmm as gmm_mod
from .benchmarks import BenchmarkSpec, get_benchmark
from .discovery import DiscoveryConfig, DiscoveryError, DiscoveryResult, discover
from .iis import IISError, estimate_constant
from .pcn import ChainResult, PcnConfig, burn_in_split, run_chains
from .target import LimitState, SmoothedTarget

logger = logging.getLogger(__name__)

STRIDE_BOUNDS = (3, 30)


@dataclass(frozen=True)
class RunConfig:
    """All knobs of one estimation run. ``None`` means "dimension-dependent default"."""

    sigma: float = 0.3
    q: float = 4.0
    n_level: int = 300
    p0: float = 0.1
    epsilon: float = 4.0
    n_chains: int = 10
    chain_length: int = 150
    alpha_star: float | None = None
    beta0: float = 0.5
    m_iis: int | None = None
    n_components: int | None = None
    cov_type: str | None = None
    seed_mode: str | None = None
    gmm_restarts: int = 3
    gmm_sample: str = "thinned"  # or "all"
    max_levels: int = 30
    discovery_kernel: str = "rw"
    likelihood: bool = True

    def __post_init__(self):
        if self.gmm_sample not in ("thinned", "all"):
            raise ValueError("gmm_sample must be 'thinned' or 'all'")
        if self.m_iis is not None and (self.m_iis < 2 or self.m_iis % 2):
            raise ValueError("m_iis must be even and >= 2")

    @property
    def n_samples(self) -> int:
        """``N = ceil(0.9 * n_chains * chain_length)``."""
        return math.ceil(0.9 * self.n_chains * self.chain_length - 1e-9)

    @property
    def n_burn(self) -> int:
        """``N_burn = floor(0.1 * n_chains * chain_length)``."""
        return math.floor(0.1 * self.n_chains * self.chain_length + 1e-9)

    @property
    def m(self) -> int:
        if self.m_iis is not None:
            return self.m_iis
        m = int(round(0.3 * self.n_samples))
        return max(2, m + (m % 2))

    def discovery_config(self) -> DiscoveryConfig:
        return DiscoveryConfig(n_level=self.n_level, p0=self.p0, epsilon=self.epsilon,
                               n_chains=self.n_chains, seed_mode=self.seed_mode,
                               max_levels=self.max_levels, kernel=self.discovery_kernel)

    def pcn_config(self) -> PcnConfig:
        return PcnConfig(chain_length=self.chain_length, beta0=self.beta0, alpha_star=self.alpha_star)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown RunConfig keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Estimate:
    p_hat: float
    p_tilde: float
    c_hat: float
    var_p_tilde: float
    var_c: float
    analytical_cov: float
    n_discovery: int
    n_burn: int
    n_samples: int
    m: int
    n_total: int
    stride: int
    ess_min: float
    n_thinned: int
    n_levels: int = 0
    acceptance_rate: float = float("nan")
    n_components: int = 0
    failed: bool = False
    reason: str = ""
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# building blocks


def shifted_estimate(g_values, target: SmoothedTarget):
    """``(p_tilde, weights)`` with ``w_i = 1{g_i <= 0} / l(g_i)``; no model calls."""
    g = np.asarray(g_values, dtype=float).ravel()
    if g.size == 0:
        raise ValueError("no samples")
    w = np.zeros_like(g)
    inside = g <= 0
    w[inside] = np.exp(-target.log_likelihood(g[inside]))
    return float(w.mean()), w


def _autocorr(x: np.ndarray) -> np.ndarray:
    """Normalised autocorrelation along axis 0 for every column of ``x``."""
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, n=nfft, axis=0)
    acov = np.fft.irfft(f * np.conj(f), n=nfft, axis=0)[:n]
    with np.errstate(invalid="ignore", divide="ignore"):
        return acov / acov[0]


def ess_per_dimension(chain: np.ndarray):
    """ESS of each column of one chain ``(n, d)`` with Geyer's initial positive
    sequence. Returns ``(ess, constant_mask)``; constant columns get ``n``."""
    x = np.asarray(chain, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < 2:
        raise ValueError("need at least two samples per chain")
    constant = np.ptp(x, axis=0) == 0
    ess = np.full(d, float(n))
    live = ~constant
    if live.any():
        rho = _autocorr(x[:, live])
        m = n // 2
        pairs = rho[0 : 2 * m : 2] + rho[1 : 2 * m : 2]
        keep = np.cumprod(pairs > 0, axis=0).astype(bool)
        tau = -1.0 + 2.0 * np.sum(np.where(keep, pairs, 0.0), axis=0)
        ess[live] = n / np.maximum(tau, 1.0 / math.log10(max(n, 10)))
    return ess, constant


def ess_min(chains) -> float:
    """Minimum over dimensions of the ESS summed over chains.

    ``chains`` is a sequence of ``(n_i, d)`` arrays, one per chain.
    """
    total = None
    flagged = False
    for c in chains:
        e, const = ess_per_dimension(c)
        flagged |= bool(const.any())
        total = e if total is None else total + e
    if flagged:
        logger.info("ess_min: constant dimension(s) in at least one chain")
    return float(np.min(total))


def thinning_stride(n: int, ess: float) -> int:
    """``floor(n / (4 ESS))`` clamped to ``{3, ..., 30}``."""
    if n < 1 or not ess > 0:
        raise ValueError("n must be >= 1 and ess > 0")
    lo, hi = STRIDE_BOUNDS
    return int(min(max(math.floor(n / (4.0 * ess)), lo), hi))


def analytical_cov(p_tilde: float, c_hat: float, var_p_tilde: float, var_c: float) -> float:
    """CoV of the product estimator from the variances of its two factors."""
    if var_p_tilde < 0 or var_c < 0:
        raise ValueError("variances must be non-negative")
    p_hat = p_tilde * c_hat
    if p_hat == 0:
        raise ZeroDivisionError("p_hat is zero")
    var = p_tilde**2 * var_c + c_hat**2 * var_p_tilde + var_p_tilde * var_c
    return math.sqrt(var) / abs(p_hat)


def _fit_isd(samples: np.ndarray, config: RunConfig, rng) -> gmm_mod.GaussianMixture:
    d = samples.shape[1]
    cov_type = config.cov_type or gmm_mod.default_cov_type(d)
    if config.n_components is not None:
        k = min(config.n_components, samples.shape[0] - 1)
        return gmm_mod.fit(samples, k, cov_type, rng, restarts=config.gmm_restarts)
    if d < 20:
        k = min(10, samples.shape[0] - 1)
        return gmm_mod.fit(samples, k, cov_type, rng, restarts=config.gmm_restarts)
    return gmm_mod.fit_bic(samples, (1, 2, 3), cov_type, rng, restarts=config.gmm_restarts)


# --------------------------------------------------------------------------
# the full run


def _failed(reason: str, config: RunConfig, n_discovery: int, n_total: int, **kw) -> Estimate:
    base = dict(p_hat=0.0, p_tilde=0.0, c_hat=float("nan"), var_p_tilde=float("nan"),
                var_c=float("nan"), analytical_cov=float("nan"), n_discovery=n_discovery,
                n_burn=0, n_samples=0, m=0, n_total=n_total, stride=0,
                ess_min=float("nan"), n_thinned=0, failed=True, reason=reason)
    base.update(kw)
    return Estimate(**base)


@dataclass
class RunArtifacts:
    """Intermediate products of :func:`run_astpa` kept for tracing."""

    target: SmoothedTarget | None = None
    discovery: DiscoveryResult | None = None
    chains: ChainResult | None = None
    isd: gmm_mod.GaussianMixture | None = None


def run_astpa(benchmark: BenchmarkSpec | LimitState, config: RunConfig,
              rng: np.random.Generator, artifacts: RunArtifacts | None = None) -> Estimate:
    """Run the full estimator once and return an :class:`Estimate`.

    Discovery, sampling and IIS failures produce an Estimate with
    ``failed=True`` and the model calls consumed so far.
    """
    ls = benchmark.limit_state() if isinstance(benchmark, BenchmarkSpec) else benchmark
    art = artifacts if artifacts is not None else RunArtifacts()
    calls0 = ls.call_counter
    used = lambda: ls.call_counter - calls0  # noqa: E731

    target = SmoothedTarget(ls, config.sigma, q=config.q, likelihood=config.likelihood)
    art.target = target
    try:
        disc = discover(ls, config.discovery_config(), rng, target)
    except DiscoveryError as err:
        return _failed(f"discovery: {err}", config, used(), used())
    art.discovery = disc
    n_discovery = target.setup_calls + disc.model_calls

    chains = run_chains(disc.seeds, target, config.pcn_config(), rng, seed_g=disc.seed_g)
    art.chains = chains
    burn = burn_in_split(config.n_chains, config.chain_length)
    kept_x = [chains.samples[i, b:] for i, b in enumerate(burn)]
    kept_g = [chains.g[i, b:] for i, b in enumerate(burn)]
    g_all = np.concatenate(kept_g)
    n_samples = g_all.size
    n_burn = int(burn.sum())
    p_tilde, _ = shifted_estimate(g_all, target)

    ess = ess_min(kept_x)
    stride = thinning_stride(n_samples, ess)
    thin_x = np.concatenate([x[::stride] for x in kept_x])
    thin_g = np.concatenate([g[::stride] for g in kept_g])
    _, w_thin = shifted_estimate(thin_g, target)
    n_thin = w_thin.size
    var_p = float(np.sum((w_thin - p_tilde) ** 2) / (n_thin * (n_thin - 1))) if n_thin > 1 else float("nan")

    common = dict(n_burn=n_burn, n_samples=n_samples, stride=stride, ess_min=ess,
                  n_thinned=n_thin, n_levels=disc.n_levels,
                  acceptance_rate=chains.acceptance_rate)
    if p_tilde == 0.0:
        return _failed("no rare-event samples in the chains", config, n_discovery, used(), **common)

    fit_x = thin_x if config.gmm_sample == "thinned" else np.concatenate(kept_x)
    try:
        isd = _fit_isd(fit_x, config, rng)
    except gmm_mod.GMMFitError as err:
        return _failed(f"gmm: {err}", config, n_discovery, used(), **common)
    art.isd = isd
    try:
        norm_est = estimate_constant(target, isd, config.m, rng)
    except IISError as err:
        return _failed(f"iis: {err}", config, n_discovery, used(), m=config.m, **common)

    flags = []
    if norm_est.min_branch:
        flags.append("iis_min_branch")
    if chains.anomalies:
        flags.append("chain_outside_support")
    p_hat = p_tilde * norm_est.c_hat
    est = Estimate(
        p_hat=p_hat,
        p_tilde=p_tilde,
        c_hat=norm_est.c_hat,
        var_p_tilde=var_p,
        var_c=norm_est.variance,
        analytical_cov=analytical_cov(p_tilde, norm_est.c_hat, var_p, norm_est.variance),
        n_discovery=n_discovery,
        m=norm_est.m_used,
        n_total=used(),
        n_components=isd.n_components,
        flags=flags,
        **common,
    )
    expected = est.n_discovery + est.n_burn + est.n_samples + est.m
    if est.n_total != expected:
        raise AssertionError(f"budget mismatch: counter {est.n_total} != {expected}")
    return est


# --------------------------------------------------------------------------
# replications


def replication_rng(master_seed: int, index: int) -> np.random.Generator:
    """Stream for replication ``index``: ``SeedSequence(master_seed, spawn_key=(index,))``.

    Depends only on the pair, never on worker count or scheduling.
    """
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


def _one_replication(args):
    name, params, config, master_seed, index = args
    spec = get_benchmark(name, **params)
    return run_astpa(spec, config, replication_rng(master_seed, index))


def run_replications(name: str, config: RunConfig, reps: int, master_seed: int = 0,
                     params: dict | None = None, workers: int = 1) -> list[Estimate]:
    """Independent replications, returned in replication-index order."""
    params = params or {}
    jobs = [(name, params, config, master_seed, i) for i in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_one_replication, jobs))
    return [_one_replication(j) for j in jobs]


@dataclass
class Aggregate:
    mean_p: float
    cov: float
    mean_cov_anal: float
    mean_n_total: float
    n_ok: int
    failures: int


def aggregate(estimates: list[Estimate]) -> Aggregate:
    """Replication statistics over successful runs; failures are only counted."""
    ok = [e for e in estimates if not e.failed]
    fails = len(estimates) - len(ok)
    if not ok:
        nan = float("nan")
        return Aggregate(nan, nan, nan, nan, 0, fails)
    p = np.array([e.p_hat for e in ok])
    mean_p = float(p.mean())
    cov = float(p.std(ddof=1) / mean_p) if len(ok) > 1 and mean_p > 0 else 0.0
    return Aggregate(
        mean_p=mean_p,
        cov=cov,
        mean_cov_anal=float(np.mean([e.analytical_cov for e in ok])),
        mean_n_total=float(np.mean([e.n_total for e in ok])),
        n_ok=len(ok),
        failures=fails,
    )


def config_for(spec: BenchmarkSpec, **overrides) -> RunConfig:
    """Benchmark defaults merged with non-``None`` overrides."""
    data = dict(spec.defaults)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(data)


__all__ = [
    "Aggregate", "Estimate", "RunArtifacts", "RunConfig", "aggregate", "analytical_cov",
    "config_for", "ess_min", "ess_per_dimension", "replication_rng", "run_astpa",
    "run_replications", "shifted_estimate", "thinning_stride",
]
