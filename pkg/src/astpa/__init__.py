"""Rare-event probability estimation with a smoothed sampling target, guided
pCN chains and inverse importance sampling.

Typical use::

    import numpy as np
    from astpa import get_benchmark, config_for, run_astpa

    spec = get_benchmark("bimodal_convex")
    est = run_astpa(spec, config_for(spec), np.random.default_rng(0))
    print(est.p_hat, est.analytical_cov, est.n_total)
"""

from .benchmarks import BENCHMARK_NAMES, BenchmarkSpec, crude_monte_carlo, get_benchmark, quadrature_reference_2d
from .discovery import DiscoveryConfig, DiscoveryError, DiscoveryResult, discover
from .gmm import GaussianMixture, GMMFitError
from .iis import IISError, NormalizingEstimate, estimate_constant
from .pcn import ChainResult, ChainState, PcnConfig, run_chain, run_chains
from .pipeline import Aggregate, Estimate, RunConfig, aggregate, config_for, run_astpa, run_replications
from .target import GaussianPrior, LimitState, SmoothedTarget

__version__ = "0.1.0"

__all__ = [
    "Aggregate", "BENCHMARK_NAMES", "BenchmarkSpec", "ChainResult", "ChainState",
    "DiscoveryConfig", "DiscoveryError", "DiscoveryResult", "Estimate", "GMMFitError",
    "GaussianMixture", "GaussianPrior", "IISError", "LimitState", "NormalizingEstimate",
    "PcnConfig", "RunConfig", "SmoothedTarget", "aggregate", "config_for",
    "crude_monte_carlo", "discover", "estimate_constant", "get_benchmark",
    "quadrature_reference_2d", "run_astpa", "run_chain", "run_chains", "run_replications",
]
