"""Limit-state wrappers, the standard Gaussian reference density and the
smoothed sampling target ``h(x) = l(g(x)) * pi(x)``.

All likelihood arithmetic is done in log space. The logistic likelihood is

    l(g) = 1 / (1 + exp((g / g_c + mu_g) / s)),   s = sqrt(3) / pi * sigma,

so ``log l = -softplus((g / g_c + mu_g) / s)``.
"""

from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
MU_G_FACTOR = 1.21
SIGMA_RECOMMENDED = (0.1, 0.6)
Q_RANGE = (3.0, 7.0)


class LimitState:
    """Vectorised performance function ``g`` with a thread-safe call counter.

    ``func`` maps an ``(n, d)`` array to ``n`` g-values. Every row passed
    through :meth:`__call__` counts as one model call.
    """

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], dim: int, name: str = "g"):
        if dim < 1:
            raise ValueError("dim must be a positive integer")
        self.func = func
        self.dim = int(dim)
        self.name = name
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def call_counter(self) -> int:
        return self._calls

    def _count(self, n: int) -> None:
        with self._lock:
            self._calls += n

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        if xb.shape[1] != self.dim:
            raise ValueError(f"{self.name}: expected dimension {self.dim}, got {xb.shape[1]}")
        out = np.asarray(self.func(xb), dtype=float).reshape(xb.shape[0])
        self._count(xb.shape[0])
        return float(out[0]) if single else out

    def __repr__(self) -> str:
        return f"LimitState({self.name!r}, dim={self.dim}, calls={self._calls})"


@dataclass(frozen=True)
class GaussianPrior:
    """Isotropic Gaussian ``N(0, scale * I)``; ``scale = 1`` is the reference density."""

    dim: int
    scale: float = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if not self.scale >= 1.0:
            raise ValueError("scale (epsilon) must be >= 1")

    def log_pdf(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        sq = np.sum(x * x, axis=-1)
        return -0.5 * sq / self.scale - 0.5 * self.dim * (LOG_2PI + math.log(self.scale))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return math.sqrt(self.scale) * rng.standard_normal((n, self.dim))


def scaling_constant(g_at_origin: float, q: float = 4.0) -> float:
    """Return ``g_c`` so that ``g(0) / g_c`` lands in ``[3, 7]``.

    ``g_c = 1`` when ``g(0)`` already lies in the range, else ``g(0) / q``.
    """
    if not math.isfinite(g_at_origin):
        raise ValueError(f"g(0) must be finite, got {g_at_origin}")
    if g_at_origin <= 0:
        raise ValueError(
            f"g(0) = {g_at_origin} <= 0: the origin is already in the failure domain"
        )
    lo, hi = Q_RANGE
    if not lo <= q <= hi:
        raise ValueError(f"q must lie in [{lo}, {hi}], got {q}")
    if lo <= g_at_origin <= hi:
        return 1.0
    return g_at_origin / q


def logistic_log_likelihood(g, g_c: float, sigma: float) -> np.ndarray | float:
    """``log l(g)`` for the logistic smoothing of the failure indicator."""
    s = math.sqrt(3.0) / math.pi * sigma
    z = (np.asarray(g, dtype=float) / g_c + MU_G_FACTOR * sigma) / s
    out = -np.logaddexp(0.0, z)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class SmoothedTarget:
    """Unnormalised sampling target ``h(x) = l(g(x)) pi(x)``.

    Parameters
    ----------
    limit_state : LimitState
    sigma : float
        Logistic dispersion factor.
    g_c : float, optional
        Scaling constant. When omitted it is derived from ``g(0)`` with
        :func:`scaling_constant`; that single evaluation is charged to the
        limit-state counter and recorded in ``setup_calls``.
    q : float
        Divisor used when ``g(0)`` is outside ``[3, 7]``.
    likelihood : bool
        ``False`` replaces ``l`` by 1 (the target collapses to the prior).
    """

    limit_state: LimitState
    sigma: float
    g_c: float | None = None
    q: float = 4.0
    likelihood: bool = True
    prior: GaussianPrior = field(init=False)
    g_origin: float | None = field(init=False, default=None)
    setup_calls: int = field(init=False, default=0)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        lo, hi = SIGMA_RECOMMENDED
        if not lo <= self.sigma <= hi:
            warnings.warn(
                f"sigma={self.sigma} outside the recommended range [{lo}, {hi}]",
                stacklevel=2,
            )
        self.prior = GaussianPrior(self.limit_state.dim)
        if self.g_c is None:
            before = self.limit_state.call_counter
            self.g_origin = float(self.limit_state(np.zeros(self.limit_state.dim)))
            self.setup_calls = self.limit_state.call_counter - before
            self.g_c = scaling_constant(self.g_origin, self.q)
        elif not self.g_c > 0:
            raise ValueError("g_c must be positive")

    @property
    def dim(self) -> int:
        return self.limit_state.dim

    @property
    def mu_g(self) -> float:
        return MU_G_FACTOR * self.sigma

    @property
    def logistic_scale(self) -> float:
        return math.sqrt(3.0) / math.pi * self.sigma

    def log_likelihood(self, g):
        """Log-likelihood from cached g-values (no model call)."""
        if not self.likelihood:
            out = np.zeros_like(np.asarray(g, dtype=float))
            return float(out) if out.ndim == 0 else out
        return logistic_log_likelihood(g, self.g_c, self.sigma)

    def log_target_from_g(self, x, g):
        return self.log_likelihood(g) + self.prior.log_pdf(x)

    def log_target(self, x):
        """``log h(x)``; evaluates the limit state once per row of ``x``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {x.shape[-1]}")
        return self.log_target_from_g(x, self.limit_state(x))
