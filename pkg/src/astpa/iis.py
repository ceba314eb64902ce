"""Inverse importance sampling for the normalising constant of the smoothed
target, with the two-half robustness rule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .gmm import GaussianMixture
from .target import SmoothedTarget

SPLIT_RATIO_BOUNDS = (1.0 / 3.0, 3.0)


class IISError(RuntimeError):
    pass


@dataclass
class NormalizingEstimate:
    c_hat: float
    c_half_1: float
    c_half_2: float
    variance: float
    m_used: int
    model_calls: int
    min_branch: bool  # True when the halves disagreed and the minimum was kept


def split_rule(c1: float, c2: float) -> tuple[float, bool]:
    """Average the halves if ``1/3 <= c1/c2 <= 3``, else keep the smaller one."""
    lo, hi = SPLIT_RATIO_BOUNDS
    if c2 > 0 and lo <= c1 / c2 <= hi:
        return 0.5 * (c1 + c2), False
    return min(c1, c2), True


def variance_of_constant(ratios, c_hat_mean: float | None = None) -> float:
    """``sum((r_i - r_bar)^2) / (m (m - 1))`` with ``r_bar`` the all-sample mean."""
    r = np.asarray(ratios, dtype=float)
    m = r.size
    if m < 2:
        raise ValueError("need at least two ratios")
    mean = r.mean() if c_hat_mean is None else c_hat_mean
    return float(np.sum((r - mean) ** 2) / (m * (m - 1)))


LogTarget = Union[SmoothedTarget, Callable[[np.ndarray], np.ndarray]]


def estimate_constant(
    target: LogTarget,
    q: GaussianMixture,
    m: int,
    rng: np.random.Generator,
) -> NormalizingEstimate:
    """Estimate ``C = int h(x) dx`` from ``m`` i.i.d. draws of ``q``.

    ``target`` is a :class:`SmoothedTarget` or any callable returning
    ``log h`` for a batch of points.
    """
    if m < 2 or m % 2:
        raise ValueError("m must be even and >= 2")
    log_h = target.log_target if isinstance(target, SmoothedTarget) else target
    ls = target.limit_state if isinstance(target, SmoothedTarget) else None
    calls0 = ls.call_counter if ls is not None else 0

    x = q.sample(m, rng)
    log_r = np.asarray(log_h(x), dtype=float) - q.log_pdf(x)
    if np.any(np.isnan(log_r)) or np.any(log_r == np.inf):
        raise IISError("non-finite importance ratio")
    shift = float(np.max(log_r))
    if shift == -np.inf:
        raise IISError("all importance ratios are zero; the fitted density misses the target")
    scaled = np.exp(log_r - shift)
    scale = math.exp(shift)
    half = m // 2
    c1 = float(scaled[:half].mean()) * scale
    c2 = float(scaled[half:].mean()) * scale
    c_hat, min_branch = split_rule(c1, c2)
    if c_hat == 0.0:
        raise IISError(f"normalising constant underflows (log scale {shift:.1f})")
    var = variance_of_constant(scaled) * scale * scale
    return NormalizingEstimate(
        c_hat=c_hat,
        c_half_1=c1,
        c_half_2=c2,
        variance=var,
        m_used=m,
        model_calls=(ls.call_counter - calls0) if ls is not None else 0,
        min_branch=min_branch,
    )
