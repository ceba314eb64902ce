"""Gaussian mixture models fitted by EM, used as the importance density for
the normalising-constant estimate.

Full covariances are stored through their Cholesky factors; diagonal
covariances as variance vectors. Density evaluation is log-sum-exp throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

LOG_2PI = math.log(2.0 * math.pi)
COV_TYPES = ("full", "diag")


class GMMFitError(RuntimeError):
    pass


def default_cov_type(dim: int) -> str:
    return "full" if dim < 20 else "diag"


@dataclass
class GaussianMixture:
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, d)
    covariances: np.ndarray  # (k, d, d) full or (k, d) diagonal variances
    cov_type: str = "full"
    reg: float = 1e-6
    _chol: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covariances = np.asarray(self.covariances, dtype=float)
        if self.cov_type not in COV_TYPES:
            raise ValueError(f"cov_type must be one of {COV_TYPES}")
        k, d = self.means.shape
        if self.weights.shape != (k,):
            raise ValueError("weights and means disagree on the number of components")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        if self.cov_type == "full":
            if self.covariances.shape != (k, d, d):
                raise ValueError("full covariances must have shape (k, d, d)")
            chol = np.empty_like(self.covariances)
            for i, c in enumerate(self.covariances):
                if not np.allclose(c, c.T, rtol=1e-10, atol=1e-12):
                    raise ValueError("covariance matrices must be symmetric")
                try:
                    chol[i] = np.linalg.cholesky(c)
                except np.linalg.LinAlgError as err:
                    raise ValueError("covariance is not positive definite") from err
            self._chol = chol
        else:
            if self.covariances.shape != (k, d):
                raise ValueError("diagonal covariances must have shape (k, d)")
            if np.any(self.covariances <= 0):
                raise ValueError("diagonal variances must be positive")

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def n_parameters(self) -> int:
        k, d = self.means.shape
        cov = d * (d + 1) // 2 if self.cov_type == "full" else d
        return k * (d + cov) + k - 1

    def component_log_pdf(self, x: np.ndarray) -> np.ndarray:
        """``(n, k)`` matrix of ``log N(x_n; mu_k, Sigma_k)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {x.shape[1]}")
        return _component_log_pdf(x, self.means, self.covariances, self.cov_type, self._chol)

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            lw = np.log(self.weights)
        out = logsumexp(self.component_log_pdf(x) + lw, axis=1)
        return float(out[0]) if x.ndim == 1 else out

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        """Ancestral sampling: component labels first, then Gaussian draws."""
        if m < 1:
            raise ValueError("m must be >= 1")
        labels = rng.choice(self.n_components, size=m, p=self.weights)
        z = rng.standard_normal((m, self.dim))
        if self.cov_type == "full":
            offs = np.einsum("nij,nj->ni", self._chol[labels], z)
        else:
            offs = np.sqrt(self.covariances[labels]) * z
        return self.means[labels] + offs

    def to_dict(self) -> dict:
        return {
            "cov_type": self.cov_type,
            "reg": self.reg,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianMixture":
        return cls(
            weights=np.asarray(data["weights"]),
            means=np.asarray(data["means"]),
            covariances=np.asarray(data["covariances"]),
            cov_type=data["cov_type"],
            reg=data.get("reg", 1e-6),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GaussianMixture":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=1)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return m + np.log(np.sum(np.exp(a - m[:, None]), axis=1))


def _component_log_pdf(x, means, covs, cov_type, chol=None):
    d = x.shape[1]
    if cov_type == "diag":
        prec = 1.0 / covs  # (k, d)
        maha = (x * x) @ prec.T - 2.0 * x @ (means * prec).T + np.sum(means * means * prec, axis=1)
        logdet = np.sum(np.log(covs), axis=1)
        return -0.5 * (d * LOG_2PI + logdet[None] + np.maximum(maha, 0.0))
    if chol is None:
        chol = np.linalg.cholesky(covs)
    diff = x[None, :, :] - means[:, None, :]  # (k, n, d)
    # whitening with the inverse factor; d < 20 keeps the inversion cheap
    inv = np.linalg.inv(chol)
    z = diff @ np.swapaxes(inv, 1, 2)
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    return -0.5 * (d * LOG_2PI + logdet[:, None] + np.sum(z * z, axis=2)).T


def _kmeanspp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _m_step(x, resp, cov_type, reg):
    n, d = x.shape
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / n
    means = (resp.T @ x) / nk[:, None]
    if cov_type == "full":
        diff = x[None, :, :] - means[:, None, :]  # (k, n, d)
        covs = (np.swapaxes(diff * resp.T[:, :, None], 1, 2) @ diff) / nk[:, None, None]
        covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
        covs[:, np.arange(d), np.arange(d)] += reg
    else:
        covs = np.empty((len(nk), d))
        for i in range(len(nk)):
            diff = x - means[i]
            covs[i] = resp[:, i] @ (diff * diff) / nk[i] + reg
    weights = weights / weights.sum()
    return weights, means, covs


def _em_single(x, k, cov_type, reg, tol, max_iter, rng):
    n, d = x.shape
    centers = _kmeanspp_centers(x, k, rng)
    d2 = ((x[:, None, :] - centers[None]) ** 2).sum(axis=2)
    resp = np.zeros((n, k))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    weights, means, covs = _m_step(x, resp, cov_type, reg)
    prev = -np.inf
    history = []
    for _ in range(max_iter):
        try:
            chol = None
            if cov_type == "full":
                chol = np.linalg.cholesky(covs)
            lp = _component_log_pdf(x, means, covs, cov_type, chol)
        except np.linalg.LinAlgError:
            break
        with np.errstate(divide="ignore"):
            lp = lp + np.log(weights)
        norm = _logsumexp_rows(lp)
        ll = float(norm.sum())
        history.append(ll)
        resp = np.exp(lp - norm[:, None])
        if abs(ll - prev) <= tol * abs(ll):
            break
        prev = ll
        weights, means, covs = _m_step(x, resp, cov_type, reg)
    return weights, means, covs, history


def fit(
    samples: np.ndarray,
    k: int,
    cov_type: str = "full",
    rng: np.random.Generator | None = None,
    *,
    reg: float = 1e-6,
    tol: float = 1e-6,
    max_iter: int = 500,
    restarts: int = 3,
    history: list | None = None,
) -> GaussianMixture:
    """Fit a ``k``-component mixture by EM with k-means++ initialisation.

    The best of ``restarts`` runs (by final log-likelihood) is returned.
    ``history``, if given, receives one list of per-iteration log-likelihoods
    per restart.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    n, d = x.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    if cov_type not in COV_TYPES:
        raise ValueError(f"cov_type must be one of {COV_TYPES}")
    if n <= k:
        raise GMMFitError(f"need more samples ({n}) than components ({k})")
    if np.all(np.ptp(x, axis=0) == 0):
        raise GMMFitError("all samples are identical")
    rng = np.random.default_rng() if rng is None else rng
    best = None
    for _ in range(restarts):
        w, m, c, hist = _em_single(x, k, cov_type, reg, tol, max_iter, rng)
        if history is not None:
            history.append(hist)
        if hist and (best is None or hist[-1] > best[3]):
            best = (w, m, c, hist[-1])
    if best is None:
        raise GMMFitError("EM failed in every restart")
    w, m, c, _ = best
    return GaussianMixture(w / w.sum(), m, c, cov_type=cov_type, reg=reg)


def bic(model: GaussianMixture, samples: np.ndarray) -> float:
    x = np.atleast_2d(samples)
    return -2.0 * float(np.sum(model.log_pdf(x))) + model.n_parameters() * math.log(x.shape[0])


def fit_bic(
    samples: np.ndarray,
    candidates=(1, 2, 3),
    cov_type: str = "diag",
    rng: np.random.Generator | None = None,
    **kwargs,
) -> GaussianMixture:
    """Fit each candidate component count and keep the lowest BIC."""
    x = np.atleast_2d(samples)
    best, best_bic = None, np.inf
    for k in candidates:
        if x.shape[0] <= k:
            continue
        model = fit(x, k, cov_type, rng, **kwargs)
        b = bic(model, x)
        if b < best_bic:
            best, best_bic = model, b
    if best is None:
        raise GMMFitError("no candidate component count could be fitted")
    return best
