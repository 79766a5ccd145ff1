"""Gaussian mixtures over predictive vectors.

A mixture is stored columnar (weights, stacked means, stacked covariances)
rather than as a list of component objects, because compression and the
nested-MC estimator sweep over all components in bulk.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import DimensionMismatch
from .linalg import cholesky


@dataclass
class GaussianMixture:
    """Weighted Gaussian mixture with lazily cached Cholesky factors."""

    weights: np.ndarray          # (K,)
    means: np.ndarray            # (K, D)
    covs: np.ndarray             # (K, D, D)
    _chols: Optional[np.ndarray] = field(default=None, repr=False)
    _logdets: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.asarray(self.covs, dtype=float)
        if self.covs.ndim == 2:
            self.covs = self.covs[None, :, :]
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.covs.shape != (k, d, d):
            raise DimensionMismatch("inconsistent mixture component shapes")
        if np.any(self.weights < 0):
            raise ValueError("mixture weights must be nonnegative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1 within 1e-12")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def chols(self) -> np.ndarray:
        if self._chols is None:
            ch = np.empty_like(self.covs)
            for k in range(self.n_components):
                ch[k], _ = cholesky(self.covs[k])
            self._chols = ch
            self._logdets = 2.0 * np.sum(
                np.log(np.diagonal(ch, axis1=1, axis2=2)), axis=1)
        return self._chols

    def logdets(self) -> np.ndarray:
        self.chols()
        return self._logdets

    def moments(self):
        """Global (mean, covariance) of the full mixture."""
        mu = self.weights @ self.means
        centered = self.means - mu[None, :]
        cov = np.einsum("k,kij->ij", self.weights, self.covs)
        cov += (centered * self.weights[:, None]).T @ centered
        return mu, cov

    def marginal(self, idx) -> "GaussianMixture":
        """Exact marginal over the coordinates in ``idx``."""
        idx = np.asarray(idx, dtype=int)
        return GaussianMixture(self.weights.copy(),
                               self.means[:, idx],
                               self.covs[:, idx[:, None], idx[None, :]])

    def sample(self, n: int, rng: np.random.Generator):
        """Draw ``n`` points; returns (samples (n, D), component indices)."""
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        ch = self.chols()
        out = np.empty((n, self.dim))
        for k in np.unique(comp):
            sel = comp == k
            out[sel] = self.means[k] + z[sel] @ ch[k].T
        return out, comp

    def to_json_dict(self) -> dict:
        ch = self.chols()
        tril = [c[np.tril_indices(self.dim)].tolist() for c in ch]
        return {
            "dim": self.dim,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "cov_chol_tril": tril,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GaussianMixture":
        d = int(doc["dim"])
        k = len(doc["weights"])
        chols = np.zeros((k, d, d))
        rows, cols = np.tril_indices(d)
        for i, flat in enumerate(doc["cov_chol_tril"]):
            chols[i][rows, cols] = flat
        covs = np.einsum("kij,klj->kil", chols, chols)
        mix = cls(np.asarray(doc["weights"]), np.asarray(doc["means"]), covs)
        mix._chols = chols
        mix._logdets = 2.0 * np.sum(
            np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
        return mix


def from_components(weights: List[float], means: List[np.ndarray],
                    covs: List[np.ndarray]) -> GaussianMixture:
    return GaussianMixture(np.asarray(weights, dtype=float),
                           np.stack([np.asarray(m, dtype=float).ravel()
                                     for m in means]),
                           np.stack([np.atleast_2d(np.asarray(c, dtype=float))
                                     for c in covs]))
