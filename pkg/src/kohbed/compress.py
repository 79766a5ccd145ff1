"""Mixture compression: whitening, weighted k-means, KNN-guided merging.

Reduces a J-component predictive mixture to a small surrogate while
preserving the global first and second moments exactly (every collapse and
merge is moment-matched).  Pair costs are the pairwise Kullback-Leibler
style log-determinant penalty, restricted to K-nearest-neighbor pairs in
whitened coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .linalg import cholesky, triangular_solve
from .mixture import GaussianMixture


@dataclass(frozen=True)
class CompressionConfig:
    j0: int = 200
    j_target: int = 30
    nn_k: int = 10
    refresh_r: int = 25
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.j_target <= self.j0):
            raise ValueError("need 1 <= j_target <= j0")
        if self.nn_k < 1 or self.refresh_r < 1:
            raise ValueError("nn_k and refresh_r must be >= 1")


@dataclass
class CompressionStats:
    """Instrumentation for the merge stage."""

    merges: int = 0
    cost_evaluations_per_sweep: list = None

    def __post_init__(self):
        if self.cost_evaluations_per_sweep is None:
            self.cost_evaluations_per_sweep = []


def whiten(mix: GaussianMixture):
    """Whitened component means.

    Returns ``(u, L, mu_bar)`` with ``u_j = L^{-1}(mu_j - mu_bar)`` and
    ``L L^T`` the weighted average covariance plus the between-component
    scatter of the means.
    """
    if mix.n_components == 0:
        raise DimensionMismatch("cannot whiten an empty mixture")
    mu_bar, sigma_avg = mix.moments()
    chol, _ = cholesky(sigma_avg)
    u = triangular_solve(chol, (mix.means - mu_bar[None, :]).T).T
    return u, chol, mu_bar


def moment_match(weights, means, covs):
    """Collapse components to a single (weight, mean, covariance) triple."""
    w = float(np.sum(weights))
    if w <= 0:
        raise ValueError("cannot moment-match a zero-weight cluster")
    mu = (weights / w) @ means
    centered = means - mu[None, :]
    cov = np.einsum("k,kij->ij", weights / w, covs)
    cov += (centered * (weights / w)[:, None]).T @ centered
    return w, mu, cov


def _kmeans_pp_init(u, weights, k, rng):
    n = u.shape[0]
    centers = np.empty((k, u.shape[1]))
    first = rng.choice(n, p=weights / weights.sum())
    centers[0] = u[first]
    d2 = np.sum((u - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        probs = weights * d2
        total = probs.sum()
        if total <= 0:
            idx = int(np.argmax(d2))
        else:
            idx = rng.choice(n, p=probs / total)
        centers[j] = u[idx]
        d2 = np.minimum(d2, np.sum((u - centers[j]) ** 2, axis=1))
    return centers


def kmeans_reduce(mix: GaussianMixture, whitened: np.ndarray, j0: int,
                  seed: int, max_iter: int = 100,
                  tol: float = 1e-6) -> GaussianMixture:
    """Weighted k-means in whitened space, then per-cluster moment matching.

    Empty clusters are deterministically re-seeded at the point farthest
    from its assigned center (lowest index on ties).
    """
    if j0 > mix.n_components:
        raise DimensionMismatch("j0 exceeds the number of components")
    if j0 == mix.n_components:
        return GaussianMixture(mix.weights.copy(), mix.means.copy(),
                               mix.covs.copy())
    rng = np.random.default_rng(seed)
    w = mix.weights
    centers = _kmeans_pp_init(whitened, w, j0, rng)
    assign = None
    for _ in range(max_iter):
        d2 = (np.sum(whitened ** 2, axis=1)[:, None]
              + np.sum(centers ** 2, axis=1)[None, :]
              - 2.0 * whitened @ centers.T)
        assign = np.argmin(d2, axis=1)
        empty = [k for k in range(j0) if not np.any(assign == k)]
        if empty:
            # re-seed each empty cluster at the farthest point whose donor
            # cluster keeps at least one member
            far = d2[np.arange(len(assign)), assign].copy()
            for k in empty:
                counts = np.bincount(assign, minlength=j0)
                eligible = counts[assign] >= 2
                pool = np.where(eligible, far, -np.inf)
                idx = int(np.argmax(pool))
                assign[idx] = k
                far[idx] = -np.inf
        new_centers = centers.copy()
        for k in range(j0):
            sel = assign == k
            wk = w[sel]
            new_centers[k] = (wk @ whitened[sel]) / wk.sum()
        move = float(np.max(np.abs(new_centers - centers)))
        centers = new_centers
        if move < tol:
            break

    weights, means, covs = [], [], []
    for k in range(j0):
        sel = assign == k
        wk, mu, cov = moment_match(w[sel], mix.means[sel], mix.covs[sel])
        weights.append(wk)
        means.append(mu)
        covs.append(cov)
    return GaussianMixture(np.asarray(weights), np.stack(means),
                           np.stack(covs))


def _logdet(cov):
    chol, _ = cholesky(cov)
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def merge_cost(i: int, j: int, weights, means, covs, logdets) -> float:
    """Pairwise merge penalty 0.5[(pi+pj)log|S_ij| - pi log|S_i| - pj log|S_j|]."""
    if i == j:
        raise ValueError("merge_cost needs two distinct components")
    _, _, cov = moment_match(np.array([weights[i], weights[j]]),
                             np.stack([means[i], means[j]]),
                             np.stack([covs[i], covs[j]]))
    return 0.5 * ((weights[i] + weights[j]) * _logdet(cov)
                  - weights[i] * logdets[i] - weights[j] * logdets[j])


def _knn_pairs(u, alive, nn_k):
    """Deduplicated (i, j) nearest-neighbor pairs among alive components."""
    idx = np.flatnonzero(alive)
    pts = u[idx]
    d2 = (np.sum(pts ** 2, axis=1)[:, None]
          + np.sum(pts ** 2, axis=1)[None, :]
          - 2.0 * pts @ pts.T)
    np.fill_diagonal(d2, np.inf)
    k = min(nn_k, len(idx) - 1)
    pairs = set()
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    for row, nbrs in zip(idx, idx[order]):
        for nb in nbrs:
            pairs.add((min(row, nb), max(row, nb)))
    return pairs


def compress(mix: GaussianMixture, cfg: CompressionConfig,
             stats: CompressionStats | None = None,
             on_merge=None) -> GaussianMixture:
    """Full pipeline: whiten -> weighted k-means to J0 -> KNN Runnalls merges.

    The caller's mixture is never mutated.  Deterministic under
    ``cfg.seed``; ties in the merge cost break toward the lexicographically
    smallest index pair.  ``on_merge(weights, means, covs)`` receives the
    alive components after every merge (invariant instrumentation).
    """
    if cfg.j0 > mix.n_components:
        cfg = CompressionConfig(mix.n_components,
                                min(cfg.j_target, mix.n_components),
                                cfg.nn_k, cfg.refresh_r, cfg.seed)
    u, _, _ = whiten(mix)
    reduced = kmeans_reduce(mix, u, cfg.j0, cfg.seed)
    if cfg.j_target == reduced.n_components:
        return reduced

    weights = list(reduced.weights)
    means = list(reduced.means)
    covs = list(reduced.covs)
    logdets = [_logdet(c) for c in covs]
    alive = np.ones(len(weights), dtype=bool)
    n_alive = len(weights)
    if stats is None:
        stats = CompressionStats()

    def rebuild():
        sub = GaussianMixture(
            np.asarray([weights[i] for i in range(len(weights)) if alive[i]]),
            np.stack([means[i] for i in range(len(weights)) if alive[i]]),
            np.stack([covs[i] for i in range(len(weights)) if alive[i]]))
        u_alive, chol, mu_bar = whiten(sub)
        u_full = np.zeros((len(weights), mix.dim))
        u_full[alive] = u_alive
        pairs = _knn_pairs(u_full, alive, cfg.nn_k)
        costs = {}
        n_evals = 0
        for (i, j) in sorted(pairs):
            costs[(i, j)] = merge_cost(i, j, weights, means, covs, logdets)
            n_evals += 1
        return u_full, chol, mu_bar, costs, n_evals

    u_full, w_chol, w_center, costs, evals_this_sweep = rebuild()
    merges_since_refresh = 0

    while n_alive > cfg.j_target:
        best = min(costs.items(), key=lambda kv: (kv[1], kv[0]))
        (i, j), _ = best
        w, mu, cov = moment_match(np.array([weights[i], weights[j]]),
                                  np.stack([means[i], means[j]]),
                                  np.stack([covs[i], covs[j]]))
        alive[i] = alive[j] = False
        weights.append(w)
        means.append(mu)
        covs.append(cov)
        logdets.append(_logdet(cov))
        alive = np.append(alive, True)
        new_idx = len(weights) - 1
        n_alive -= 1
        stats.merges += 1
        merges_since_refresh += 1
        costs = {pair: c for pair, c in costs.items()
                 if i not in pair and j not in pair}
        if on_merge is not None:
            idx = [k for k in range(len(weights)) if alive[k]]
            on_merge(np.asarray([weights[k] for k in idx]),
                     [means[k] for k in idx], [covs[k] for k in idx])

        if n_alive <= cfg.j_target:
            break

        if merges_since_refresh >= cfg.refresh_r:
            stats.cost_evaluations_per_sweep.append(evals_this_sweep)
            u_full, w_chol, w_center, costs, evals_this_sweep = rebuild()
            merges_since_refresh = 0
        else:
            # place the merged component with the stale whitening transform;
            # coordinates refresh wholesale at the next rebuild
            u_new = triangular_solve(w_chol, mu - w_center)
            u_full = np.vstack([u_full, u_new[None, :]])
            others = np.flatnonzero(alive)
            others = others[others != new_idx]
            if len(others):
                d2 = np.sum((u_full[others] - u_full[new_idx]) ** 2, axis=1)
                k = min(cfg.nn_k, len(others))
                nbrs = others[np.argsort(d2, kind="stable")[:k]]
                for nb in nbrs:
                    pair = (min(nb, new_idx), max(nb, new_idx))
                    if pair not in costs:
                        costs[pair] = merge_cost(pair[0], pair[1], weights,
                                                 means, covs, logdets)
                        evals_this_sweep += 1

    stats.cost_evaluations_per_sweep.append(evals_this_sweep)
    out = GaussianMixture(
        np.asarray([weights[i] for i in range(len(weights)) if alive[i]]),
        np.stack([means[i] for i in range(len(weights)) if alive[i]]),
        np.stack([covs[i] for i in range(len(weights)) if alive[i]]))
    return out
