"""Design criteria: predictive-variance, information, distance, and the
mutual-information estimator with its local-complexity hybrids.

Each criterion scores one candidate given the current posterior state; the
campaign layer supplies fast-path covariance quantities.  Scoring is pure:
candidate RNG streams are derived as ``base_seed XOR candidate index`` so
results do not depend on evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import contextlib

import numpy as np
from scipy.linalg import solve_triangular

from . import _accel
from ._accel import mi_accumulate
from .errors import (DerivativeFailure, NumericalFailure, SelectionFailure)
from .linalg import SpdMatrix, cholesky, triangular_solve

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None


def _blas_single_threaded():
    # the jitted accumulation kernel owns the cores while BLAS calls are
    # small; spinning BLAS workers would otherwise starve it
    if _accel.using_numba() and threadpool_limits is not None:
        return threadpool_limits(limits=1, user_api="blas")
    return contextlib.nullcontext()
from .mixture import GaussianMixture
from .model import KohModelState, PosteriorSample, observation_moments

MAXIMIZE = "maximize"
MINIMIZE = "minimize"

CRITERIA = ("mi", "mi+cx", "imspe", "imspe+cx", "dopt", "maximin")

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class CandidateScore:
    candidate_index: int
    raw: float
    direction: str
    complexity: Optional[float] = None
    hybrid: Optional[float] = None


@dataclass(frozen=True)
class ComplexityConfig:
    w_g: float = 0.5
    k_neighbors: int = 5
    fd_step: float = 1e-3        # relative to the domain width per dimension
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.w_g <= 1.0:
            raise ValueError("w_g must lie in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    @property
    def w_s(self) -> float:
        return 1.0 - self.w_g


@dataclass(frozen=True)
class NmcConfig:
    outer_s: int = 10_000
    density_floor_tau: float = 1e-300
    seed: int = 0

    def __post_init__(self):
        if self.density_floor_tau <= 0:
            raise ValueError("density floor must be positive")


def candidate_rng(base_seed: int, candidate_index: int) -> np.random.Generator:
    return np.random.default_rng((int(base_seed) ^ int(candidate_index))
                                 & 0xFFFFFFFFFFFFFFFF)


# ---------------------------------------------------------------------------
# classical criteria
# ---------------------------------------------------------------------------

def imspe_from_traces(traces: np.ndarray, n_pred_coords: int) -> float:
    """Posterior-averaged trace of the conditioned predictive covariance,
    normalized by the number of prediction coordinates."""
    return float(np.mean(traces) / n_pred_coords)


def maximin(candidate_point: np.ndarray,
            selected_points: Sequence[np.ndarray]) -> float:
    """Minimum Euclidean distance to the selected set (+inf when empty)."""
    pts = np.atleast_2d(np.asarray(selected_points, dtype=float)) \
        if len(selected_points) else None
    if pts is None or pts.size == 0:
        return math.inf
    diff = pts - np.asarray(candidate_point, dtype=float).ravel()[None, :]
    return float(np.sqrt(np.sum(diff * diff, axis=1)).min())


def fisher_information_from_moments(moments_fn, theta: np.ndarray,
                                    steps: np.ndarray) -> np.ndarray:
    """Fisher information of ``theta`` for a Gaussian observation model.

    ``moments_fn(theta) -> (mu, sigma)`` supplies the observation moments;
    derivatives are central finite differences with per-coordinate
    ``steps``.  Entry (i, j) is the usual mean-derivative quadratic form
    plus half the trace of the paired covariance-derivative products.
    """
    theta = np.asarray(theta, dtype=float)
    h = theta.shape[0]
    mu0, sig0 = moments_fn(theta)
    spd = SpdMatrix(np.asarray(sig0, dtype=float))

    d_mu, d_sig = [], []
    for i in range(h):
        th_p = theta.copy()
        th_m = theta.copy()
        th_p[i] += steps[i]
        th_m[i] -= steps[i]
        mu_p, sig_p = moments_fn(th_p)
        mu_m, sig_m = moments_fn(th_m)
        d_mu.append((np.asarray(mu_p) - np.asarray(mu_m)) / (2.0 * steps[i]))
        d_sig.append((np.asarray(sig_p) - np.asarray(sig_m))
                     / (2.0 * steps[i]))
        if not (np.all(np.isfinite(d_mu[-1]))
                and np.all(np.isfinite(d_sig[-1]))):
            raise DerivativeFailure(f"non-finite derivative for theta[{i}]")

    sol_mu = [spd.solve(dm) for dm in d_mu]
    w = [spd.solve(ds) for ds in d_sig]
    fim = np.empty((h, h))
    for i in range(h):
        for j in range(i, h):
            val = float(d_mu[i] @ sol_mu[j]) \
                + 0.5 * float(np.sum(w[i] * w[j].T))
            fim[i, j] = fim[j, i] = val
    return fim


def fisher_information(state: KohModelState, omega: PosteriorSample,
                       extra_field_points: Optional[np.ndarray],
                       fd_rel: float = 1e-4) -> np.ndarray:
    """Fisher information for one posterior draw with the candidate (and any
    selected points) appended to the observation rows."""
    box = state.model_def.theta_box
    steps = fd_rel * (box[:, 1] - box[:, 0])

    def moments_fn(theta):
        return observation_moments(
            state, PosteriorSample(theta, omega.phi2, omega.sigma2),
            extra_field_points)

    return fisher_information_from_moments(moments_fn, omega.theta, steps)


def d_optimality_from_fims(fims: Sequence[np.ndarray]) -> float:
    """log det of the averaged information matrix (average first)."""
    avg = np.mean(np.stack([np.asarray(f, dtype=float) for f in fims]),
                  axis=0)
    sign, logdet = np.linalg.slogdet(avg)
    if sign <= 0:
        return -math.inf
    return float(logdet)


def d_optimality(state: KohModelState, extra_field_points,
                 posterior: Sequence[PosteriorSample],
                 fd_rel: float = 1e-4) -> float:
    """Posterior-averaged D-optimality of one hypothetical design."""
    return d_optimality_from_fims(
        [fisher_information(state, omega, extra_field_points, fd_rel)
         for omega in posterior])


# ---------------------------------------------------------------------------
# mutual information (nested Monte Carlo)
# ---------------------------------------------------------------------------

def nmc_log_density_terms(outer_pts: np.ndarray, mixture: GaussianMixture,
                          n_pred: int, tau: float) -> np.ndarray:
    """Per-outer-sample terms log p_joint - log p_star - log p_new.

    ``outer_pts`` is (S, D) over the stacked (prediction, new-observation)
    vector whose first ``n_pred`` coordinates are the prediction block.
    Each density is the full inner mixture average, floored at ``tau``
    before the log.
    """
    pts = np.atleast_2d(np.asarray(outer_pts, dtype=float))
    s, dim = pts.shape
    if dim != mixture.dim:
        raise ValueError("outer points and mixture dimension disagree")
    p_new = dim - n_pred
    chols = mixture.chols()
    log_w = np.log(mixture.weights)
    lp_joint = np.full(s, -np.inf)
    lp_star = np.full(s, -np.inf)
    lp_new = np.full(s, -np.inf)

    for k in range(mixture.n_components):
        chol = chols[k]
        z = triangular_solve(chol, (pts - mixture.means[k]).T)
        qf_joint = np.sum(z * z, axis=0)
        qf_star = np.sum(z[:n_pred] * z[:n_pred], axis=0)
        ld_half = np.log(np.diag(chol))
        lj = (log_w[k] - 0.5 * dim * _LOG_2PI - np.sum(ld_half) -
              0.5 * qf_joint)
        ls = (log_w[k] - 0.5 * n_pred * _LOG_2PI - np.sum(ld_half[:n_pred]) -
              0.5 * qf_star)
        np.logaddexp(lp_joint, lj, out=lp_joint)
        np.logaddexp(lp_star, ls, out=lp_star)

        new_cov = mixture.covs[k][n_pred:, n_pred:]
        spd = SpdMatrix(np.atleast_2d(new_cov))
        zn = triangular_solve(spd.chol, (pts[:, n_pred:]
                                         - mixture.means[k][n_pred:]).T)
        ln = (log_w[k] - 0.5 * p_new * _LOG_2PI - 0.5 * spd.logdet() -
              0.5 * np.sum(zn * zn, axis=0))
        np.logaddexp(lp_new, ln, out=lp_new)

    floor = math.log(tau)
    terms = (np.maximum(lp_joint, floor) - np.maximum(lp_star, floor)
             - np.maximum(lp_new, floor))
    if not np.all(np.isfinite(terms)):
        raise NumericalFailure("non-finite nested-MC density term")
    return terms


def mi_nmc(joint_mixture: GaussianMixture, n_pred: int, cfg: NmcConfig,
           rng: Optional[np.random.Generator] = None,
           return_se: bool = False):
    """Nested-MC mutual information between the prediction block and the
    trailing new-observation block of the joint mixture.

    Outer samples draw a component index by weight and one Gaussian draw;
    inner densities average over all components.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    pts, _ = joint_mixture.sample(cfg.outer_s, rng)
    terms = nmc_log_density_terms(pts, joint_mixture, n_pred,
                                  cfg.density_floor_tau)
    est = float(np.mean(terms))
    if return_se:
        se = float(np.std(terms, ddof=1) / math.sqrt(len(terms)))
        return est, se
    return est


def mi_scores_shared(mix: GaussianMixture, n_pred: int,
                     cand_cols: Sequence[int], cfg: NmcConfig,
                     rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Single-output batch scorer: MI estimates for every candidate column
    of one mixture over (prediction grid, all candidates).

    Outer draws are shared across candidates (same component indices and
    normal variates), which removes Monte-Carlo noise from the candidate
    comparison; each candidate still receives a valid draw from its own
    joint law.  Only the prediction-block solve per component is O(n^2 S);
    per-candidate work is linear.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    cand_cols = np.asarray(cand_cols, dtype=int)
    m = cand_cols.shape[0]
    s = cfg.outer_s
    k_comp = mix.n_components
    pred = np.arange(n_pred)
    log_w = np.log(mix.weights)
    eye = np.eye(n_pred)

    # per-component conditional geometry of each candidate coordinate;
    # factors are inverted once so every later solve is a plain matmul
    l_inv = np.empty((k_comp, n_pred, n_pred))
    w_cond = np.empty((k_comp, m, n_pred))
    s_cond = np.empty((k_comp, m))
    mu_pred = mix.means[:, pred]
    mu_cand = mix.means[:, cand_cols]
    logdet_half = np.empty(k_comp)
    var_marg = np.empty((k_comp, m))
    for k in range(k_comp):
        cov = mix.covs[k]
        chol, _ = cholesky(cov[np.ix_(pred, pred)])
        logdet_half[k] = float(np.sum(np.log(np.diag(chol))))
        l_inv[k] = solve_triangular(chol, eye, lower=True,
                                    check_finite=False)
        w = l_inv[k] @ cov[np.ix_(pred, cand_cols)]
        w_cond[k] = w.T
        d = cov[cand_cols, cand_cols]
        if np.any(d <= 0):
            raise NumericalFailure("candidate marginal variance <= 0")
        s2 = d - np.sum(w * w, axis=0)
        # strongly determined candidates can cancel to rounding error
        s_cond[k] = np.sqrt(np.maximum(s2, 1e-12 * d))
        var_marg[k] = d

    # shared outer draws
    comp = rng.choice(k_comp, size=s, p=mix.weights)
    z1 = rng.standard_normal((n_pred, s))
    z2 = rng.standard_normal(s)
    y_star = np.empty((n_pred, s))
    y_new = np.empty((m, s))
    order = np.argsort(comp, kind="stable")
    bounds = np.searchsorted(comp[order], np.arange(k_comp + 1))
    for k in range(k_comp):
        sel = order[bounds[k]:bounds[k + 1]]
        if sel.size == 0:
            continue
        # L z = (L^-1)^-1 z; the inverse factor is itself lower-triangular
        draw = solve_triangular(l_inv[k], z1[:, sel], lower=True,
                                check_finite=False)
        y_star[:, sel] = mu_pred[k][:, None] + draw
        y_new[:, sel] = (mu_cand[k][:, None]
                         + w_cond[k] @ z1[:, sel]
                         + s_cond[k][:, None] * z2[sel][None, :])

    # density accumulation over components
    acc_joint = np.empty((m, s))
    acc_new = np.empty((m, s))
    acc_star = np.full(s, -np.inf)
    with _blas_single_threaded():
        for k in range(k_comp):
            z = l_inv[k] @ (y_star - mu_pred[k][:, None])
            qf = np.einsum("ij,ij->j", z, z)
            np.logaddexp(acc_star,
                         log_w[k] - 0.5 * n_pred * _LOG_2PI - logdet_half[k]
                         - 0.5 * qf, out=acc_star)
            z_row = w_cond[k] @ z
            mi_accumulate(acc_joint, acc_new, log_w[k], qf, logdet_half[k],
                          z_row, y_new, mu_cand[k], s_cond[k], mu_cand[k],
                          var_marg[k], n_pred, init=(k == 0))

    floor = math.log(cfg.density_floor_tau)
    np.maximum(acc_joint, floor, out=acc_joint)
    np.maximum(acc_new, floor, out=acc_new)
    np.maximum(acc_star, floor, out=acc_star)
    terms = acc_joint - acc_new - acc_star[None, :]
    if not np.all(np.isfinite(terms)):
        raise NumericalFailure("non-finite nested-MC density term")
    return terms.mean(axis=1)


# ---------------------------------------------------------------------------
# local complexity
# ---------------------------------------------------------------------------

def local_slopes(points: np.ndarray, mean_fn, bounds: np.ndarray,
                 fd_rel: float = 1e-3) -> np.ndarray:
    """Frobenius norm of the finite-difference Jacobian of the averaged
    predictive mean at each point (all outputs flattened).

    ``mean_fn`` maps (k, d) points to (k, p) means.  Differences are
    central in the interior and one-sided against the domain box edges.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = pts.shape
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    steps = fd_rel * (bounds[:, 1] - bounds[:, 0])
    if np.any(steps <= 0):
        raise ValueError("finite-difference step underflow")

    plus = np.repeat(pts[:, None, :], d, axis=1)
    minus = plus.copy()
    for j in range(d):
        plus[:, j, j] = np.minimum(pts[:, j] + steps[j], bounds[j, 1])
        minus[:, j, j] = np.maximum(pts[:, j] - steps[j], bounds[j, 0])
    stacked = np.vstack([plus.reshape(n * d, d), minus.reshape(n * d, d)])
    vals = np.asarray(mean_fn(stacked), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    v_plus = vals[:n * d].reshape(n, d, -1)
    v_minus = vals[n * d:].reshape(n, d, -1)
    denom = (plus - minus).reshape(n, d, d)[:, np.arange(d), np.arange(d)]
    jac = (v_plus - v_minus) / denom[:, :, None]
    return np.sqrt(np.sum(jac * jac, axis=(1, 2)))


def slope_change(points: np.ndarray, slopes: np.ndarray, k_neighbors: int):
    """Mean absolute slope difference to the k nearest candidates.

    Returns ``(values, used_k)``; when fewer than ``k_neighbors`` other
    candidates exist, all of them are used and ``used_k`` records it.
    Equidistant neighbors break toward the lower index.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    g = np.asarray(slopes, dtype=float).ravel()
    n = pts.shape[0]
    used_k = min(k_neighbors, n - 1)
    if used_k < 1:
        return np.zeros(n), 0
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    np.fill_diagonal(dist, np.inf)
    nbrs = np.argsort(dist, axis=1, kind="stable")[:, :used_k]
    out = np.mean(np.abs(g[:, None] - g[nbrs]), axis=1)
    return out, used_k


def _minmax(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    lo, hi = float(np.min(v)), float(np.max(v))
    if hi - lo <= 0:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def composite_complexity(g: np.ndarray, s: np.ndarray,
                         cfg: ComplexityConfig) -> np.ndarray:
    """Weighted blend of min-max normalized slope and slope-change scores."""
    g = np.asarray(g, dtype=float)
    s = np.asarray(s, dtype=float)
    if g.shape != s.shape:
        raise ValueError("slope and slope-change vectors differ in length")
    return cfg.w_g * _minmax(g) + cfg.w_s * _minmax(s)


def hybrid(raw: np.ndarray, complexity: np.ndarray, alpha: float,
           direction: str, normalize_raw: bool = True) -> np.ndarray:
    """(1 - alpha) x normalized criterion + alpha x complexity, maximized.

    Minimized criteria are sign-flipped before normalization.  With
    ``normalize_raw=False`` the raw values enter the blend unscaled (the
    literal published form, which makes alpha unit-dependent).
    """
    raw = np.asarray(raw, dtype=float)
    adj = -raw if direction == MINIMIZE else raw
    if normalize_raw:
        adj = _minmax(adj)
    return (1.0 - alpha) * adj + alpha * np.asarray(complexity, dtype=float)


def select_best(scores: Sequence[float], direction: str = MAXIMIZE,
                indices: Optional[Sequence[int]] = None) -> int:
    """Deterministic argmax/argmin with ties broken by lowest index."""
    vals = np.asarray(scores, dtype=float)
    if indices is None:
        indices = np.arange(len(vals))
    indices = np.asarray(indices, dtype=int)
    finite = np.isfinite(vals) if direction == MINIMIZE else vals > -np.inf
    finite &= ~np.isnan(vals)
    if not np.any(finite):
        raise SelectionFailure("no candidate has a finite score")
    keyed = vals.copy()
    if direction == MINIMIZE:
        keyed[~finite] = np.inf
        best = int(np.argmin(keyed))
    else:
        keyed[~finite] = -np.inf
        best = int(np.argmax(keyed))
    return int(indices[best])
