"""Quadratic-cost covariance updates for sequential selection.

Covariance-based criteria need the predictive covariance after each
hypothetical selection.  Rebuilding and re-inverting the observation block
every round is cubic; this module keeps the running inverse and extends it
with a Schur-complement block update, then downdates the predictive
covariance (or just its trace) with the matching rank-one term.

New points are prepended to the observation block; ``index_map`` on the
precomputed covariance hides the layout from callers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .errors import ConditioningError, NumericalFailure, PrecomputeTooLarge
from .linalg import SpdMatrix

DUPLICATE_TOL = 1e-12


@dataclass
class PrecomputedCovariance:
    """Dense prior covariance over prediction, candidate and observation rows
    for one posterior sample, with the row-role bookkeeping needed to slice
    any block without recomputation."""

    full: np.ndarray
    index_map: Dict[str, np.ndarray]

    def block(self, rows: str, cols: str) -> np.ndarray:
        r = self.index_map[rows]
        c = self.index_map[cols]
        return self.full[np.ix_(r, c)]

    def rows(self, rows: str, idx: np.ndarray) -> np.ndarray:
        return self.full[np.ix_(self.index_map[rows], idx)]


@dataclass
class FlopCounter:
    """Symbolic operation counter for the complexity checks."""

    ops: float = 0.0

    def add(self, n: float):
        self.ops += float(n)


@dataclass
class UpdateContext:
    """Running state of the fast path for one posterior sample."""

    sigma_oo_inv: np.ndarray           # (N_o, N_o)
    cross: np.ndarray                  # (n_targets, N_o) prior cov targets x obs
    sigma_star: np.ndarray | None = None   # (n_targets, n_targets) conditioned
    round: int = 0
    counter: FlopCounter = field(default_factory=FlopCounter)

    def clone(self) -> "UpdateContext":
        return UpdateContext(self.sigma_oo_inv.copy(), self.cross.copy(),
                             None if self.sigma_star is None
                             else self.sigma_star.copy(),
                             self.round, FlopCounter(self.counter.ops))


def check_memory(total_dim: int, n_samples: int, limit_bytes: float = 2e9):
    """Guard against materializing an oversized joint covariance."""
    need = 8.0 * total_dim * total_dim * max(1, n_samples)
    if need > limit_bytes:
        raise PrecomputeTooLarge(
            f"joint covariance would need {need / 1e9:.2f} GB "
            f"(limit {limit_bytes / 1e9:.2f} GB)")


def schur_extend(ctx: UpdateContext, a: np.ndarray, b: float
                 ) -> Tuple[np.ndarray, np.ndarray, float]:
    """Extend the cached observation-block inverse with one new point.

    ``a`` is the prior covariance between the new point and the current
    observation rows; ``b`` its prior self-variance.  Returns
    ``(new_inverse, u, lam)`` with the new point prepended.  Raises
    :class:`ConditioningError` when the conditional variance is not
    positive (a near-duplicate of an existing row).
    """
    a = np.asarray(a, dtype=float).ravel()
    n = ctx.sigma_oo_inv.shape[0]
    if a.shape[0] != n:
        raise ValueError(f"cross-covariance has length {a.shape[0]}, "
                         f"observation block is {n}")
    u = ctx.sigma_oo_inv @ a
    cond_var = float(b - a @ u)
    if cond_var <= DUPLICATE_TOL * abs(b):
        raise ConditioningError(
            f"conditional variance {cond_var:.3e} <= tolerance; "
            "point duplicates an existing row")
    lam = 1.0 / cond_var
    out = np.empty((n + 1, n + 1))
    out[0, 0] = lam
    out[0, 1:] = -lam * u
    out[1:, 0] = -lam * u
    out[1:, 1:] = ctx.sigma_oo_inv + lam * np.outer(u, u)
    ctx.counter.add(n * n + 2 * n)
    return out, u, lam


def rank_one_vector(ctx: UpdateContext, cross_new: np.ndarray,
                    u: np.ndarray) -> np.ndarray:
    """Information vector v = Sigma_{targets,new} - Sigma_{targets,obs} u."""
    v = np.asarray(cross_new, dtype=float).ravel() - ctx.cross @ u
    ctx.counter.add(ctx.cross.shape[0] * ctx.cross.shape[1])
    return v


def rank_one_predictive(ctx: UpdateContext, v: np.ndarray, lam: float
                        ) -> np.ndarray:
    """Downdated predictive covariance ``Sigma* - lam v v^T``."""
    if ctx.sigma_star is None:
        raise ValueError("context has no materialized predictive covariance")
    out = ctx.sigma_star - lam * np.outer(v, v)
    ctx.counter.add(v.shape[0] ** 2)
    diag = np.diag(out)
    scale = max(1.0, float(np.max(np.abs(np.diag(ctx.sigma_star)))))
    if np.min(diag) < -1e-8 * scale:
        raise NumericalFailure(
            f"rank-one downdate left a negative variance {np.min(diag):.3e}")
    return out


def trace_after_update(ctx: UpdateContext, v_pred: np.ndarray, lam: float,
                       current_trace: float) -> float:
    """tr(Sigma*) after the downdate, without forming the outer product."""
    drop = lam * float(v_pred @ v_pred)
    ctx.counter.add(v_pred.shape[0])
    if drop < -1e-12 * max(1.0, abs(current_trace)):
        raise NumericalFailure("trace downdate is negative")
    return current_trace - drop


def commit_extension(ctx: UpdateContext, new_inv: np.ndarray,
                     cross_new: np.ndarray, v: np.ndarray | None,
                     lam: float | None):
    """Adopt an extension: prepend the new point's column to ``cross`` and
    downdate the materialized predictive covariance when present."""
    ctx.sigma_oo_inv = new_inv
    ctx.cross = np.hstack([np.asarray(cross_new, dtype=float).reshape(-1, 1),
                           ctx.cross])
    if ctx.sigma_star is not None and v is not None and lam is not None:
        ctx.sigma_star = ctx.sigma_star - lam * np.outer(v, v)
    ctx.round += 1


def dense_conditional(prior_tt: np.ndarray, prior_to: np.ndarray,
                      prior_oo: np.ndarray) -> np.ndarray:
    """Reference path: conditional covariance by explicit factorization."""
    spd = SpdMatrix(prior_oo)
    w = spd.solve(prior_to.T)
    return prior_tt - prior_to @ w
