"""Covariance kernels and dense linear-algebra primitives.

Everything downstream (model blocks, predictive updates, mixture
compression) assembles its matrices through this module, so the jitter and
factorization conventions live in exactly one place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite, Singular

RBF = "rbf"
PERIODIC = "periodic"
PRODUCT_RBF_PERIODIC = "product_rbf_periodic"
KRONECKER = "kronecker_multi_output"

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KernelSpec:
    """Hyperparameters of one covariance kernel.

    ``lengthscales`` carries one positive scale per active input dimension
    (the RBF factor for the product family).  The periodic factor of the
    product family has its own ``periodic_lengthscale``.  The Kronecker
    family wraps a base input kernel with a p x p symmetric PSD
    ``task_covariance`` over output dimensions.
    """

    family: str
    lengthscales: np.ndarray
    variance: float = 1.0
    period: Optional[float] = None
    periodic_lengthscale: Optional[float] = None
    task_covariance: Optional[np.ndarray] = None
    base: Optional["KernelSpec"] = None

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if self.family != KRONECKER:
            if np.any(ls <= 0):
                raise ValueError("lengthscales must be positive")
            if self.variance <= 0:
                raise ValueError("variance must be positive")
        if self.family in (PERIODIC, PRODUCT_RBF_PERIODIC):
            if self.period is None or self.period <= 0:
                raise ValueError("period must be positive")
        if self.family == PRODUCT_RBF_PERIODIC:
            if self.periodic_lengthscale is None or self.periodic_lengthscale <= 0:
                raise ValueError("periodic_lengthscale must be positive")
        if self.family == KRONECKER:
            if self.base is None:
                raise ValueError("Kronecker kernel needs a base input kernel")
            b = np.asarray(self.task_covariance, dtype=float)
            if b.ndim != 2 or b.shape[0] != b.shape[1]:
                raise ValueError("task_covariance must be square")
            if not np.allclose(b, b.T, rtol=1e-12, atol=1e-12):
                raise ValueError("task_covariance must be symmetric")
            if np.min(np.linalg.eigvalsh(b)) < -1e-10 * max(1.0, np.trace(b)):
                raise ValueError("task_covariance must be PSD")
            object.__setattr__(self, "task_covariance", b)

    @property
    def n_tasks(self) -> int:
        if self.family == KRONECKER:
            return self.task_covariance.shape[0]
        return 1

    @property
    def input_dim(self) -> int:
        if self.family == KRONECKER:
            return self.base.input_dim
        return self.lengthscales.shape[0]


def _as_points(a, dim=None):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DimensionMismatch(f"points must be 2-D, got shape {a.shape}")
    if dim is not None and a.shape[1] != dim:
        raise DimensionMismatch(
            f"points have dimension {a.shape[1]}, kernel expects {dim}")
    return a


def _sq_dists(a, b, scales):
    # sum_k ((a_ik - b_jk) / s_k)^2 without forming the (n,m,d) tensor
    aw = a / scales
    bw = b / scales
    sq = (np.sum(aw * aw, axis=1)[:, None]
          + np.sum(bw * bw, axis=1)[None, :]
          - 2.0 * aw @ bw.T)
    np.maximum(sq, 0.0, out=sq)
    return sq


def kernel_matrix(spec: KernelSpec, a, b) -> np.ndarray:
    """Dense covariance matrix k(a_i, b_j).

    For the Kronecker family the result is the full (p*|A|) x (p*|B|)
    expansion, task-major: ``kron(task_covariance, base_kernel(A, B))``.
    """
    if spec.family == KRONECKER:
        inner = kernel_matrix(spec.base, a, b)
        return np.kron(spec.task_covariance, inner) * spec.variance

    a = _as_points(a, spec.input_dim)
    b = _as_points(b, spec.input_dim)

    if spec.family == RBF:
        sq = _sq_dists(a, b, spec.lengthscales)
        return spec.variance * np.exp(-0.5 * sq)

    if spec.family == PERIODIC:
        out = np.ones((a.shape[0], b.shape[0]))
        for k in range(a.shape[1]):
            d = a[:, k][:, None] - b[None, :, k]
            s = np.sin(np.pi * d / spec.period)
            out *= np.exp(-2.0 * s * s / spec.lengthscales[k] ** 2)
        return spec.variance * out

    if spec.family == PRODUCT_RBF_PERIODIC:
        sq = _sq_dists(a, b, spec.lengthscales)
        out = np.exp(-0.5 * sq)
        ell_p = spec.periodic_lengthscale
        for k in range(a.shape[1]):
            d = a[:, k][:, None] - b[None, :, k]
            s = np.sin(np.pi * d / spec.period)
            out *= np.exp(-2.0 * s * s / ell_p ** 2)
        return spec.variance * out

    raise ValueError(f"unknown kernel family: {spec.family}")


def cholesky(mat: np.ndarray, base_jitter: float = 0.0):
    """Lower factor of ``mat + jitter * I`` with geometric jitter escalation.

    Starts at ``base_jitter`` (or 1e-10 * mean diagonal when zero), escalates
    x10 per failed attempt, and gives up at 1e-4 * mean diagonal.

    Returns ``(L, jitter_used)``; raises :class:`NotPositiveDefinite` at the
    cap.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch("cholesky needs a square matrix")
    try:
        return np.linalg.cholesky(mat), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(mat)))
    if scale <= 0:
        scale = 1.0
    jitter = base_jitter if base_jitter > 0 else 1e-10 * scale
    cap = 1e-4 * scale
    eye = np.eye(mat.shape[0])
    while jitter <= cap:
        try:
            return np.linalg.cholesky(mat + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NotPositiveDefinite(
        f"factorization failed at jitter cap {cap:.3e} (dim {mat.shape[0]})")


def triangular_solve(chol_factor: np.ndarray, rhs: np.ndarray, *,
                     trans: bool = False) -> np.ndarray:
    """Solve ``L x = rhs`` (or ``L^T x = rhs`` with ``trans``) for lower L."""
    chol_factor = np.asarray(chol_factor, dtype=float)
    if np.any(np.diag(chol_factor) == 0.0):
        raise Singular("triangular factor has a zero diagonal element")
    return solve_triangular(chol_factor, rhs, lower=True, trans=1 if trans else 0,
                            check_finite=False)


@dataclass
class SpdMatrix:
    """Symmetric PSD matrix with a cached, write-once Cholesky factor."""

    mat: np.ndarray
    base_jitter: float = 0.0
    _chol: Optional[np.ndarray] = field(default=None, repr=False)
    jitter_used: float = 0.0

    def __post_init__(self):
        self.mat = np.asarray(self.mat, dtype=float)
        if self.mat.ndim != 2 or self.mat.shape[0] != self.mat.shape[1]:
            raise DimensionMismatch("SpdMatrix needs a square matrix")
        scale = max(1.0, float(np.max(np.abs(self.mat))))
        if np.max(np.abs(self.mat - self.mat.T)) > 1e-12 * scale:
            raise DimensionMismatch("matrix is not symmetric to 1e-12 relative")
        self.mat = 0.5 * (self.mat + self.mat.T)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    @property
    def chol(self) -> np.ndarray:
        if self._chol is None:
            self._chol, self.jitter_used = cholesky(self.mat, self.base_jitter)
        return self._chol

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        y = triangular_solve(self.chol, rhs)
        return triangular_solve(self.chol, y, trans=True)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.dim))


def mvn_logpdf(x, mean, cov) -> float:
    """Exact Gaussian log-density via Cholesky.

    ``cov`` may be an :class:`SpdMatrix` or a plain array.
    """
    x = np.asarray(x, dtype=float).ravel()
    mean = np.asarray(mean, dtype=float).ravel()
    if x.shape != mean.shape:
        raise DimensionMismatch("x and mean must have the same length")
    spd = cov if isinstance(cov, SpdMatrix) else SpdMatrix(np.atleast_2d(cov))
    if spd.dim != x.shape[0]:
        raise DimensionMismatch("covariance dimension does not match x")
    z = triangular_solve(spd.chol, x - mean)
    return -0.5 * (x.shape[0] * _LOG_2PI + spd.logdet() + float(z @ z))


def mvn_logpdf_many(xs: np.ndarray, mean: np.ndarray, chol_factor: np.ndarray,
                    logdet: float) -> np.ndarray:
    """Gaussian log-density of each row of ``xs`` given a cached factor."""
    z = triangular_solve(chol_factor, (xs - mean[None, :]).T)
    qf = np.sum(z * z, axis=0)
    d = mean.shape[0]
    return -0.5 * (d * _LOG_2PI + logdet + qf)
