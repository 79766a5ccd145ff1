"""Two-stage calibration model, its MCMC posterior, and predictive equations.

The joint field + simulator response is Gaussian with a block covariance:
an emulator kernel over (design, calibration) inputs covering every pair of
rows, a discrepancy kernel over design inputs covering field-type pairs
only, and observation noise on the field diagonal.  Field-type rows (field
data, selected designs, prediction points) carry the emulator prior mean
evaluated at the current calibration setting; simulator rows have mean
zero.

Stage-1 (emulator) hyperparameters are fitted once against simulator data
and frozen at their transformed-space posterior mean; the sampled parameter
bundle is (calibration vector, discrepancy hyperparameters, noise
variance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, MixingFailure, NotPositiveDefinite
from .linalg import KernelSpec, SpdMatrix, kernel_matrix, mvn_logpdf
from .mixture import GaussianMixture

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# parameter descriptions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamSpec:
    """One scalar hyperparameter: its transform and transformed-space prior.

    ``log`` parameters are positive (sampled as log x with a normal prior,
    i.e. log-normal); ``atanh`` parameters live in (-1, 1); ``identity``
    parameters are unconstrained.
    """

    name: str
    transform: str = "log"
    prior_mu: float = 0.0
    prior_sd: float = 1.5
    init: float = 1.0

    def to_transformed(self, value: float) -> float:
        if self.transform == "log":
            return math.log(value)
        if self.transform == "atanh":
            return math.atanh(value)
        return value

    def from_transformed(self, z: float) -> float:
        if self.transform == "log":
            return math.exp(z)
        if self.transform == "atanh":
            return math.tanh(z)
        return z

    def log_prior(self, z: float) -> float:
        r = (z - self.prior_mu) / self.prior_sd
        return -0.5 * r * r


@dataclass(frozen=True)
class ModelDefinition:
    """Static description of one calibration problem: input dimensions,
    calibration prior box, and the kernel builders for both stages."""

    name: str
    d: int
    h: int
    p_out: int
    theta_box: np.ndarray                       # (h, 2)
    stage1_specs: Tuple[ParamSpec, ...]
    stage1_builder: Callable[[np.ndarray], KernelSpec]
    phi2_specs: Tuple[ParamSpec, ...]
    stage2_builder: Callable[[np.ndarray], KernelSpec]
    sigma2_spec: ParamSpec = ParamSpec("sigma2", "log", -3.0, 1.0, 0.05)

    def theta_width(self) -> np.ndarray:
        return self.theta_box[:, 1] - self.theta_box[:, 0]


@dataclass(frozen=True)
class PosteriorSample:
    """One draw of the sampled parameter bundle."""

    theta: np.ndarray
    phi2: np.ndarray
    sigma2: float


@dataclass
class KohData:
    """Field and simulator training data.

    Responses may be (n,) for one output or (n, p) for p outputs; all
    internal linear algebra uses task-major flattening (output 0 at every
    row, then output 1, ...).
    """

    x_p: np.ndarray
    y_p: np.ndarray
    x_c: np.ndarray
    t: np.ndarray
    y_s: np.ndarray

    def __post_init__(self):
        self.x_p = np.atleast_2d(np.asarray(self.x_p, dtype=float))
        self.x_c = np.atleast_2d(np.asarray(self.x_c, dtype=float))
        self.t = np.atleast_2d(np.asarray(self.t, dtype=float))
        self.y_p = np.asarray(self.y_p, dtype=float)
        self.y_s = np.asarray(self.y_s, dtype=float)
        if self.x_p.shape[0] < 1 or self.x_c.shape[0] < 1:
            raise DimensionMismatch("need at least one field and one simulator row")
        if self.x_p.shape[1] != self.x_c.shape[1]:
            raise DimensionMismatch("field and simulator design dims differ")
        if self.t.shape[0] != self.x_c.shape[0]:
            raise DimensionMismatch("calibration settings must match simulator rows")
        for arr in (self.x_p, self.y_p, self.x_c, self.t, self.y_s):
            if not np.all(np.isfinite(arr)):
                raise ValueError("data contains NaN or Inf entries")
        if self.y_p.shape[0] != self.x_p.shape[0]:
            raise DimensionMismatch("y_p rows must match x_p")
        if self.y_s.shape[0] != self.x_c.shape[0]:
            raise DimensionMismatch("y_s rows must match x_c")
        if (self.y_p.ndim == 2) != (self.y_s.ndim == 2):
            raise DimensionMismatch("field and simulator outputs disagree on task count")
        if self.y_p.ndim == 2 and self.y_p.shape[1] != self.y_s.shape[1]:
            raise DimensionMismatch("field and simulator outputs disagree on task count")

    @property
    def n(self) -> int:
        return self.x_p.shape[0]

    @property
    def m(self) -> int:
        return self.x_c.shape[0]

    @property
    def d(self) -> int:
        return self.x_p.shape[1]

    @property
    def h(self) -> int:
        return self.t.shape[1]

    @property
    def p_out(self) -> int:
        return self.y_p.shape[1] if self.y_p.ndim == 2 else 1

    def y_p_flat(self) -> np.ndarray:
        return self.y_p.T.ravel() if self.y_p.ndim == 2 else self.y_p

    def y_s_flat(self) -> np.ndarray:
        return self.y_s.T.ravel() if self.y_s.ndim == 2 else self.y_s

    def with_field_row(self, xi: np.ndarray, y_new) -> "KohData":
        xi = np.asarray(xi, dtype=float).reshape(1, -1)
        y_new = np.asarray(y_new, dtype=float)
        if self.y_p.ndim == 2:
            y_new = y_new.reshape(1, -1)
            y_p = np.vstack([self.y_p, y_new])
        else:
            y_p = np.append(self.y_p, float(y_new))
        return KohData(np.vstack([self.x_p, xi]), y_p, self.x_c, self.t,
                       self.y_s)


# ---------------------------------------------------------------------------
# model state
# ---------------------------------------------------------------------------

@dataclass
class KohModelState:
    """Immutable snapshot: data, frozen stage-1 kernel, posterior draws."""

    data: KohData
    model_def: ModelDefinition
    phi1: KernelSpec
    prediction_grid: np.ndarray
    posterior: List[PosteriorSample] = field(default_factory=list)
    _stage1_cache: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        self.prediction_grid = np.atleast_2d(
            np.asarray(self.prediction_grid, dtype=float))

    @property
    def p_out(self) -> int:
        return self.model_def.p_out

    @property
    def n_posterior(self) -> int:
        return len(self.posterior)

    def stage1_cache(self) -> dict:
        """Frozen-emulator training solve, shared by every mean evaluation."""
        if self._stage1_cache is None:
            aug = np.hstack([self.data.x_c, self.data.t])
            k_ss = kernel_matrix(self.phi1, aug, aug)
            spd = SpdMatrix(k_ss, base_jitter=1e-8 * float(np.mean(np.diag(k_ss))))
            alpha = spd.solve(self.data.y_s_flat())
            self._stage1_cache = {"aug": aug, "alpha": alpha, "spd": spd}
        return self._stage1_cache

    def emulator_mean(self, points: np.ndarray, theta: np.ndarray
                      ) -> np.ndarray:
        """Stage-1 posterior mean at (points, theta), task-major flattened."""
        cache = self.stage1_cache()
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        aug = np.hstack([pts, np.tile(theta, (pts.shape[0], 1))])
        k = kernel_matrix(self.phi1, aug, cache["aug"])
        return k @ cache["alpha"]


def make_state(data: KohData, model_def: ModelDefinition, phi1: KernelSpec,
               prediction_grid: np.ndarray) -> KohModelState:
    return KohModelState(data, model_def, phi1, prediction_grid)


# ---------------------------------------------------------------------------
# covariance assembly
# ---------------------------------------------------------------------------

@dataclass
class BlockCovariance:
    """Partitioned joint covariance for one posterior draw."""

    sigma_oo: SpdMatrix
    sigma_star_obs: np.ndarray
    sigma_star_star: np.ndarray
    mu_obs: np.ndarray
    mu_star: np.ndarray


def joint_prior_covariance(state: KohModelState, omega: PosteriorSample,
                           field_pts: np.ndarray,
                           noise_mask: Optional[np.ndarray] = None
                           ) -> np.ndarray:
    """Prior covariance over (field-type points, simulator rows).

    ``field_pts`` stacks every field-type location (prediction grid,
    candidates, field data, selected designs) in the caller's order; all of
    them receive the discrepancy kernel and, unless masked out, noise on
    the diagonal.  Output is task-major over each group.
    """
    data = state.data
    spec2 = state.model_def.stage2_builder(omega.phi2)
    f = np.atleast_2d(field_pts)
    n_f = f.shape[0]
    aug_f = np.hstack([f, np.tile(omega.theta, (n_f, 1))])
    aug_s = np.hstack([data.x_c, data.t])

    k_ff = kernel_matrix(state.phi1, aug_f, aug_f) + kernel_matrix(spec2, f, f)
    k_fs = kernel_matrix(state.phi1, aug_f, aug_s)
    k_ss = kernel_matrix(state.phi1, aug_s, aug_s)

    p = state.p_out
    dim_f = n_f * p
    if noise_mask is None:
        noise_mask = np.ones(n_f, dtype=bool)
    noise_idx = np.concatenate([np.flatnonzero(noise_mask) + task * n_f
                                for task in range(p)])
    full = np.block([[k_ff, k_fs], [k_fs.T, k_ss]])
    full[noise_idx, noise_idx] += omega.sigma2
    assert full.shape[0] == dim_f + data.m * p
    return full


def observation_moments(state: KohModelState, omega: PosteriorSample,
                        extra_field_points: Optional[np.ndarray] = None
                        ) -> Tuple[np.ndarray, np.ndarray]:
    """Mean vector and observation-block covariance for one draw.

    Row order: extra field points first (newest first is the caller's
    choice), then original field rows, then simulator rows.
    """
    data = state.data
    if extra_field_points is not None and len(extra_field_points):
        extra = np.atleast_2d(np.asarray(extra_field_points, dtype=float))
        field_pts = np.vstack([extra, data.x_p])
    else:
        field_pts = data.x_p
    full = joint_prior_covariance(state, omega, field_pts)
    p = state.p_out
    mu_field = state.emulator_mean(field_pts, omega.theta)
    mu = np.concatenate([mu_field, np.zeros(data.m * p)])
    return mu, full


def assemble_blocks(state: KohModelState, omega: PosteriorSample,
                    extra_field_points: Optional[np.ndarray] = None
                    ) -> BlockCovariance:
    """Full partition (prediction grid | observations) for one draw."""
    data = state.data
    grid = state.prediction_grid
    n_star = grid.shape[0]
    if extra_field_points is not None and len(extra_field_points):
        extra = np.atleast_2d(np.asarray(extra_field_points, dtype=float))
    else:
        extra = np.zeros((0, data.d))
    field_pts = np.vstack([grid, extra, data.x_p])
    full = joint_prior_covariance(state, omega, field_pts)
    p = state.p_out
    n_f = field_pts.shape[0]
    star_idx = np.concatenate([np.arange(n_star) + task * n_f
                               for task in range(p)])
    obs_field_idx = np.concatenate([np.arange(n_star, n_f) + task * n_f
                                    for task in range(p)])
    sim_idx = np.arange(n_f * p, n_f * p + data.m * p)
    obs_idx = np.concatenate([obs_field_idx, sim_idx])

    sigma_star_star = full[np.ix_(star_idx, star_idx)]
    sigma_star_obs = full[np.ix_(star_idx, obs_idx)]
    sigma_oo = SpdMatrix(full[np.ix_(obs_idx, obs_idx)])

    mu_field = state.emulator_mean(field_pts, omega.theta)
    mu_field_mat = mu_field.reshape(p, n_f)
    mu_star = mu_field_mat[:, :n_star].ravel()
    mu_obs = np.concatenate([mu_field_mat[:, n_star:].ravel(),
                             np.zeros(data.m * p)])
    return BlockCovariance(sigma_oo, sigma_star_obs, sigma_star_star,
                           mu_obs, mu_star)


@dataclass
class PredictiveGaussian:
    mean: np.ndarray
    cov: SpdMatrix


def predict(state: KohModelState, omega: PosteriorSample,
            extra_points: Optional[np.ndarray] = None,
            extra_observations: Optional[np.ndarray] = None
            ) -> PredictiveGaussian:
    """Predictive law of the response on the prediction grid.

    Extra points without observations only tighten the covariance (the
    offline-design convention); the mean then conditions on the original
    data alone.  With observations supplied, both moments condition on the
    augmented set.
    """
    data = state.data
    blocks = assemble_blocks(state, omega, extra_points)
    p = state.p_out
    y = np.concatenate([data.y_p_flat(), data.y_s_flat()])

    if extra_points is not None and len(extra_points):
        n_extra = np.atleast_2d(extra_points).shape[0]
        cov = blocks.sigma_star_star - blocks.sigma_star_obs @ blocks.sigma_oo.solve(
            blocks.sigma_star_obs.T)
        if extra_observations is None:
            base = assemble_blocks(state, omega, None)
            resid = y - base.mu_obs
            mean = base.mu_star + base.sigma_star_obs @ base.sigma_oo.solve(resid)
        else:
            y_extra = np.asarray(extra_observations, dtype=float)
            y_extra = y_extra.reshape(n_extra, p).T.ravel() if p > 1 else \
                y_extra.ravel()
            n_field = n_extra + data.n
            y_field = np.concatenate([
                y_extra.reshape(p, n_extra),
                data.y_p_flat().reshape(p, data.n)], axis=1).ravel() \
                if p > 1 else np.concatenate([y_extra, data.y_p_flat()])
            y_aug = np.concatenate([y_field, data.y_s_flat()])
            assert y_aug.shape[0] == (n_field + data.m) * p
            resid = y_aug - blocks.mu_obs
            mean = blocks.mu_star + blocks.sigma_star_obs @ blocks.sigma_oo.solve(resid)
    else:
        resid = y - blocks.mu_obs
        mean = blocks.mu_star + blocks.sigma_star_obs @ blocks.sigma_oo.solve(resid)
        cov = blocks.sigma_star_star - blocks.sigma_star_obs @ blocks.sigma_oo.solve(
            blocks.sigma_star_obs.T)
    return PredictiveGaussian(mean, SpdMatrix(0.5 * (cov + cov.T)))


def predictive_mixture(state: KohModelState,
                       extra_points: Optional[np.ndarray] = None,
                       extra_observations: Optional[np.ndarray] = None
                       ) -> GaussianMixture:
    """Equal-weight mixture of per-draw predictive Gaussians, in draw order."""
    if not state.posterior:
        raise ValueError("posterior has not been fitted")
    j = len(state.posterior)
    means, covs = [], []
    for omega in state.posterior:
        pred = predict(state, omega, extra_points, extra_observations)
        means.append(pred.mean)
        covs.append(pred.cov.mat)
    return GaussianMixture(np.full(j, 1.0 / j), np.stack(means),
                           np.stack(covs))


# ---------------------------------------------------------------------------
# likelihood workspace (hot path for MCMC)
# ---------------------------------------------------------------------------

class LikelihoodWorkspace:
    """Caches every theta-independent piece of the observation likelihood."""

    def __init__(self, state: KohModelState):
        self.state = state
        data = state.data
        spec1 = state.phi1
        base1 = spec1.base if spec1.family == "kronecker_multi_output" else spec1
        self.base1 = base1
        self.p = state.p_out
        self.task1 = (spec1.task_covariance * spec1.variance
                      if spec1.family == "kronecker_multi_output" else None)

        ls = base1.lengthscales
        d = data.d
        xw_p = data.x_p / ls[:d]
        xw_c = data.x_c / ls[:d]
        self.sq_pp_design = self._sq(xw_p, xw_p)
        self.sq_ps_design = self._sq(xw_p, xw_c)
        self.t_scaled = data.t / ls[d:]
        self.ls_calib = ls[d:]
        # simulator block is theta-free
        aug_s = np.hstack([data.x_c, data.t])
        self.k1_ss = kernel_matrix(spec1, aug_s, aug_s)
        self.k1_pp = self._expand(base1.variance * np.exp(-0.5 * self.sq_pp_design))
        self.y = np.concatenate([data.y_p_flat(), data.y_s_flat()])
        self.n, self.m = data.n, data.m
        cache = state.stage1_cache()
        self.alpha1 = cache["alpha"]

    @staticmethod
    def _sq(a, b):
        return (np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :]
                - 2.0 * a @ b.T)

    def _expand(self, block):
        if self.task1 is None:
            return block
        return np.kron(self.task1, block)

    def k1_cross(self, theta: np.ndarray) -> np.ndarray:
        """Stage-1 field x simulator covariance for a calibration vector."""
        tw = theta / self.ls_calib
        calib = np.sum(tw * tw) + np.sum(self.t_scaled ** 2, axis=1) \
            - 2.0 * self.t_scaled @ tw
        block = self.base1.variance * np.exp(
            -0.5 * (self.sq_ps_design + calib[None, :]))
        return self._expand(block)

    def mu_field(self, k1_ps: np.ndarray) -> np.ndarray:
        return k1_ps @ self.alpha1

    def log_likelihood(self, theta, phi2, sigma2) -> float:
        spec2 = self.state.model_def.stage2_builder(phi2)
        k2 = kernel_matrix(spec2, self.state.data.x_p, self.state.data.x_p)
        k1_ps = self.k1_cross(theta)
        n_f = self.n * self.p
        dim = n_f + self.m * self.p
        sig = np.empty((dim, dim))
        sig[:n_f, :n_f] = self.k1_pp + k2
        sig[:n_f, n_f:] = k1_ps
        sig[n_f:, :n_f] = k1_ps.T
        sig[n_f:, n_f:] = self.k1_ss
        sig[np.arange(n_f), np.arange(n_f)] += sigma2
        mu = np.concatenate([self.mu_field(k1_ps), np.zeros(self.m * self.p)])
        try:
            return mvn_logpdf(self.y, mu, SpdMatrix(sig))
        except NotPositiveDefinite:
            return -np.inf


def log_likelihood(state: KohModelState, omega: PosteriorSample) -> float:
    """Observation log-likelihood for one draw (workspace-backed)."""
    ws = LikelihoodWorkspace(state)
    return ws.log_likelihood(omega.theta, omega.phi2, omega.sigma2)


# ---------------------------------------------------------------------------
# adaptive random-walk Metropolis
# ---------------------------------------------------------------------------

@dataclass
class McmcConfig:
    chains: int = 1
    burn_in: int = 2000
    draws: int = 1000
    step_scale: float = 0.2
    seed: int = 0
    adapt_window: int = 50
    target_low: float = 0.2
    target_high: float = 0.4
    max_stall_windows: int = 40


def adaptive_metropolis(logpost: Callable[[np.ndarray], float],
                        x0: np.ndarray, scales: np.ndarray,
                        cfg: McmcConfig, rng: np.random.Generator
                        ) -> Tuple[np.ndarray, dict]:
    """Random-walk Metropolis with burn-in-only global step adaptation.

    Coordinates with zero proposal scale stay pinned at their start value.
    Raises :class:`MixingFailure` after ``max_stall_windows`` consecutive
    adaptation windows without a single accepted move.
    """
    x = np.asarray(x0, dtype=float).copy()
    scales = np.asarray(scales, dtype=float)
    free = scales > 0
    lp = logpost(x)
    if not np.isfinite(lp):
        raise ValueError("log-posterior is not finite at the start point")
    mult = 1.0
    kept = np.empty((cfg.draws, x.shape[0]))
    accepted_window = 0
    stalled = 0
    n_total = cfg.burn_in + cfg.draws
    accepted_total = 0
    for it in range(n_total):
        step = np.zeros_like(x)
        step[free] = rng.standard_normal(int(free.sum())) * scales[free] * mult
        prop = x + step
        lp_prop = logpost(prop)
        if math.log(rng.random()) < lp_prop - lp:
            x, lp = prop, lp_prop
            accepted_window += 1
            accepted_total += 1
        if it >= cfg.burn_in:
            kept[it - cfg.burn_in] = x
        if (it + 1) % cfg.adapt_window == 0:
            rate = accepted_window / cfg.adapt_window
            if accepted_window == 0:
                stalled += 1
                if stalled >= cfg.max_stall_windows:
                    raise MixingFailure(
                        "no proposal accepted over "
                        f"{stalled * cfg.adapt_window} iterations",
                        diagnostics={"iteration": it, "multiplier": mult,
                                     "logpost": lp})
            else:
                stalled = 0
            if it < cfg.burn_in:
                if rate < cfg.target_low:
                    mult = max(mult * 0.7, 1e-6)
                elif rate > cfg.target_high:
                    mult = min(mult * 1.4, 1e3)
            accepted_window = 0
    diag = {"acceptance_rate": accepted_total / n_total, "multiplier": mult}
    return kept, diag


def _pack_stage2(model_def: ModelDefinition, theta, phi2, sigma2):
    z_phi = [s.to_transformed(v) for s, v in zip(model_def.phi2_specs, phi2)]
    return np.concatenate([theta, z_phi,
                           [model_def.sigma2_spec.to_transformed(sigma2)]])


def _unpack_stage2(model_def: ModelDefinition, z):
    h = model_def.h
    theta = z[:h]
    phi2 = np.array([s.from_transformed(v)
                     for s, v in zip(model_def.phi2_specs, z[h:-1])])
    sigma2 = model_def.sigma2_spec.from_transformed(z[-1])
    return theta, phi2, sigma2


def fit_posterior(state: KohModelState, cfg: McmcConfig,
                  warm_start: Optional[PosteriorSample] = None
                  ) -> List[PosteriorSample]:
    """Draw the sampled-parameter posterior by adaptive Metropolis.

    Calibration coordinates use a flat prior on their box (proposals
    falling outside are rejected); positive hyperparameters are sampled in
    log space under their normal priors.  Multiple chains split ``draws``
    evenly and concatenate in chain order.
    """
    model_def = state.model_def
    ws = LikelihoodWorkspace(state)
    box = model_def.theta_box
    width = model_def.theta_width()
    h = model_def.h

    def logpost(z):
        theta = z[:h]
        if np.any(theta < box[:, 0]) or np.any(theta > box[:, 1]):
            return -np.inf
        theta_v, phi2, sigma2 = _unpack_stage2(model_def, z)
        lp = sum(s.log_prior(zv) for s, zv in
                 zip(model_def.phi2_specs, z[h:-1]))
        lp += model_def.sigma2_spec.log_prior(z[-1])
        ll = ws.log_likelihood(theta_v, phi2, sigma2)
        return lp + ll

    if warm_start is not None:
        z0 = _pack_stage2(model_def, warm_start.theta, warm_start.phi2,
                          warm_start.sigma2)
        scale_factor = 0.5 * cfg.step_scale
    else:
        theta0 = 0.5 * (box[:, 0] + box[:, 1])
        phi0 = np.array([s.init for s in model_def.phi2_specs])
        z0 = _pack_stage2(model_def, theta0, phi0,
                          model_def.sigma2_spec.init)
        scale_factor = cfg.step_scale
    scales = np.concatenate([
        width * scale_factor,
        np.full(len(model_def.phi2_specs) + 1, scale_factor)])

    seq = np.random.SeedSequence(cfg.seed)
    child = seq.spawn(cfg.chains)
    per_chain = cfg.draws // cfg.chains
    extras = cfg.draws - per_chain * cfg.chains
    samples: List[PosteriorSample] = []
    for c in range(cfg.chains):
        rng = np.random.default_rng(child[c])
        chain_cfg = replace(cfg, draws=per_chain + (1 if c < extras else 0))
        kept, _ = adaptive_metropolis(logpost, z0, scales, chain_cfg, rng)
        for row in kept:
            theta_v, phi2, sigma2 = _unpack_stage2(model_def, row)
            samples.append(PosteriorSample(theta_v, phi2, sigma2))
    return samples


def fit_stage1(data: KohData, model_def: ModelDefinition, cfg: McmcConfig,
               n_pilots: int = 4) -> List[np.ndarray]:
    """Posterior draws of the emulator hyperparameters from simulator data.

    The marginal-likelihood surface is multimodal; short pilot chains from
    dispersed starts pick the best basin before the main chain runs.
    """
    aug = np.hstack([data.x_c, data.t])
    y = data.y_s_flat()
    specs = model_def.stage1_specs

    def logpost(z):
        params = np.array([s.from_transformed(v) for s, v in zip(specs, z)])
        lp = sum(s.log_prior(zv) for s, zv in zip(specs, z))
        try:
            spec = model_def.stage1_builder(params)
            k = kernel_matrix(spec, aug, aug)
            k[np.diag_indices_from(k)] += 1e-8 * float(np.mean(np.diag(k)))
            return lp + mvn_logpdf(y, np.zeros_like(y), SpdMatrix(k))
        except (NotPositiveDefinite, ValueError):
            return -np.inf

    z_init = np.array([s.to_transformed(s.init) for s in specs])
    scales = np.full(len(specs), cfg.step_scale)
    rng = np.random.default_rng(cfg.seed)

    best_z, best_lp = z_init, logpost(z_init)
    pilot_cfg = replace(cfg, burn_in=150, draws=100)
    for p in range(max(1, n_pilots)):
        start = z_init if p == 0 else z_init + rng.normal(0.0, 1.0,
                                                          z_init.shape)
        if not np.isfinite(logpost(start)):
            continue
        kept, _ = adaptive_metropolis(logpost, start, scales, pilot_cfg, rng)
        tail = kept[-20:].mean(axis=0)
        lp_tail = logpost(tail)
        if lp_tail > best_lp:
            best_z, best_lp = tail, lp_tail

    kept, _ = adaptive_metropolis(logpost, best_z, scales, cfg, rng)
    return [row for row in kept]


def freeze_phi1(model_def: ModelDefinition,
                stage1_samples: Sequence[np.ndarray]) -> KernelSpec:
    """Freeze the emulator kernel at the transformed-space posterior mean
    (for positive parameters: the exponentiated mean of the logs)."""
    if len(stage1_samples) == 0:
        raise ValueError("no stage-1 samples to freeze")
    z_mean = np.mean(np.stack(stage1_samples), axis=0)
    params = np.array([s.from_transformed(v)
                       for s, v in zip(model_def.stage1_specs, z_mean)])
    return model_def.stage1_builder(params)


def append_observation(state: KohModelState, xi: np.ndarray, y_new,
                       cfg: McmcConfig, warm_start: bool = True
                       ) -> KohModelState:
    """New state with (xi, y_new) appended to the field data and the
    posterior refitted; the input state is left untouched."""
    new_data = state.data.with_field_row(xi, y_new)
    new_state = KohModelState(new_data, state.model_def, state.phi1,
                              state.prediction_grid)
    warm = None
    if warm_start and state.posterior:
        md = state.model_def
        z = np.stack([_pack_stage2(md, s.theta, s.phi2, s.sigma2)
                      for s in state.posterior]).mean(axis=0)
        theta, phi2, sigma2 = _unpack_stage2(md, z)
        theta = np.clip(theta, md.theta_box[:, 0], md.theta_box[:, 1])
        warm = PosteriorSample(theta, phi2, sigma2)
    new_state.posterior = fit_posterior(new_state, cfg, warm_start=warm)
    return new_state
