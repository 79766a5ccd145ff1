"""Sequential and adaptive design campaigns over a fixed candidate pool.

One campaign owns a posterior state and a fast-update runtime.  Each round
scores the remaining candidates under the configured criterion, commits
the winner, and snapshots evaluation metrics.  Offline mode keeps the
fitted posterior untouched; online mode appends the new observation and
refits before the next round.

Round metrics always use the round-b covariance.  When the scenario can
simulate ground truth, the offline mode also conditions the metric means
on simulated responses at the selected points (evaluation only; the
criteria themselves never see those values), so that reported errors
reflect what running the design would buy.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field as dc_field, asdict, replace
from typing import List, Optional

import numpy as np

from . import criteria as crit
from .compress import CompressionConfig, compress
from .criteria import (CandidateScore, ComplexityConfig, NmcConfig,
                       MAXIMIZE, MINIMIZE)
from .metrics import crps as crps_metric, mse as mse_metric
from .model import (KohModelState, McmcConfig, append_observation,
                    fit_posterior, fit_stage1, freeze_phi1, make_state,
                    observation_moments)
from .runtime import CampaignRuntime

SDE = "sde"
ADE = "ade"

CRITERION_DIRECTION = {
    "mi": MAXIMIZE, "mi+cx": MAXIMIZE,
    "imspe": MINIMIZE, "imspe+cx": MAXIMIZE,
    "dopt": MAXIMIZE, "maximin": MAXIMIZE,
    "random": MAXIMIZE,
}


@dataclass
class CampaignConfig:
    mode: str = SDE
    criterion: str = "mi"
    budget: int = 10
    seed: int = 0
    nmc: NmcConfig = dc_field(default_factory=NmcConfig)
    complexity: ComplexityConfig = dc_field(default_factory=ComplexityConfig)
    compression: Optional[CompressionConfig] = dc_field(
        default_factory=CompressionConfig)
    mcmc: McmcConfig = dc_field(default_factory=McmcConfig)
    stage1_mcmc: McmcConfig = dc_field(
        default_factory=lambda: McmcConfig(burn_in=1500, draws=500))
    crps_samples: int = 10_000
    dopt_subsample: Optional[int] = 100
    normalize_raw: bool = True
    simulate_truth: bool = True
    # offline-mode metric snapshots: "condition" keeps the fitted posterior
    # and only conditions the predictive law on the simulated responses at
    # selected points; "refit" refits the whole model on the augmented data
    # (evaluation only; criteria never see it), which is how round-by-round
    # error trajectories of an offline design are scored retrospectively
    sde_metric_mode: str = "condition"
    metric_refit_draws: int = 500

    def __post_init__(self):
        if self.mode not in (SDE, ADE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.criterion not in CRITERION_DIRECTION:
            raise ValueError(f"unknown criterion {self.criterion!r}")

    def to_json_dict(self) -> dict:
        doc = asdict(self)
        doc["compression"] = asdict(self.compression) if self.compression else None
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "CampaignConfig":
        doc = dict(doc)
        if doc.get("nmc"):
            doc["nmc"] = NmcConfig(**doc["nmc"])
        if doc.get("complexity"):
            doc["complexity"] = ComplexityConfig(**doc["complexity"])
        if doc.get("compression"):
            doc["compression"] = CompressionConfig(**doc["compression"])
        if doc.get("mcmc"):
            doc["mcmc"] = McmcConfig(**doc["mcmc"])
        if doc.get("stage1_mcmc"):
            doc["stage1_mcmc"] = McmcConfig(**doc["stage1_mcmc"])
        return cls(**doc)


@dataclass
class RoundRecord:
    round: int
    selected_index: Optional[int]
    mse: float
    crps: float
    table: Optional[List[CandidateScore]] = None
    scoring_seconds: float = 0.0


@dataclass
class CampaignResult:
    config: CampaignConfig
    selected: List[dict]
    rounds: List[RoundRecord]
    timing: dict

    def to_json_dict(self, with_timing: bool = False) -> dict:
        doc = {
            "config": self.config.to_json_dict(),
            "selected": self.selected,
            "rounds": [{
                "round": r.round,
                "selected_index": r.selected_index,
                "mse": r.mse,
                "crps": r.crps,
                "table": None if r.table is None else [
                    {"candidate_index": cs.candidate_index, "raw": cs.raw,
                     "complexity": cs.complexity, "hybrid": cs.hybrid,
                     "direction": cs.direction}
                    for cs in r.table],
            } for r in self.rounds],
        }
        if with_timing:
            doc["timing"] = self.timing
        return doc


def export_score_table(result: CampaignResult, path: str):
    """CSV with columns (round, candidate_index, raw, complexity, hybrid,
    selected_flag)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "candidate_index", "raw", "complexity",
                         "hybrid", "selected_flag"])
        for rec in result.rounds:
            if rec.table is None:
                continue
            for cs in rec.table:
                writer.writerow([
                    rec.round, cs.candidate_index, repr(cs.raw),
                    "" if cs.complexity is None else repr(cs.complexity),
                    "" if cs.hybrid is None else repr(cs.hybrid),
                    int(cs.candidate_index == rec.selected_index)])


# ---------------------------------------------------------------------------
# campaign state
# ---------------------------------------------------------------------------

@dataclass
class CampaignState:
    model: KohModelState
    scenario: object
    runtime: CampaignRuntime
    selected: List[dict] = dc_field(default_factory=list)
    round: int = 0
    slopes_cache: Optional[np.ndarray] = None

    def remaining(self) -> List[int]:
        return self.runtime.remaining()


def derived_seed(base: int, *path: int) -> int:
    ss = np.random.SeedSequence([int(base) & 0xFFFFFFFF, *[int(p) for p in path]])
    return int(ss.generate_state(1)[0])


def bayesian_mean_fn(state: KohModelState):
    """Posterior-averaged predictive mean as a function of arbitrary design
    points (the quantity whose local geometry the complexity score reads)."""
    sols = []
    for omega in state.posterior:
        mu, sig = observation_moments(state, omega)
        from .linalg import SpdMatrix
        y = np.concatenate([state.data.y_p_flat(), state.data.y_s_flat()])
        sols.append(SpdMatrix(sig).solve(y - mu))
    p = state.p_out
    data = state.data

    def mean_fn(pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n_new = pts.shape[0]
        acc = np.zeros((n_new, p))
        from .model import joint_prior_covariance
        for omega, sol in zip(state.posterior, sols):
            full = joint_prior_covariance(
                state, omega, np.vstack([pts, data.x_p]),
                noise_mask=np.concatenate([np.zeros(n_new, dtype=bool),
                                           np.ones(data.n, dtype=bool)]))
            n_f = n_new + data.n
            new_idx = np.concatenate([np.arange(n_new) + t * n_f
                                      for t in range(p)])
            obs_f = np.concatenate([np.arange(n_new, n_f) + t * n_f
                                    for t in range(p)])
            obs_idx = np.concatenate([obs_f,
                                      np.arange(n_f * p, n_f * p + data.m * p)])
            cross = full[np.ix_(new_idx, obs_idx)]
            m_prior = state.emulator_mean(pts, omega.theta)
            vals = m_prior + cross @ sol
            acc += vals.reshape(p, n_new).T
        return acc / len(state.posterior)

    return mean_fn


def candidate_slopes(state: KohModelState, candidates: np.ndarray,
                     bounds: np.ndarray, cfg: ComplexityConfig) -> np.ndarray:
    mean_fn = bayesian_mean_fn(state)
    return crit.local_slopes(candidates, mean_fn, bounds, cfg.fd_step)


# ---------------------------------------------------------------------------
# suggestion
# ---------------------------------------------------------------------------

def suggest_next(cstate: CampaignState, cfg: CampaignConfig):
    """Score every remaining candidate and return (winner, score table).

    Does not mutate the campaign state.
    """
    rem = cstate.remaining()
    if not rem:
        raise ValueError("candidate pool exhausted")
    rt = cstate.runtime
    scenario = cstate.scenario
    criterion = cfg.criterion
    direction = CRITERION_DIRECTION[criterion]
    round_seed = derived_seed(cfg.seed, 1, cstate.round)
    t0 = time.perf_counter()

    if criterion == "maximin":
        sel_pts = [s["point"] for s in cstate.selected]
        raw = np.array([crit.maximin(rt.candidates[i], sel_pts) for i in rem])
    elif criterion in ("imspe", "imspe+cx"):
        traces = rt.traces_after(rem)
        raw = traces.mean(axis=0) / rt.n_pred_coords
    elif criterion in ("mi", "mi+cx"):
        mix = rt.joint_mixture(rem)
        if cfg.compression is not None and \
                cfg.compression.j_target < mix.n_components:
            comp_cfg = replace(cfg.compression, seed=round_seed)
            mix = compress(mix, comp_cfg)
        nmc = replace(cfg.nmc, seed=round_seed)
        if rt.p == 1:
            cols = [int(rt.submix_candidate_cols(len(rem), r)[0])
                    for r in range(len(rem))]
            raw = crit.mi_scores_shared(mix, rt.n_pred_coords, cols, nmc)
        else:
            raw = np.empty(len(rem))
            pred_cols = rt.pred_cols_in_submix(len(rem))
            for r in range(len(rem)):
                cand_cols = rt.submix_candidate_cols(len(rem), r)
                sub = mix.marginal(np.concatenate([pred_cols, cand_cols]))
                rng = crit.candidate_rng(round_seed, rem[r])
                raw[r] = crit.mi_nmc(sub, rt.n_pred_coords, nmc, rng=rng)
    elif criterion == "dopt":
        posterior = cstate.model.posterior
        if cfg.dopt_subsample and len(posterior) > cfg.dopt_subsample:
            idx = np.linspace(0, len(posterior) - 1,
                              cfg.dopt_subsample).astype(int)
            posterior = [posterior[i] for i in idx]
        if cstate.selected:
            sel_pts = np.asarray([s["point"] for s in cstate.selected],
                                 dtype=float)
        else:
            sel_pts = np.zeros((0, rt.candidates.shape[1]))
        raw = np.empty(len(rem))
        for r, i in enumerate(rem):
            extra = np.vstack([rt.candidates[i][None, :], sel_pts])
            raw[r] = crit.d_optimality(cstate.model, extra, posterior,
                                       cfg.complexity.fd_step)
    elif criterion == "random":
        rng = np.random.default_rng(round_seed)
        raw = rng.random(len(rem))
    else:  # pragma: no cover
        raise ValueError(criterion)

    table = []
    hybrid_scores = None
    comp_vals = None
    if criterion.endswith("+cx"):
        if cstate.slopes_cache is None or cfg.mode == ADE:
            bounds = _scenario_bounds(scenario)
            cstate.slopes_cache = candidate_slopes(
                cstate.model, rt.candidates, bounds, cfg.complexity)
        g_all = cstate.slopes_cache
        s_all, _ = crit.slope_change(rt.candidates, g_all,
                                     cfg.complexity.k_neighbors)
        comp_vals = crit.composite_complexity(g_all[rem], s_all[rem],
                                              cfg.complexity)
        base_dir = MINIMIZE if criterion == "imspe+cx" else MAXIMIZE
        hybrid_scores = crit.hybrid(raw, comp_vals, cfg.complexity.alpha,
                                    base_dir, cfg.normalize_raw)

    for r, i in enumerate(rem):
        table.append(CandidateScore(
            candidate_index=i, raw=float(raw[r]), direction=direction,
            complexity=None if comp_vals is None else float(comp_vals[r]),
            hybrid=None if hybrid_scores is None else float(hybrid_scores[r])))

    pick_vals = hybrid_scores if hybrid_scores is not None else raw
    pick_dir = MAXIMIZE if hybrid_scores is not None else direction
    best = crit.select_best(pick_vals, pick_dir, indices=rem)
    return best, table, time.perf_counter() - t0


def _scenario_bounds(scenario) -> np.ndarray:
    if hasattr(scenario, "domain"):
        return np.asarray([scenario.domain], dtype=float)
    return np.asarray([scenario.time_window], dtype=float)


# ---------------------------------------------------------------------------
# commits and metrics
# ---------------------------------------------------------------------------

def commit_sde(cstate: CampaignState, cand_index: int, cfg: CampaignConfig,
               scenario_rng: Optional[np.random.Generator] = None):
    """Record the selection without touching the posterior.  A simulated
    response, when available, is stored for evaluation-time means only."""
    observed = None
    if cfg.simulate_truth and scenario_rng is not None and \
            hasattr(cstate.scenario, "respond"):
        observed = np.asarray(
            cstate.scenario.respond(cstate.runtime.candidates[cand_index],
                                    scenario_rng), dtype=float).ravel()
    posterior_before = cstate.model.posterior
    cstate.runtime.commit(cand_index, observed)
    assert cstate.model.posterior is posterior_before
    cstate.selected.append({
        "candidate_index": int(cand_index),
        "point": cstate.runtime.candidates[cand_index].tolist(),
        "observation": None if observed is None else observed.tolist(),
    })
    cstate.round += 1
    return cstate


def commit_ade(cstate: CampaignState, cand_index: int, y_new,
               cfg: CampaignConfig) -> CampaignState:
    """Run the (real or simulated) experiment: append the observation,
    refit the posterior, and rebuild the fast-path runtime."""
    if any(s["candidate_index"] == cand_index for s in cstate.selected):
        raise ValueError(f"candidate {cand_index} already selected")
    point = cstate.runtime.candidates[cand_index]
    y_arr = np.asarray(y_new, dtype=float)
    if not np.all(np.isfinite(y_arr)):
        raise ValueError("observation must be finite")
    mcmc = replace(cfg.mcmc, seed=derived_seed(cfg.seed, 2, cstate.round))
    new_model = append_observation(cstate.model, point, y_new, mcmc)
    selected = cstate.selected + [{
        "candidate_index": int(cand_index),
        "point": point.tolist(),
        "observation": y_arr.ravel().tolist(),
    }]
    new_rt = CampaignRuntime(new_model, cstate.runtime.candidates)
    for s in selected:
        new_rt.selected.append(s["candidate_index"])
    return CampaignState(new_model, cstate.scenario, new_rt, selected,
                         cstate.round + 1, None)


def refit_prediction_moments(model: KohModelState, pairs, cfg: CampaignConfig,
                             metric_seed: int, means_only: bool = False):
    """Evaluation-only refit: append the recorded (point, response) pairs,
    refit the sampled parameters, and return prediction moments (covs are
    None when ``means_only``)."""
    from .model import assemble_blocks, predict
    data = model.data
    for point, y in pairs:
        data = data.with_field_row(np.asarray(point, dtype=float), y)
    eval_state = KohModelState(data, model.model_def, model.phi1,
                               model.prediction_grid)
    mcmc = replace(cfg.mcmc, draws=cfg.metric_refit_draws,
                   seed=metric_seed)
    warm = model.posterior[len(model.posterior) // 2] if model.posterior \
        else None
    eval_state.posterior = fit_posterior(eval_state, mcmc, warm_start=warm)
    j = len(eval_state.posterior)
    p = model.model_def.p_out
    d = model.prediction_grid.shape[0] * p
    means = np.empty((j, d))
    covs = None if means_only else np.empty((j, d, d))
    y = np.concatenate([eval_state.data.y_p_flat(),
                        eval_state.data.y_s_flat()])
    for i, omega in enumerate(eval_state.posterior):
        if means_only:
            blocks = assemble_blocks(eval_state, omega)
            means[i] = blocks.mu_star + blocks.sigma_star_obs @ \
                blocks.sigma_oo.solve(y - blocks.mu_obs)
        else:
            pred = predict(eval_state, omega)
            means[i] = pred.mean
            covs[i] = pred.cov.mat
    return means, covs


def _refit_prediction_moments(cstate: CampaignState, cfg: CampaignConfig,
                              metric_seed: int):
    pairs = [(np.asarray(sel["point"], dtype=float), y)
             for sel, y in zip(cstate.selected,
                               cstate.runtime.extra_obs_values[::-1])]
    return refit_prediction_moments(cstate.model, pairs, cfg, metric_seed)


def compute_metrics(cstate: CampaignState, cfg: CampaignConfig,
                    truth_flat: np.ndarray, metric_seed: int):
    """MSE and CRPS of the current predictive law on the prediction grid,
    averaged across output dimensions."""
    rt = cstate.runtime
    p = rt.p
    n_star = rt.n_pred
    have_responses = (len(rt.selected) > 0
                      and all(v is not None for v in rt.extra_obs_values))
    if cfg.mode == SDE and cfg.sde_metric_mode == "refit" \
            and cfg.simulate_truth and have_responses:
        means, covs = _refit_prediction_moments(cstate, cfg, metric_seed)
    else:
        use_extra = (cfg.mode == SDE and cfg.simulate_truth
                     and have_responses)
        means, covs = rt.prediction_moments(use_extra_observations=use_extra)

    j = means.shape[0]
    mse_vals, crps_vals = [], []
    rng = np.random.default_rng(metric_seed)
    comp = rng.integers(0, j, size=cfg.crps_samples)
    z = rng.standard_normal((cfg.crps_samples, n_star * p))
    draws = np.empty((cfg.crps_samples, n_star * p))
    from .linalg import cholesky as chol_fn
    for k in np.unique(comp):
        sel = comp == k
        ch, _ = chol_fn(covs[k])
        draws[sel] = means[k] + z[sel] @ ch.T
    for t in range(p):
        sl = slice(t * n_star, (t + 1) * n_star)
        mse_vals.append(mse_metric(means[:, sl], truth_flat[sl]))
        crps_vals.append(crps_metric(draws[:, sl], truth_flat[sl]))
    return float(np.mean(mse_vals)), float(np.mean(crps_vals))


# ---------------------------------------------------------------------------
# full campaign
# ---------------------------------------------------------------------------

def fit_initial_state(scenario, cfg: CampaignConfig) -> KohModelState:
    data = scenario.build_data(derived_seed(cfg.seed, 0))
    model_def = scenario.model_def()
    s1 = replace(cfg.stage1_mcmc, seed=derived_seed(cfg.seed, 3))
    phi1 = freeze_phi1(model_def, fit_stage1(data, model_def, s1))
    state = make_state(data, model_def, phi1, scenario.prediction_grid())
    mcmc = replace(cfg.mcmc, seed=derived_seed(cfg.seed, 4))
    state.posterior = fit_posterior(state, mcmc)
    return state


def run_campaign(cfg: CampaignConfig, scenario,
                 keep_tables: bool = True) -> CampaignResult:
    """Execute a full design campaign; deterministic under ``cfg.seed``."""
    t_start = time.perf_counter()
    state = fit_initial_state(scenario, cfg)
    runtime = CampaignRuntime(state, scenario.candidates())
    cstate = CampaignState(state, scenario, runtime)

    truth = np.asarray(scenario.truth_on_grid(derived_seed(cfg.seed, 0)),
                       dtype=float)
    truth_flat = truth.T.ravel() if truth.ndim == 2 else truth

    rounds: List[RoundRecord] = []
    m0, c0 = compute_metrics(cstate, cfg, truth_flat,
                             derived_seed(cfg.seed, 5, 0))
    rounds.append(RoundRecord(0, None, m0, c0))
    scoring_total = 0.0

    for b in range(1, cfg.budget + 1):
        best, table, secs = suggest_next(cstate, cfg)
        scoring_total += secs
        if cfg.mode == SDE:
            rng = np.random.default_rng(derived_seed(cfg.seed, 6, b))
            commit_sde(cstate, best, cfg, rng)
        else:
            rng = np.random.default_rng(derived_seed(cfg.seed, 6, b))
            y_new = scenario.respond(cstate.runtime.candidates[best], rng)
            cstate = commit_ade(cstate, best, y_new, cfg)
        mse_b, crps_b = compute_metrics(cstate, cfg, truth_flat,
                                        derived_seed(cfg.seed, 5, b))
        rounds.append(RoundRecord(b, best, mse_b, crps_b,
                                  table if keep_tables else None, secs))

    timing = {"total_seconds": time.perf_counter() - t_start,
              "scoring_seconds": scoring_total,
              "criterion": cfg.criterion}
    return CampaignResult(cfg, cstate.selected, rounds, timing)
