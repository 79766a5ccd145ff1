"""Per-posterior-sample covariance state reused across design rounds.

Building the conditioned predictive law from scratch for every candidate
at every round is cubic in the observation count.  This runtime caches,
per posterior draw, the prior covariance blocks linking the prediction
grid, the candidate pool and the observation rows, plus the running
observation-block inverse; each committed design point extends the inverse
by one Schur block and downdates the tracked predictive quantities.

In offline (no-experiment) campaigns the predictive mean is frozen at its
initial conditional value while covariances keep shrinking; online
campaigns refit the posterior and rebuild this object each round.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConditioningError
from .linalg import SpdMatrix
from .mixture import GaussianMixture
from .model import KohModelState, joint_prior_covariance


@dataclass
class _SampleState:
    obs_inv: np.ndarray        # (N_o, N_o)
    cross_pred: np.ndarray     # (n_pred_coords, N_o)
    cross_cand: np.ndarray     # (n_cand_coords, N_o)
    prior_pp: np.ndarray
    prior_pc: np.ndarray
    prior_cc: np.ndarray
    mu_pred_prior: np.ndarray
    mu_cand_prior: np.ndarray
    mu_pred_cond: np.ndarray
    mu_cand_cond: np.ndarray
    mu_obs: np.ndarray
    trace_pred: float


class CampaignRuntime:
    """Fast-path scoring state for one posterior over one candidate pool."""

    def __init__(self, state: KohModelState, candidates: np.ndarray):
        self.state = state
        self.candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
        self.p = state.p_out
        self.n_pred = state.prediction_grid.shape[0]
        self.n_cand = self.candidates.shape[0]
        self.selected: List[int] = []
        self.extra_obs_values: List[np.ndarray] = []   # newest first
        self.samples: List[_SampleState] = []
        self._build()

    # -- construction -----------------------------------------------------

    def _coords(self, n_points: int, positions, n_total: int) -> np.ndarray:
        positions = np.asarray(positions, dtype=int)
        return np.concatenate([positions + t * n_total for t in range(self.p)])

    def _build(self):
        state = self.state
        data = state.data
        p = self.p
        grid = state.prediction_grid
        n_star, n_c, n_obs_f = self.n_pred, self.n_cand, data.n
        n_f = n_star + n_c + n_obs_f
        y_obs = np.concatenate([data.y_p_flat(), data.y_s_flat()])
        self.y_obs_base = y_obs
        field_pts = np.vstack([grid, self.candidates, data.x_p])

        pred_pos = np.arange(n_star)
        cand_pos = np.arange(n_star, n_star + n_c)
        fobs_pos = np.arange(n_star + n_c, n_f)

        for omega in state.posterior:
            full = joint_prior_covariance(state, omega, field_pts)
            pred_idx = self._coords(n_star, pred_pos, n_f)
            cand_idx = self._coords(n_c, cand_pos, n_f)
            fobs_idx = self._coords(n_obs_f, fobs_pos, n_f)
            sim_idx = np.arange(n_f * p, n_f * p + data.m * p)
            obs_idx = np.concatenate([fobs_idx, sim_idx])

            prior_pp = full[np.ix_(pred_idx, pred_idx)]
            prior_pc = full[np.ix_(pred_idx, cand_idx)]
            prior_cc = full[np.ix_(cand_idx, cand_idx)]
            cross_pred = full[np.ix_(pred_idx, obs_idx)]
            cross_cand = full[np.ix_(cand_idx, obs_idx)]
            obs = full[np.ix_(obs_idx, obs_idx)]
            obs_inv = SpdMatrix(obs).inverse()

            mu_field = state.emulator_mean(field_pts, omega.theta)
            mu_mat = mu_field.reshape(p, n_f)
            mu_pred_prior = mu_mat[:, :n_star].ravel()
            mu_cand_prior = mu_mat[:, n_star:n_star + n_c].ravel()
            mu_obs = np.concatenate([mu_mat[:, n_star + n_c:].ravel(),
                                     np.zeros(data.m * p)])
            sol = obs_inv @ (y_obs - mu_obs)
            mu_pred_cond = mu_pred_prior + cross_pred @ sol
            mu_cand_cond = mu_cand_prior + cross_cand @ sol

            v = obs_inv @ cross_pred.T
            cond_diag = np.diag(prior_pp) - np.einsum("ij,ji->i",
                                                      cross_pred, v)
            self.samples.append(_SampleState(
                obs_inv, cross_pred, cross_cand, prior_pp, prior_pc,
                prior_cc, mu_pred_prior, mu_cand_prior, mu_pred_cond,
                mu_cand_cond, mu_obs, float(np.sum(cond_diag))))

    # -- bookkeeping --------------------------------------------------------

    def remaining(self) -> List[int]:
        taken = set(self.selected)
        return [i for i in range(self.n_cand) if i not in taken]

    def _cand_coords(self, i: int) -> np.ndarray:
        return np.asarray([t * self.n_cand + i for t in range(self.p)])

    @property
    def n_pred_coords(self) -> int:
        return self.n_pred * self.p

    # -- predictive-variance criterion --------------------------------------

    def traces_after(self, cand_indices: Sequence[int]) -> np.ndarray:
        """tr of the conditioned prediction covariance after hypothetically
        committing each candidate; shape (n_samples, n_candidates)."""
        cand_indices = list(cand_indices)
        out = np.empty((len(self.samples), len(cand_indices)))
        for j, ss in enumerate(self.samples):
            if self.p == 1:
                cols = np.asarray(cand_indices, dtype=int)
                a = ss.cross_cand[cols]                       # (R, N_o)
                u = ss.obs_inv @ a.T                          # (N_o, R)
                cv = ss.prior_cc[cols, cols] - np.einsum("ij,ji->i", a, u)
                if np.any(cv <= 0):
                    raise ConditioningError("nonpositive conditional variance")
                vmat = ss.prior_pc[:, cols] - ss.cross_pred @ u
                drops = np.sum(vmat * vmat, axis=0) / cv
                out[j] = ss.trace_pred - drops
            else:
                for r, i in enumerate(cand_indices):
                    cc = self._cand_coords(i)
                    a = ss.cross_cand[cc]                     # (p, N_o)
                    u = ss.obs_inv @ a.T                      # (N_o, p)
                    s_blk = ss.prior_cc[np.ix_(cc, cc)] - a @ u
                    lam = np.linalg.inv(s_blk)
                    v = ss.prior_pc[:, cc] - ss.cross_pred @ u
                    out[j, r] = ss.trace_pred - float(np.sum((v @ lam) * v))
        return out

    # -- joint mixture for the information criterion ------------------------

    def joint_mixture(self, cand_indices: Sequence[int]) -> GaussianMixture:
        """Mixture over (prediction grid, listed candidates), conditioned on
        the current observation rows; means frozen at their initial
        conditional values when selected points carry no observations."""
        cand_indices = np.asarray(list(cand_indices), dtype=int)
        r = cand_indices.shape[0]
        n_sub = self.n_pred + r
        means = np.empty((len(self.samples), n_sub * self.p))
        covs = np.empty((len(self.samples), n_sub * self.p, n_sub * self.p))
        for j, ss in enumerate(self.samples):
            cand_coords = np.concatenate(
                [cand_indices + t * self.n_cand for t in range(self.p)])
            pp, pc = ss.prior_pp, ss.prior_pc[:, cand_coords]
            cc = ss.prior_cc[np.ix_(cand_coords, cand_coords)]
            prior = np.block([[pp, pc], [pc.T, cc]])
            cross = np.vstack([ss.cross_pred, ss.cross_cand[cand_coords]])
            cond = prior - cross @ ss.obs_inv @ cross.T
            cond = 0.5 * (cond + cond.T)
            # conditioning can leave a tiny indefiniteness; an inert nugget
            # keeps every component factorizable
            cond[np.diag_indices_from(cond)] += 1e-10 * max(
                1.0, float(np.mean(np.diag(cond))))
            mean = np.concatenate([ss.mu_pred_cond,
                                   ss.mu_cand_cond[cand_coords]])
            # reorder to task-major over the sliced point set
            perm = self._submix_perm(r)
            covs[j] = cond[np.ix_(perm, perm)]
            means[j] = mean[perm]
        k = len(self.samples)
        return GaussianMixture(np.full(k, 1.0 / k), means, covs)

    def _submix_perm(self, r: int) -> np.ndarray:
        """Permutation mapping [pred task-major | cand task-major] onto
        task-major over the concatenated point set."""
        n_star, p = self.n_pred, self.p
        perm = []
        for t in range(p):
            perm.extend(range(t * n_star, (t + 1) * n_star))
            base = n_star * p
            perm.extend(range(base + t * r, base + (t + 1) * r))
        return np.asarray(perm, dtype=int)

    def submix_candidate_cols(self, r_total: int, position: int) -> np.ndarray:
        """Coordinate columns of one candidate inside a joint mixture built
        from ``r_total`` candidates."""
        n_sub = self.n_pred + r_total
        return np.asarray([t * n_sub + self.n_pred + position
                           for t in range(self.p)])

    def pred_cols_in_submix(self, r_total: int) -> np.ndarray:
        n_sub = self.n_pred + r_total
        return np.concatenate([np.arange(t * n_sub, t * n_sub + self.n_pred)
                               for t in range(self.p)])

    # -- committing a selection ---------------------------------------------

    def commit(self, cand_index: int, observed: Optional[np.ndarray] = None):
        """Extend every sample's observation block with the candidate.

        ``observed`` (evaluation-only responses) feeds the metric means;
        the selection itself never alters the stored conditional means.
        """
        if cand_index in self.selected:
            raise ValueError(f"candidate {cand_index} already selected")
        p = self.p
        for ss in self.samples:
            cc = self._cand_coords(cand_index)
            a = ss.cross_cand[cc]
            u = ss.obs_inv @ a.T
            s_blk = ss.prior_cc[np.ix_(cc, cc)] - a @ u
            if p == 1:
                cv = float(s_blk[0, 0])
                if cv <= 1e-12 * abs(float(ss.prior_cc[cc[0], cc[0]])):
                    raise ConditioningError("candidate duplicates an "
                                            "existing observation row")
                lam = np.array([[1.0 / cv]])
            else:
                lam = np.linalg.inv(s_blk)
            n_o = ss.obs_inv.shape[0]
            new_inv = np.empty((n_o + p, n_o + p))
            new_inv[:p, :p] = lam
            ul = u @ lam
            new_inv[:p, p:] = -ul.T
            new_inv[p:, :p] = -ul
            new_inv[p:, p:] = ss.obs_inv + ul @ u.T
            ss.obs_inv = new_inv

            v = ss.prior_pc[:, cc] - ss.cross_pred @ u
            ss.trace_pred -= float(np.sum((v @ lam) * v))
            ss.cross_pred = np.hstack([ss.prior_pc[:, cc], ss.cross_pred])
            ss.cross_cand = np.hstack([ss.prior_cc[:, cc], ss.cross_cand])
            ss.mu_obs = np.concatenate([ss.mu_cand_prior[cc], ss.mu_obs])
        self.selected.append(cand_index)
        if observed is not None:
            self.extra_obs_values.insert(
                0, np.asarray(observed, dtype=float).ravel())
        else:
            self.extra_obs_values.insert(0, None)

    # -- metric moments ------------------------------------------------------

    def prediction_moments(self, use_extra_observations: bool = False):
        """(means, covariances) of the prediction grid per posterior sample.

        With ``use_extra_observations`` the means condition on the recorded
        evaluation responses at selected points; otherwise means stay at
        their initial conditional values.  Covariances always reflect the
        current observation rows.
        """
        j = len(self.samples)
        d = self.n_pred_coords
        means = np.empty((j, d))
        covs = np.empty((j, d, d))
        extra = None
        if use_extra_observations and self.selected:
            if any(v is None for v in self.extra_obs_values):
                raise ValueError("selected points lack recorded responses")
            extra = np.concatenate([np.asarray(v, dtype=float).ravel()
                                    for v in self.extra_obs_values])
        for i, ss in enumerate(self.samples):
            covs[i] = ss.prior_pp - ss.cross_pred @ ss.obs_inv @ ss.cross_pred.T
            if extra is not None:
                y_aug = np.concatenate([extra, self.y_obs_base])
                sol = ss.obs_inv @ (y_aug - ss.mu_obs)
                means[i] = ss.mu_pred_prior + ss.cross_pred @ sol
            else:
                means[i] = ss.mu_pred_cond
        return means, covs
