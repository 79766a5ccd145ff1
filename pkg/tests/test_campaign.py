import json

import numpy as np
import pytest

from kohbed.campaign import (CampaignConfig, CampaignState, commit_ade,
                             commit_sde, export_score_table, run_campaign,
                             suggest_next)
from kohbed.compress import CompressionConfig
from kohbed.criteria import NmcConfig
from kohbed.model import McmcConfig, predict
from kohbed.runtime import CampaignRuntime
from kohbed.scenarios import ToyScenario


def small_scenario():
    return ToyScenario(n_field=4, m_sim=12, n_candidates=8, n_pred=10)


def fast_config(**kw):
    base = dict(
        mode="sde", criterion="imspe", budget=3, seed=0,
        nmc=NmcConfig(outer_s=400),
        compression=CompressionConfig(j0=20, j_target=8, nn_k=4,
                                      refresh_r=5),
        mcmc=McmcConfig(burn_in=200, draws=50),
        stage1_mcmc=McmcConfig(burn_in=200, draws=50),
        crps_samples=300)
    base.update(kw)
    return CampaignConfig(**base)


@pytest.fixture(scope="module")
def fitted():
    from kohbed.campaign import fit_initial_state
    scenario = small_scenario()
    state = fit_initial_state(scenario, fast_config())
    return scenario, state


def fresh_cstate(fitted):
    scenario, state = fitted
    rt = CampaignRuntime(state, scenario.candidates())
    return CampaignState(state, scenario, rt)


class TestSuggestNext:
    @pytest.mark.parametrize("criterion", ["mi", "imspe", "maximin"])
    def test_single_remaining_candidate(self, fitted, criterion):
        cstate = fresh_cstate(fitted)
        cfg = fast_config(criterion=criterion)
        rng = np.random.default_rng(0)
        for i in range(cstate.runtime.n_cand - 1):
            commit_sde(cstate, i, cfg, rng)
        best, table, _ = suggest_next(cstate, cfg)
        assert best == cstate.runtime.n_cand - 1
        assert len(table) == 1

    def test_maximin_empty_selection_tie_breaks_low(self, fitted):
        cstate = fresh_cstate(fitted)
        best, table, _ = suggest_next(cstate, fast_config(
            criterion="maximin"))
        assert best == 0
        assert all(np.isinf(cs.raw) for cs in table)

    def test_does_not_mutate_state(self, fitted):
        cstate = fresh_cstate(fitted)
        cfg = fast_config(criterion="mi")
        round0 = cstate.round
        n_sel = len(cstate.selected)
        suggest_next(cstate, cfg)
        assert cstate.round == round0
        assert len(cstate.selected) == n_sel

    def test_gap_region_attracts_mi_and_imspe(self, fitted):
        # with selections committed on the left half, both uncertainty
        # criteria must prefer the uncovered right half
        scenario, state = fitted
        cfg = fast_config(criterion="imspe")
        cstate = fresh_cstate(fitted)
        rng = np.random.default_rng(1)
        # candidates are an 8-point uniform grid; commit the 4 left ones
        for i in range(4):
            commit_sde(cstate, i, cfg, rng)
        best_imspe, _, _ = suggest_next(cstate, cfg)
        best_mi, _, _ = suggest_next(cstate, fast_config(
            criterion="mi", nmc=NmcConfig(outer_s=3000)))
        assert best_imspe >= 4
        assert best_mi >= 4
        # dense-path oracle for the imspe winner: recondition from scratch
        traces = []
        rem = cstate.remaining()
        for i in rem:
            tr = 0.0
            pts = np.vstack([scenario.candidates()[[0, 1, 2, 3, i]]])
            for omega in state.posterior:
                pred = predict(state, omega, extra_points=pts)
                tr += float(np.trace(pred.cov.mat))
            traces.append(tr / len(state.posterior))
        assert rem[int(np.argmin(traces))] == best_imspe
        # and the fast-path traces agree with dense values, not just ranks
        fast = cstate.runtime.traces_after(rem).mean(axis=0)
        rel = np.max(np.abs(fast - np.asarray(traces)) / np.asarray(traces))
        assert rel < 1e-8


class TestCommits:
    def test_sde_keeps_posterior_object(self, fitted):
        cstate = fresh_cstate(fitted)
        cfg = fast_config()
        posterior = cstate.model.posterior
        commit_sde(cstate, 2, cfg, np.random.default_rng(0))
        assert cstate.model.posterior is posterior
        assert len(cstate.selected) == 1

    def test_sde_traces_non_increasing(self, fitted):
        cstate = fresh_cstate(fitted)
        cfg = fast_config()
        rng = np.random.default_rng(2)
        before = [ss.trace_pred for ss in cstate.runtime.samples]
        for i in (1, 5, 7):
            commit_sde(cstate, i, cfg, rng)
            after = [ss.trace_pred for ss in cstate.runtime.samples]
            assert all(b >= a - 1e-10 for b, a in zip(before, after))
            before = after

    def test_duplicate_selection_rejected(self, fitted):
        cstate = fresh_cstate(fitted)
        cfg = fast_config()
        commit_sde(cstate, 3, cfg, np.random.default_rng(0))
        with pytest.raises(ValueError):
            cstate.runtime.commit(3)

    def test_ade_grows_field_data(self, fitted):
        cstate = fresh_cstate(fitted)
        cfg = fast_config(mode="ade",
                          mcmc=McmcConfig(burn_in=100, draws=30))
        n0 = cstate.model.data.n
        new = commit_ade(cstate, 4, 1.0, cfg)
        assert new.model.data.n == n0 + 1
        assert cstate.model.data.n == n0
        with pytest.raises(ValueError):
            commit_ade(new, 4, 1.0, cfg)


class TestRunCampaign:
    def test_zero_budget(self):
        res = run_campaign(fast_config(budget=0), small_scenario())
        assert res.selected == []
        assert len(res.rounds) == 1
        assert res.rounds[0].mse > 0

    def test_seed_determinism_bytes(self):
        cfg = fast_config(criterion="mi", budget=2)
        a = run_campaign(cfg, small_scenario())
        b = run_campaign(cfg, small_scenario())
        assert json.dumps(a.to_json_dict()) == json.dumps(b.to_json_dict())

    def test_greedy_containment(self):
        res = run_campaign(fast_config(budget=4), small_scenario())
        picked = [s["candidate_index"] for s in res.selected]
        assert len(picked) == len(set(picked)) == 4

    def test_maximin_mode_invariance(self):
        sde = run_campaign(fast_config(criterion="maximin", budget=4),
                           small_scenario())
        ade = run_campaign(fast_config(criterion="maximin", budget=4,
                                       mode="ade",
                                       mcmc=McmcConfig(burn_in=100,
                                                       draws=30)),
                           small_scenario())
        assert [s["candidate_index"] for s in sde.selected] == \
            [s["candidate_index"] for s in ade.selected]

    def test_csv_export(self, tmp_path):
        res = run_campaign(fast_config(budget=2), small_scenario())
        path = tmp_path / "table.csv"
        export_score_table(res, str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "round,candidate_index,raw,complexity,hybrid," \
            "selected_flag"
        assert sum(line.endswith(",1") for line in lines[1:]) == 2

    def test_dopt_campaign_runs(self):
        cfg = fast_config(criterion="dopt", budget=1, dopt_subsample=5)
        res = run_campaign(cfg, small_scenario())
        assert len(res.selected) == 1

    def test_hybrid_campaign_records_complexity(self):
        cfg = fast_config(criterion="imspe+cx", budget=1)
        res = run_campaign(cfg, small_scenario())
        table = res.rounds[1].table
        assert all(cs.complexity is not None for cs in table)
        assert all(0.0 <= cs.complexity <= 1.0 for cs in table)
        assert all(cs.hybrid is not None for cs in table)
