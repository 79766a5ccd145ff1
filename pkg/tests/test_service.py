import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from kohbed.service import create_app

TINY_CONFIG = {
    "mode": "ade",
    "criterion": "imspe",
    "budget": 3,
    "seed": 11,
    "nmc": {"outer_s": 300, "density_floor_tau": 1e-300, "seed": 0},
    "compression": {"j0": 16, "j_target": 6, "nn_k": 4, "refresh_r": 5},
    "mcmc": {"burn_in": 120, "draws": 30},
    "stage1_mcmc": {"burn_in": 120, "draws": 30},
    "crps_samples": 200,
}

TINY_SCENARIO = {"n_field": 4, "m_sim": 10, "n_candidates": 6, "n_pred": 8}


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    data_dir = tmp_path_factory.mktemp("sessions")
    app = create_app(str(data_dir))
    with TestClient(app) as c:
        c.data_dir = str(data_dir)
        yield c


@pytest.fixture(scope="module")
def session_id(client):
    resp = client.post("/sessions", json={
        "scenario": "toy", "scenario_params": TINY_SCENARIO,
        "config": TINY_CONFIG})
    assert resp.status_code == 201, resp.text
    doc = resp.json()
    assert doc["round"] == 0
    assert len(doc["metric_history"]) == 1
    return doc["session_id"]


class TestLifecycle:
    def test_health(self, client):
        assert client.get("/health").json() == {"status": "ok"}

    def test_unknown_session_404(self, client):
        resp = client.get("/sessions/doesnotexist")
        assert resp.status_code == 404
        assert resp.json()["detail"]["code"] == "unknown_session"

    def test_observe_before_suggest_409(self, client, session_id):
        resp = client.post(f"/sessions/{session_id}/observe",
                           json={"candidate_index": 0, "simulate": True})
        assert resp.status_code == 409
        assert resp.json()["detail"]["code"] == "observe_before_suggest"

    def test_suggest_observe_round_trip(self, client, session_id):
        s1 = client.post(f"/sessions/{session_id}/suggest", json={})
        assert s1.status_code == 200, s1.text
        sug = s1.json()
        assert "candidate_index" in sug and len(sug["table"]) == 6

        # idempotent until observed
        s2 = client.post(f"/sessions/{session_id}/suggest", json={})
        assert s2.json() == sug

        bad = client.post(f"/sessions/{session_id}/observe",
                          json={"candidate_index": 999, "simulate": True})
        assert bad.status_code == 409

        missing = client.post(f"/sessions/{session_id}/observe",
                              json={"candidate_index":
                                    sug["candidate_index"]})
        assert missing.status_code == 422

        obs = client.post(f"/sessions/{session_id}/observe",
                          json={"candidate_index": sug["candidate_index"],
                                "simulate": True})
        assert obs.status_code == 200, obs.text
        assert obs.json()["round"] == 1

        state = client.get(f"/sessions/{session_id}").json()
        assert state["round"] == 1
        assert len(state["selected"]) == 1
        assert state["selected"][0]["observation"] is not None
        assert sug["candidate_index"] not in state["remaining"]

    def test_predictive_band(self, client, session_id):
        resp = client.get(f"/sessions/{session_id}/predictive")
        assert resp.status_code == 200
        doc = resp.json()
        assert len(doc["outputs"]) == 1
        band = doc["outputs"][0]
        n = len(doc["grid"])
        assert len(band["mean"]) == n
        assert all(lo <= m <= hi for lo, m, hi in
                   zip(band["lower95"], band["mean"], band["upper95"]))

    def test_metrics_history(self, client, session_id):
        doc = client.get(f"/sessions/{session_id}/metrics").json()
        assert [h["round"] for h in doc["history"]] == [0, 1]

    def test_predictive_custom_grid(self, client, session_id):
        resp = client.get(f"/sessions/{session_id}/predictive",
                          params={"grid": "0.0,2.5,5.0"})
        assert resp.status_code == 200
        doc = resp.json()
        assert doc["grid"] == [0.0, 2.5, 5.0]
        assert len(doc["outputs"][0]["mean"]) == 3
        bad = client.get(f"/sessions/{session_id}/predictive",
                         params={"grid": "a,b"})
        assert bad.status_code == 422

    def test_async_suggest_job(self, client, session_id):
        resp = client.post(f"/sessions/{session_id}/suggest",
                           json={"run_async": True})
        assert resp.status_code == 202
        job = resp.json()
        import time
        for _ in range(100):
            status = client.get(job["status_url"]).json()
            if status["status"] == "done":
                break
            time.sleep(0.05)
        assert status["status"] == "done"
        assert "candidate_index" in status["result"]

    def test_crash_restart_preserves_state(self, client, session_id):
        before = client.get(f"/sessions/{session_id}").json()
        fresh = TestClient(create_app(client.data_dir))
        after = fresh.get(f"/sessions/{session_id}").json()
        assert json.dumps(before, sort_keys=True) == \
            json.dumps(after, sort_keys=True)

    def test_alpha_forwarding_recomputes(self, client, session_id):
        r0 = client.post(f"/sessions/{session_id}/suggest",
                         json={"alpha": 1.0})
        assert r0.status_code == 200

    def test_invalid_config_422(self, client):
        resp = client.post("/sessions", json={
            "scenario": "toy", "config": {"criterion": "nope"}})
        assert resp.status_code == 422


class TestSessionSerialization:
    def test_posterior_round_trips_exactly(self, client, session_id):
        from kohbed.sessions import SessionStore
        store = SessionStore(client.data_dir)
        rec1 = store.load(session_id)
        store.save(rec1)
        rec2 = store.load(session_id)
        p1 = rec1.cstate.model.posterior
        p2 = rec2.cstate.model.posterior
        assert len(p1) == len(p2)
        assert all(np.array_equal(a.theta, b.theta)
                   and np.array_equal(a.phi2, b.phi2)
                   and a.sigma2 == b.sigma2 for a, b in zip(p1, p2))
