"""HTTP API for human-in-the-loop adaptive design.

The service owns a directory of persisted sessions.  Each session is an
adaptive campaign: the client asks for a suggestion, runs the experiment,
posts the measured response, and reads back the refreshed predictive law.
Suggestions are cached until observed, so repeated suggest calls are
idempotent; long computations can run as polled jobs.
"""

from __future__ import annotations

import threading
import uuid
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import campaign as camp
from .campaign import CampaignConfig, CampaignState, suggest_next

from .runtime import CampaignRuntime
from .sessions import SessionRecord, SessionStore


class CreateSessionBody(BaseModel):
    scenario: str = "toy"
    scenario_params: dict = {}
    config: dict = {}


class ObserveBody(BaseModel):
    candidate_index: int
    y_new: Optional[list] = None
    simulate: bool = False


class SuggestBody(BaseModel):
    run_async: bool = False
    alpha: Optional[float] = None


def _error(status: int, code: str, message: str, detail: str = ""):
    return HTTPException(status_code=status, detail={
        "code": code, "message": message, "detail": detail})


def _table_doc(table):
    return [{"candidate_index": cs.candidate_index, "raw": cs.raw,
             "complexity": cs.complexity, "hybrid": cs.hybrid,
             "direction": cs.direction} for cs in table]


def create_app(data_dir: str) -> FastAPI:
    app = FastAPI(title="kohbed design service")
    store = SessionStore(data_dir)
    records: dict[str, SessionRecord] = {}
    locks: dict[str, threading.Lock] = {}
    jobs: dict[str, dict] = {}
    registry_lock = threading.Lock()

    def get_record(session_id: str) -> SessionRecord:
        with registry_lock:
            if session_id in records:
                return records[session_id]
        try:
            rec = store.load(session_id)
        except KeyError:
            raise _error(404, "unknown_session",
                         f"no session {session_id!r}")
        with registry_lock:
            records.setdefault(session_id, rec)
            locks.setdefault(session_id, threading.Lock())
        return records[session_id]

    def session_lock(session_id: str) -> threading.Lock:
        with registry_lock:
            return locks.setdefault(session_id, threading.Lock())

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        from .scenarios import load_scenario
        try:
            scenario = load_scenario(body.scenario, **body.scenario_params)
            cfg_doc = dict(body.config)
            cfg_doc.setdefault("mode", "ade")
            cfg = CampaignConfig.from_json_dict(cfg_doc)
        except (ValueError, TypeError) as exc:
            raise _error(422, "invalid_config", str(exc))
        if cfg.mode != "ade":
            raise _error(422, "invalid_config",
                         "sessions drive adaptive campaigns; mode must be ade")
        state = camp.fit_initial_state(scenario, cfg)
        runtime = CampaignRuntime(state, scenario.candidates())
        cstate = CampaignState(state, scenario, runtime)
        session_id = store.new_id()
        rec = SessionRecord(session_id,
                            {"name": body.scenario,
                             "params": body.scenario_params},
                            cfg, cstate)
        truth = _truth_flat(scenario, cfg)
        mse0, crps0 = camp.compute_metrics(cstate, cfg, truth,
                                           camp.derived_seed(cfg.seed, 5, 0))
        rec.metric_history.append({"round": 0, "mse": mse0, "crps": crps0})
        with registry_lock:
            records[session_id] = rec
            locks[session_id] = threading.Lock()
        store.save(rec)
        return session_summary(rec)

    def session_summary(rec: SessionRecord) -> dict:
        cstate = rec.cstate
        return {
            "session_id": rec.session_id,
            "schema_version": 1,
            "scenario": rec.scenario_ref,
            "round": cstate.round,
            "budget": rec.config.budget,
            "criterion": rec.config.criterion,
            "alpha": rec.config.complexity.alpha,
            "seed": rec.config.seed,
            "selected": cstate.selected,
            "remaining": cstate.remaining(),
            "candidates": cstate.runtime.candidates.tolist(),
            "n_outputs": cstate.runtime.p,
            "pending_suggestion": rec.pending_suggestion,
            "metric_history": rec.metric_history,
        }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return session_summary(get_record(session_id))

    def compute_suggestion(rec: SessionRecord,
                           alpha: Optional[float]) -> dict:
        cfg = rec.config
        if alpha is not None:
            from dataclasses import replace
            cfg = replace(cfg, complexity=replace(cfg.complexity,
                                                  alpha=float(alpha)))
        best, table, secs = suggest_next(rec.cstate, cfg)
        return {
            "candidate_index": int(best),
            "point": rec.cstate.runtime.candidates[best].tolist(),
            "round": rec.cstate.round,
            "table": _table_doc(table),
            "seconds": secs,
        }

    @app.post("/sessions/{session_id}/suggest")
    def suggest(session_id: str, body: SuggestBody = None):
        body = body or SuggestBody()
        rec = get_record(session_id)
        lock = session_lock(session_id)
        with lock:
            if rec.cstate.round >= rec.config.budget:
                raise _error(409, "budget_exhausted",
                             "campaign budget already spent")
            if rec.pending_suggestion is not None and body.alpha is None:
                return rec.pending_suggestion
            if body.run_async:
                job_id = uuid.uuid4().hex[:10]
                jobs[job_id] = {"status": "pending", "result": None,
                                "session_id": session_id}

                def work():
                    try:
                        with lock:
                            if rec.pending_suggestion is None:
                                sug = compute_suggestion(rec, body.alpha)
                                if body.alpha is None:
                                    rec.pending_suggestion = sug
                                    store.save(rec)
                            else:
                                sug = rec.pending_suggestion
                        jobs[job_id].update(status="done", result=sug)
                    except Exception as exc:  # pragma: no cover
                        jobs[job_id].update(status="failed",
                                            result={"error": str(exc)})

                threading.Thread(target=work, daemon=True).start()
                return JSONResponse(status_code=202, content={
                    "job_id": job_id,
                    "status_url": f"/sessions/{session_id}/jobs/{job_id}"})
            sug = compute_suggestion(rec, body.alpha)
            if body.alpha is None:
                rec.pending_suggestion = sug
                store.save(rec)
            return sug

    @app.get("/sessions/{session_id}/jobs/{job_id}")
    def job_status(session_id: str, job_id: str):
        job = jobs.get(job_id)
        if job is None or job["session_id"] != session_id:
            raise _error(404, "unknown_job", f"no job {job_id!r}")
        return {"job_id": job_id, "status": job["status"],
                "result": job["result"]}

    @app.post("/sessions/{session_id}/observe")
    def observe(session_id: str, body: ObserveBody):
        rec = get_record(session_id)
        lock = session_lock(session_id)
        with lock:
            cstate = rec.cstate
            if rec.pending_suggestion is None:
                raise _error(409, "observe_before_suggest",
                             "call suggest before observe")
            if body.candidate_index not in cstate.remaining():
                raise _error(409, "invalid_candidate",
                             f"candidate {body.candidate_index} is not in "
                             "the remaining pool")
            b = cstate.round + 1
            if body.simulate:
                rng = np.random.default_rng(
                    camp.derived_seed(rec.config.seed, 6, b))
                y_new = cstate.scenario.respond(
                    cstate.runtime.candidates[body.candidate_index], rng)
            else:
                if body.y_new is None:
                    raise _error(422, "missing_observation",
                                 "y_new required unless simulate=true")
                y_new = np.asarray(body.y_new, dtype=float)
                if y_new.size != cstate.runtime.p:
                    raise _error(422, "bad_observation",
                                 f"expected {cstate.runtime.p} outputs")
                if not np.all(np.isfinite(y_new)):
                    raise _error(422, "bad_observation",
                                 "observation must be finite")
            try:
                new_state = camp.commit_ade(cstate, body.candidate_index,
                                            y_new, rec.config)
            except ValueError as exc:
                raise _error(409, "commit_failed", str(exc))
            rec.cstate = new_state
            rec.pending_suggestion = None
            truth = _truth_flat(new_state.scenario, rec.config)
            mse_b, crps_b = camp.compute_metrics(
                new_state, rec.config, truth,
                camp.derived_seed(rec.config.seed, 5, b))
            rec.metric_history.append({"round": b, "mse": mse_b,
                                       "crps": crps_b})
            store.save(rec)
            return {
                "round": new_state.round,
                "observed": np.asarray(y_new, dtype=float).ravel().tolist(),
                "candidate_index": body.candidate_index,
                "mse": mse_b,
                "crps": crps_b,
            }

    @app.get("/sessions/{session_id}/predictive")
    def predictive(session_id: str, grid: Optional[str] = Query(None)):
        rec = get_record(session_id)
        cstate = rec.cstate
        if grid is not None:
            try:
                pts = np.asarray([float(v) for v in grid.split(",")],
                                 dtype=float)[:, None]
            except ValueError:
                raise _error(422, "bad_grid",
                             "grid must be comma-separated numbers")
            from .model import KohModelState
            from .runtime import CampaignRuntime
            custom = KohModelState(cstate.model.data, cstate.model.model_def,
                                   cstate.model.phi1, pts)
            custom.posterior = cstate.model.posterior
            rt = CampaignRuntime(custom, cstate.runtime.candidates)
            base_state = custom
        else:
            rt = cstate.runtime
            base_state = cstate.model
        means, covs = rt.prediction_moments()
        mean = means.mean(axis=0)
        second = np.mean(means ** 2 + np.einsum("kii->ki", covs), axis=0)
        var = np.maximum(second - mean ** 2, 0.0)
        half = 1.959963984540054 * np.sqrt(var)
        n_star, p = rt.n_pred, rt.p
        grid_pts = base_state.prediction_grid[:, 0].tolist()
        outputs = []
        for t in range(p):
            sl = slice(t * n_star, (t + 1) * n_star)
            outputs.append({
                "mean": mean[sl].tolist(),
                "lower95": (mean[sl] - half[sl]).tolist(),
                "upper95": (mean[sl] + half[sl]).tolist(),
            })
        doc = {"grid": grid_pts, "outputs": outputs,
               "field_points": {
                   "x": cstate.model.data.x_p[:, 0].tolist(),
                   "y": cstate.model.data.y_p.tolist()}}
        return doc

    @app.get("/sessions/{session_id}/metrics")
    def metrics(session_id: str):
        rec = get_record(session_id)
        return {"history": rec.metric_history}

    return app


def _truth_flat(scenario, cfg) -> np.ndarray:
    truth = np.asarray(
        scenario.truth_on_grid(camp.derived_seed(cfg.seed, 0)), dtype=float)
    return truth.T.ravel() if truth.ndim == 2 else truth
