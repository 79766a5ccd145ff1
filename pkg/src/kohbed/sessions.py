"""Session persistence: one JSON document per design session on disk.

Documents round-trip every numeric field exactly (Python's JSON encoder
emits shortest-round-trip decimal for IEEE-754 doubles), so a service
restart reproduces the in-memory state bit for bit.
"""

from __future__ import annotations

import json
import time
import uuid
from pathlib import Path
from typing import Optional

import numpy as np

from .campaign import CampaignConfig, CampaignState
from .linalg import KernelSpec
from .model import KohData, KohModelState, PosteriorSample
from .runtime import CampaignRuntime
from .scenarios import load_scenario

SCHEMA_VERSION = 1


def kernel_spec_to_doc(spec: KernelSpec) -> dict:
    doc = {
        "family": spec.family,
        "lengthscales": np.asarray(spec.lengthscales).tolist(),
        "variance": spec.variance,
        "period": spec.period,
        "periodic_lengthscale": spec.periodic_lengthscale,
        "task_covariance": None if spec.task_covariance is None
        else np.asarray(spec.task_covariance).tolist(),
        "base": None if spec.base is None else kernel_spec_to_doc(spec.base),
    }
    return doc


def kernel_spec_from_doc(doc: dict) -> KernelSpec:
    return KernelSpec(
        family=doc["family"],
        lengthscales=np.asarray(doc["lengthscales"], dtype=float),
        variance=doc["variance"],
        period=doc["period"],
        periodic_lengthscale=doc["periodic_lengthscale"],
        task_covariance=None if doc["task_covariance"] is None
        else np.asarray(doc["task_covariance"], dtype=float),
        base=None if doc["base"] is None
        else kernel_spec_from_doc(doc["base"]))


def state_to_doc(state: KohModelState) -> dict:
    d = state.data
    return {
        "data": {
            "x_p": d.x_p.tolist(), "y_p": d.y_p.tolist(),
            "x_c": d.x_c.tolist(), "t": d.t.tolist(),
            "y_s": d.y_s.tolist(),
        },
        "phi1": kernel_spec_to_doc(state.phi1),
        "prediction_grid": state.prediction_grid.tolist(),
        "posterior": [
            {"theta": s.theta.tolist(), "phi2": s.phi2.tolist(),
             "sigma2": s.sigma2}
            for s in state.posterior],
    }


def state_from_doc(doc: dict, scenario) -> KohModelState:
    d = doc["data"]
    data = KohData(np.asarray(d["x_p"], dtype=float),
                   np.asarray(d["y_p"], dtype=float),
                   np.asarray(d["x_c"], dtype=float),
                   np.asarray(d["t"], dtype=float),
                   np.asarray(d["y_s"], dtype=float))
    state = KohModelState(data, scenario.model_def(),
                          kernel_spec_from_doc(doc["phi1"]),
                          np.asarray(doc["prediction_grid"], dtype=float))
    state.posterior = [
        PosteriorSample(np.asarray(s["theta"], dtype=float),
                        np.asarray(s["phi2"], dtype=float),
                        float(s["sigma2"]))
        for s in doc["posterior"]]
    return state


class SessionRecord:
    """One persisted design session."""

    def __init__(self, session_id: str, scenario_ref: dict,
                 config: CampaignConfig, cstate: CampaignState,
                 pending_suggestion: Optional[dict] = None,
                 created: Optional[float] = None):
        self.session_id = session_id
        self.scenario_ref = scenario_ref
        self.config = config
        self.cstate = cstate
        self.pending_suggestion = pending_suggestion
        self.created = created if created is not None else time.time()
        self.updated = self.created
        self.metric_history: list = []

    def to_doc(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": self.session_id,
            "created": self.created,
            "updated": self.updated,
            "scenario": self.scenario_ref,
            "config": self.config.to_json_dict(),
            "state": state_to_doc(self.cstate.model),
            "selected": self.cstate.selected,
            "round": self.cstate.round,
            "pending_suggestion": self.pending_suggestion,
            "metric_history": self.metric_history,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "SessionRecord":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError("unsupported session schema version")
        scenario = load_scenario(doc["scenario"]["name"],
                                 **doc["scenario"].get("params", {}))
        config = CampaignConfig.from_json_dict(doc["config"])
        model = state_from_doc(doc["state"], scenario)
        runtime = CampaignRuntime(model, scenario.candidates())
        for s in doc["selected"]:
            runtime.selected.append(s["candidate_index"])
        cstate = CampaignState(model, scenario, runtime,
                               list(doc["selected"]), int(doc["round"]))
        rec = cls(doc["session_id"], doc["scenario"], config, cstate,
                  doc.get("pending_suggestion"), doc["created"])
        rec.updated = doc["updated"]
        rec.metric_history = list(doc.get("metric_history", []))
        return rec


class SessionStore:
    """Directory of session JSON files; one writer per session."""

    def __init__(self, root: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.json"

    def new_id(self) -> str:
        return uuid.uuid4().hex[:12]

    def save(self, rec: SessionRecord):
        rec.updated = time.time()
        tmp = self._path(rec.session_id).with_suffix(".tmp")
        tmp.write_text(json.dumps(rec.to_doc()))
        tmp.replace(self._path(rec.session_id))

    def load(self, session_id: str) -> SessionRecord:
        path = self._path(session_id)
        if not path.exists():
            raise KeyError(session_id)
        return SessionRecord.from_doc(json.loads(path.read_text()))

    def exists(self, session_id: str) -> bool:
        return self._path(session_id).exists()

    def list_ids(self):
        return sorted(p.stem for p in self.root.glob("*.json"))
