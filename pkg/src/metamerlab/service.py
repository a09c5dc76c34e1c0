"""HTTP experiment service: sessions, trial sequencing, durable responses.

Persistence is deliberately plain: one directory per session holding a JSON
manifest and an append-only JSONL record log. A response is written and
flushed to disk before it is acknowledged, and replaying the log rebuilds
the session cursor exactly, so the service can restart mid-experiment.
Mutations are serialized per session; stimulus files are served read-only,
addressed by content hash so clients can preload and cache them.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Header, HTTPException
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from .experiment import (MATCH2AFC, ODDITY, DisplayGeometry,
                         ExperimentConfig, TrialRecord, TrialSpec, deg_to_px,
                         generate_trials, score_session, table_to_csv)
from .stimuli import StimulusSet

SCHEMA_VERSION = 1


class SessionError(Exception):
    def __init__(self, status: int, code: str, message: str, extra=None):
        self.status = status
        self.code = code
        self.message = message
        self.extra = extra or {}
        super().__init__(message)


@dataclass
class Session:
    session_id: str
    subject: str
    config: ExperimentConfig
    specs: list[TrialSpec]
    geometry: DisplayGeometry | None = None
    records: list[TrialRecord] = field(default_factory=list)
    status: str = "active"              # active | paused | complete
    created_at: float = 0.0
    updated_at: float = 0.0

    @property
    def cursor(self) -> int:
        return len(self.records)

    def manifest(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": self.session_id,
            "subject": self.subject,
            "status": self.status,
            "config": self.config.to_dict(),
            "geometry": self.geometry.to_dict() if self.geometry else None,
            "schedule": [s.to_dict() for s in self.specs],
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }


class SessionStore:
    """Disk-backed session registry with per-session write locks."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()
        self.sessions: dict[str, Session] = {}
        self._idempotency: dict[str, str] = {}
        self._load_idempotency()
        for manifest in sorted(self.root.glob("*/manifest.json")):
            self._replay(manifest.parent)

    # -- persistence --------------------------------------------------------

    def _dir(self, session_id: str) -> Path:
        return self.root / session_id

    def _load_idempotency(self):
        path = self.root / "idempotency.json"
        if path.exists():
            self._idempotency = json.loads(path.read_text())

    def _save_idempotency(self):
        (self.root / "idempotency.json").write_text(
            json.dumps(self._idempotency, sort_keys=True))

    def _replay(self, session_dir: Path):
        doc = json.loads((session_dir / "manifest.json").read_text())
        config = ExperimentConfig.from_dict(doc["config"])
        specs = [TrialSpec.from_dict(s) for s in doc["schedule"]]
        geometry = (DisplayGeometry.from_dict(doc["geometry"])
                    if doc.get("geometry") else None)
        session = Session(doc["session_id"], doc["subject"], config, specs,
                          geometry=geometry, status=doc.get("status", "active"),
                          created_at=doc.get("created_at", 0.0),
                          updated_at=doc.get("updated_at", 0.0))
        log = session_dir / "records.jsonl"
        if log.exists():
            with log.open() as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    rec.pop("schema_version", None)
                    session.records.append(TrialRecord(**rec))
        if session.cursor >= len(session.specs):
            session.status = "complete"
        self.sessions[session.session_id] = session

    def lock(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(session_id, threading.Lock())

    def persist_manifest(self, session: Session):
        d = self._dir(session.session_id)
        d.mkdir(parents=True, exist_ok=True)
        tmp = d / "manifest.json.tmp"
        tmp.write_text(json.dumps(session.manifest(), sort_keys=True))
        os.replace(tmp, d / "manifest.json")

    def append_record(self, session: Session, record: TrialRecord):
        """Write-ahead: the record hits disk before the caller acknowledges."""
        log = self._dir(session.session_id) / "records.jsonl"
        payload = {"schema_version": SCHEMA_VERSION, **record.to_dict()}
        with log.open("a") as fh:
            fh.write(json.dumps(payload, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        session.records.append(record)

    # -- operations ----------------------------------------------------------

    def create_session(self, subject: str, config: ExperimentConfig,
                       geometry: DisplayGeometry | None, sset: StimulusSet,
                       idempotency_key: str | None = None,
                       seed: int | None = None) -> Session:
        with self._registry_lock:
            if idempotency_key and idempotency_key in self._idempotency:
                return self.sessions[self._idempotency[idempotency_key]]
        if config.task == MATCH2AFC:
            done_oddity = any(
                s.subject == subject and s.config.task == ODDITY
                and s.status == "complete" for s in self.sessions.values())
            if not done_oddity:
                raise SessionError(
                    409, "oddity_first",
                    "matching sessions require a completed oddity session "
                    "for this subject first")
        if seed is not None:
            config.seed = seed
        specs = generate_trials(config, sset)
        session = Session(session_id=uuid.uuid4().hex[:12], subject=subject,
                          config=config, specs=specs, geometry=geometry,
                          created_at=time.time(), updated_at=time.time())
        self.persist_manifest(session)     # durable before the id is returned
        with self._registry_lock:
            self.sessions[session.session_id] = session
            if idempotency_key:
                self._idempotency[idempotency_key] = session.session_id
                self._save_idempotency()
        return session

    def get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise SessionError(404, "unknown_session",
                               f"no session {session_id!r}")
        return session

    def submit(self, session_id: str, trial_id: str, response_index: int,
               telemetry: dict | None) -> TrialRecord:
        session = self.get(session_id)
        with self.lock(session_id):
            if session.status == "complete":
                raise SessionError(409, "session_complete",
                                   "session already complete")
            spec = session.specs[session.cursor]
            for rec in session.records:
                if rec.trial_id == trial_id:
                    raise SessionError(409, "duplicate_response",
                                       "trial already answered",
                                       extra={"record": rec.to_dict()})
            if trial_id != spec.id:
                raise SessionError(409, "out_of_order",
                                   f"expected trial {spec.id!r}, got {trial_id!r}")
            if not 0 <= response_index < spec.n_choices:
                raise SessionError(400, "bad_response",
                                   f"response index {response_index} invalid "
                                   f"for task {spec.task}")
            record = self._score(session, spec, response_index, telemetry)
            self.append_record(session, record)
            if session.cursor >= len(session.specs):
                session.status = "complete"
            session.updated_at = time.time()
            self.persist_manifest(session)
            return record

    def _score(self, session: Session, spec: TrialSpec, response_index: int,
               telemetry: dict | None) -> TrialRecord:
        valid = isinstance(telemetry, dict) and isinstance(
            telemetry.get("intervals_ms"), list)
        suspect = False
        timestamps: list[float] = []
        if valid:
            budget = 1000.0 / session.config.refresh_hz
            nominal = nominal_intervals(session.config)
            measured = telemetry["intervals_ms"]
            if len(measured) != len(nominal) or not all(
                    isinstance(v, (int, float)) for v in measured):
                valid = False
            else:
                suspect = any(abs(m - n) > budget + 1e-9
                              for m, n in zip(measured, nominal))
                t = 0.0
                for m in measured:
                    timestamps.append(t)
                    t += max(float(m), 1e-3)
                timestamps.append(t)
        rt = None
        if isinstance(telemetry, dict) and isinstance(
                telemetry.get("response_time_ms"), (int, float)):
            rt = float(telemetry["response_time_ms"])
        return TrialRecord(
            trial_id=spec.id, response_index=response_index,
            correct=response_index == spec.correct_index,
            response_time_ms=rt, interval_timestamps=timestamps,
            session_id=session.session_id, timing_suspect=suspect,
            telemetry_valid=valid)


def nominal_intervals(config: ExperimentConfig) -> list[float]:
    """Planned presentation intervals (ms) for one trial of this task."""
    s, m = float(config.stimulus_ms), float(config.mask_ms)
    if config.task == ODDITY:
        return [s, m, s, m, s]
    return [s, m, s]


# ---------------------------------------------------------------------------
# FastAPI app
# ---------------------------------------------------------------------------

class CreateSessionBody(BaseModel):
    subject: str
    config: dict
    geometry: dict | None = None
    idempotency_key: str | None = None
    seed: int | None = None


class GeometryBody(BaseModel):
    screen_px: list[int]
    screen_cm: list[float]
    viewing_distance_cm: float


class ResponseBody(BaseModel):
    trial_id: str
    response_index: int
    telemetry: dict | None = None


def create_app(sset: StimulusSet, sessions_dir: str | Path,
               token: str | None = None) -> FastAPI:
    """Build the experiment service around one stimulus set.

    ``token``, when set, must match the X-Experimenter-Token header on
    session creation (shared-secret gate, nothing fancier).
    """
    app = FastAPI(title="metamerlab experiment service")
    store = SessionStore(sessions_dir)
    app.state.store = store
    hash_to_entry = {}

    def stimulus_url(ref) -> str:
        entry = sset.get(ref.class_name, ref.image_id, ref.family, ref.seed)
        if entry is None:
            raise SessionError(500, "missing_stimulus",
                               f"stimulus absent from set: {ref}")
        digest = sset.content_hash(entry)
        hash_to_entry[digest] = entry
        return f"/stimuli/{digest}.png"

    @app.exception_handler(SessionError)
    async def _session_error(request, exc: SessionError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message,
                                     **exc.extra})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "sessions": len(store.sessions)}

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody,
                       x_experimenter_token: str | None = Header(default=None)):
        if token is not None and x_experimenter_token != token:
            raise SessionError(401, "bad_token", "experimenter token required")
        config = ExperimentConfig.from_dict(body.config)
        geometry = DisplayGeometry.from_dict(body.geometry) if body.geometry else None
        session = store.create_session(body.subject, config, geometry, sset,
                                       idempotency_key=body.idempotency_key,
                                       seed=body.seed)
        return {"session_id": session.session_id, "status": session.status,
                "n_trials": len(session.specs), "cursor": session.cursor}

    @app.put("/sessions/{session_id}/geometry")
    def set_geometry(session_id: str, body: GeometryBody):
        session = store.get(session_id)
        with store.lock(session_id):
            session.geometry = DisplayGeometry(
                tuple(body.screen_px), tuple(body.screen_cm),
                body.viewing_distance_cm)
            store.persist_manifest(session)
        g = session.geometry
        return {"session_id": session_id,
                "px_per_degree": deg_to_px(1.0, g),
                "stimulus_px": deg_to_px(session.config.stimulus_deg, g)}

    @app.get("/sessions/{session_id}/next")
    def next_trial(session_id: str):
        session = store.get(session_id)
        if session.cursor >= len(session.specs):
            return {"done": True, "status": "complete",
                    "n_trials": len(session.specs)}
        spec = session.specs[session.cursor]
        payload = spec.to_dict()
        payload["stimulus_urls"] = [stimulus_url(ref) for ref in spec.stimuli]
        cfg = session.config
        placement = None
        if session.geometry is not None:
            ecc_px = deg_to_px(spec.eccentricity_deg, session.geometry)
            size_px = deg_to_px(cfg.stimulus_deg, session.geometry)
            sign = -1.0 if spec.side == "left" else 1.0
            placement = {"eccentricity_px": ecc_px, "offset_x_px": sign * ecc_px,
                         "offset_y_px": 0.0, "stimulus_px": size_px}
        return {"done": False, "trial": payload, "cursor": session.cursor,
                "n_trials": len(session.specs),
                "timing": {"stimulus_ms": cfg.stimulus_ms,
                           "mask_ms": cfg.mask_ms, "iti_ms": cfg.iti_ms,
                           "intervals_ms": nominal_intervals(cfg),
                           "refresh_hz": cfg.refresh_hz},
                "placement_px": placement}

    @app.post("/sessions/{session_id}/responses")
    def submit_response(session_id: str, body: ResponseBody):
        record = store.submit(session_id, body.trial_id, body.response_index,
                              body.telemetry)
        session = store.get(session_id)
        return {"record": record.to_dict(), "cursor": session.cursor,
                "status": session.status}

    @app.get("/sessions/{session_id}/results")
    def results(session_id: str, format: str = "json"):
        session = store.get(session_id)
        table = score_session(session.records, session.specs)
        if format == "csv":
            return JSONResponse(content={"csv": table_to_csv(table)})
        return {"session_id": session_id, "status": session.status,
                "cells": [{"condition": cond, "eccentricity_deg": ecc, **cell}
                          for (cond, ecc), cell in sorted(table.items())],
                "n_records": len(session.records)}

    @app.get("/stimuli/{digest}.png")
    def stimulus(digest: str):
        entry = hash_to_entry.get(digest)
        if entry is None:
            for e in sset.entries:
                if sset.content_hash(e) == digest:
                    entry = e
                    hash_to_entry[digest] = e
                    break
        if entry is None:
            raise HTTPException(status_code=404, detail="unknown stimulus")
        return FileResponse(entry.path, media_type="image/png")

    return app
