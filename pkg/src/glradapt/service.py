"""Trial-conductor HTTP service.

One JSON document per session on disk, written via temp file + atomic
rename; state is never stored, it is replayed from the audit log through
the design rules on every read, so the log is the single source of truth.
Mutations are serialized per session id; reads work on the on-disk
snapshot without locking.

Endpoints: POST /trials, GET /trials, GET /trials/{id},
POST /trials/{id}/stages, GET /healthz.  Errors: {code, message, field?}.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
import uuid
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import serialize
from .design import DesignSpec, Thresholds, TrialState, step
from .errors import GlrAdaptError, InfeasibilityError, NumericError, SchemaError
from .models import StageStat

_SESSION_SCHEMA = 1


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str, field: str | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.field = field

    def body(self) -> dict:
        doc = {"code": self.code, "message": str(self)}
        if self.field is not None:
            doc["field"] = self.field
        return doc


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class StagePayload(BaseModel):
    n: int = Field(ge=1)
    s: list[float]
    ss: list[float] | None = None

    def to_stat(self) -> StageStat:
        return StageStat(n=self.n, s=tuple(self.s),
                         ss=tuple(self.ss) if self.ss is not None else None)


class SessionStore:
    """Directory of session documents, one file per id."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._registry_lock = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}
        self._known: set[str] = {p.stem for p in self.root.glob("*.json")}

    def _lock_for(self, sid: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(sid, threading.Lock())

    def _path(self, sid: str) -> Path:
        return self.root / f"{sid}.json"

    def _write(self, doc: dict) -> None:
        path = self._path(doc["id"])
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(doc, fh, indent=2)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    def _read(self, sid: str) -> dict:
        path = self._path(sid)
        known = sid in self._known
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            if known:
                raise ServiceError(500, "storage", f"session file for {sid} is missing") from None
            raise ServiceError(404, "not_found", f"no session {sid}") from None
        except (OSError, json.JSONDecodeError) as e:
            raise ServiceError(500, "storage", f"cannot load session {sid}: {e}") from e

    # -------------------------------------------------------- operations

    def create(self, design_doc: dict, thresholds: dict | None) -> dict:
        spec = serialize.parse_document(design_doc)
        if not isinstance(spec, DesignSpec):
            raise SchemaError("trial creation needs a 'design' document")
        if thresholds is not None:
            th = Thresholds.from_dict(thresholds)
            report_doc = None
        else:
            from .cli import calibrate_design  # worker-thread context via FastAPI

            report = calibrate_design(spec)
            th = report.thresholds
            report_doc = report.to_dict()
        doc = {
            "schema_version": _SESSION_SCHEMA,
            "id": uuid.uuid4().hex,
            "created_at": _now(),
            "design": spec.to_dict(),
            "thresholds": th.to_dict(),
            "calibration": report_doc,
            "audit_log": [],
        }
        self._write(doc)
        with self._registry_lock:
            self._known.add(doc["id"])
        return doc

    def get(self, sid: str) -> dict:
        return self._read(sid)

    def list_ids(self) -> list[str]:
        with self._registry_lock:
            return sorted(self._known)

    def submit(self, sid: str, payload: StagePayload) -> tuple[dict, dict]:
        with self._lock_for(sid):
            doc = self._read(sid)
            spec, th, state = _materialize(doc)
            if state.status != "open":
                raise ServiceError(409, "terminal", f"trial already {state.status}")
            expected = state.planned_n if state.planned_n is not None else spec.m
            stat = payload.to_stat()
            try:
                spec.model.validate_stat(stat)
            except ValueError as e:
                raise SchemaError(str(e)) from e
            if spec.model.n_units(stat) != expected:
                raise ServiceError(
                    409, "wrong_increment",
                    f"stage {state.stage} must report cumulative n={expected}, "
                    f"got {spec.model.n_units(stat)}")
            record = step(spec, th, state, stat)
            entry = {
                "at": _now(),
                "stage": record.stage,
                "stat": stat.to_dict(),
                "decision": record.decision.value,
                "next_n": record.next_n,
            }
            doc["audit_log"].append(entry)
            self._write(doc)
            return entry, doc


def _materialize(doc: dict) -> tuple[DesignSpec, Thresholds, TrialState]:
    """Rebuild the trial purely from the persisted design + audit log."""
    try:
        spec = DesignSpec.from_dict(doc["design"])
        th = Thresholds.from_dict(doc["thresholds"])
    except (KeyError, TypeError, ValueError) as e:
        raise ServiceError(500, "storage", f"corrupt session document: {e}") from e
    state = TrialState()
    for entry in doc["audit_log"]:
        record = step(spec, th, state, StageStat.from_dict(entry["stat"]))
        if record.decision.value != entry["decision"]:
            raise ServiceError(
                500, "storage",
                f"audit log replay diverged at stage {record.stage}: "
                f"log says {entry['decision']}, rules say {record.decision.value}")
    return spec, th, state


def _session_view(doc: dict) -> dict:
    spec, th, state = _materialize(doc)
    view = {
        "id": doc["id"],
        "created_at": doc["created_at"],
        "design": doc["design"],
        "thresholds": doc["thresholds"],
        "implied": {"u1": spec.resolved_u1()},
        "m": spec.m,
        "M": spec.M,
        "max_stages": spec.max_stages(),
        "status": state.status,
        "stage": state.stage,
        "audit_log": doc["audit_log"],
    }
    if spec.four_stage:
        view["implied"]["u2"] = spec.resolved_u2()
        view["M_prime"] = spec.M_prime
        view["M_tilde"] = spec.M_tilde
    if state.status == "open":
        view["pending"] = {
            "stage": state.stage,
            "cumulative_n": state.planned_n if state.planned_n is not None else spec.m,
        }
    return view


def create_app(data_dir: str | None = None) -> FastAPI:
    root = data_dir or os.environ.get("GLR_ADAPT_DATA_DIR") or "./glradapt_sessions"
    store = SessionStore(root)
    app = FastAPI(title="glradapt trial conductor", version="1.0")
    app.state.store = store

    @app.exception_handler(ServiceError)
    async def _service_error(_req: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content=exc.body())

    @app.exception_handler(GlrAdaptError)
    async def _domain_error(_req: Request, exc: GlrAdaptError):
        status = 400
        if isinstance(exc, InfeasibilityError):
            status = 422
        elif isinstance(exc, NumericError):
            status = 500
        body = {"code": exc.code, "message": str(exc)}
        field = getattr(exc, "field", None)
        if field is not None:
            body["field"] = field
        return JSONResponse(status_code=status, content=body)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_req: Request, exc: RequestValidationError):
        errs = exc.errors()
        field = ".".join(str(p) for p in errs[0]["loc"][1:]) if errs else None
        msg = errs[0]["msg"] if errs else "invalid request body"
        body = {"code": "schema", "message": msg}
        if field:
            body["field"] = field
        return JSONResponse(status_code=400, content=body)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "sessions": len(store.list_ids())}

    @app.post("/trials", status_code=201)
    def create_trial(body: dict):
        thresholds = body.pop("thresholds", None)
        doc = store.create(body, thresholds)
        return _session_view(doc)

    @app.get("/trials")
    def list_trials(offset: int = 0, limit: int = 50):
        if offset < 0 or limit < 1:
            raise ServiceError(400, "schema", "offset must be >= 0 and limit >= 1")
        ids = store.list_ids()
        page = []
        for sid in ids[offset:offset + limit]:
            doc = store.get(sid)
            view = _session_view(doc)
            page.append({k: view[k] for k in
                         ("id", "created_at", "status", "stage", "m", "M")})
        return {"sessions": page, "total": len(ids), "offset": offset, "limit": limit}

    @app.get("/trials/{sid}")
    def get_trial(sid: str):
        return _session_view(store.get(sid))

    @app.post("/trials/{sid}/stages")
    def submit_stage(sid: str, payload: StagePayload):
        entry, doc = store.submit(sid, payload)
        return {
            "decision": entry["decision"],
            "stage": entry["stage"],
            "next_n": entry["next_n"],
            "session": _session_view(doc),
        }

    return app
