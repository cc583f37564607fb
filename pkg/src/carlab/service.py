"""HTTP allocation service: live sequential trials over a JSON API.

State is event-sourced: every enrollment is appended (and fsynced) to a
per-trial JSONL log before the response goes out, and a restarted server
rebuilds each trial by strict replay of its log.  Mutating endpoints on one
trial serialize behind a per-trial lock; different trials proceed in
parallel.  Optional bearer-token auth is enabled by setting CAR_TOKEN.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
import uuid
from pathlib import Path
from typing import Dict, Optional

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse

from . import __version__
from .config import TrialConfig, parse_trial_config
from .engine import TrialState, enroll, new_trial, replay, snapshot, whatif
from .errors import ConfigError, CorruptLog, InvalidInput

_NAME_RE = re.compile(r"[^a-zA-Z0-9_.-]+")


def _slug(name: str) -> str:
    return _NAME_RE.sub("-", name).strip("-") or "trial"


class ApiError(Exception):
    """Maps directly onto the JSON error envelope {code, message, path}."""

    def __init__(self, status: int, code: str, message: str, path: str = ""):
        self.status = status
        self.code = code
        self.message = message
        self.path = path
        super().__init__(message)


class TrialRecord:
    """One live trial: parsed config, engine state, and its append-only log."""

    def __init__(self, trial_id: str, cfg: TrialConfig, log_path: Path, created_at: float):
        self.trial_id = trial_id
        self.cfg = cfg
        self.log_path = log_path
        self.created_at = created_at
        self.lock = threading.Lock()
        self.trial: TrialState = new_trial(
            rho=cfg.rho, fmap=cfg.fmap, policy=cfg.build_policy(), base_seed=cfg.seed
        )

    def restore(self) -> None:
        lines = [
            ln
            for ln in self.log_path.read_text(encoding="utf-8").splitlines()
            if ln.strip()
        ]
        self.trial = replay(
            lines,
            rho=self.cfg.rho,
            fmap=self.cfg.fmap,
            policy=self.cfg.build_policy(),
            base_seed=self.cfg.seed,
        )

    def append_event(self, event) -> None:
        # write-ahead: the event must be durable before the response leaves
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(event.to_json() + "\n")
            fh.flush()
            os.fsync(fh.fileno())


class TrialStore:
    """Directory-backed registry of trials.

    Layout: <data_dir>/trials.json maps trial_id -> {config, log, created_at};
    each trial's events live in their own JSONL file next to it.
    """

    def __init__(self, data_dir: str):
        self.root = Path(data_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "trials.json"
        self.registry_lock = threading.Lock()
        self.trials: Dict[str, TrialRecord] = {}
        self._load()

    def _load(self) -> None:
        if not self.index_path.exists():
            return
        index = json.loads(self.index_path.read_text(encoding="utf-8"))
        for trial_id, meta in index.items():
            cfg = parse_trial_config(meta["config"])
            rec = TrialRecord(
                trial_id, cfg, self.root / meta["log"], float(meta["created_at"])
            )
            if rec.log_path.exists():
                rec.restore()
            self.trials[trial_id] = rec

    def _write_index(self) -> None:
        index = {
            tid: {
                "config": rec.cfg.doc,
                "log": rec.log_path.name,
                "created_at": rec.created_at,
            }
            for tid, rec in self.trials.items()
        }
        tmp = self.index_path.with_suffix(".json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(index, fh, indent=2)
            fh.flush()
            os.fsync(fh.fileno())
        tmp.replace(self.index_path)

    def create(self, doc: dict) -> TrialRecord:
        try:
            cfg = parse_trial_config(doc)
        except ConfigError as exc:
            raise ApiError(400, "config", str(exc), exc.path)
        with self.registry_lock:
            if cfg.name is not None:
                for rec in self.trials.values():
                    if rec.cfg.name == cfg.name:
                        raise ApiError(
                            409, "duplicate", f"a trial named {cfg.name!r} already exists", "name"
                        )
            trial_id = uuid.uuid4().hex[:12]
            log_name = f"{_slug(cfg.name or trial_id)}-{trial_id}.jsonl"
            rec = TrialRecord(trial_id, cfg, self.root / log_name, time.time())
            rec.log_path.touch()
            self.trials[trial_id] = rec
            self._write_index()
            return rec

    def get(self, trial_id: str) -> TrialRecord:
        rec = self.trials.get(trial_id)
        if rec is None:
            raise ApiError(404, "not_found", f"no trial with id {trial_id!r}", "trial_id")
        return rec


def _parse_covariates(body: dict) -> list:
    if not isinstance(body, dict) or "x" not in body:
        raise ApiError(400, "schema", "body must be {\"x\": [x1, ...]}", "x")
    x = body["x"]
    if not isinstance(x, list) or not x:
        raise ApiError(400, "schema", "x must be a nonempty array of numbers", "x")
    try:
        return [float(v) for v in x]
    except (TypeError, ValueError):
        raise ApiError(400, "schema", "x must contain only numbers", "x")


def create_app(data_dir: str = "./carlab_data") -> FastAPI:
    """Build the API application; one TrialStore per app instance."""
    store = TrialStore(data_dir)
    app = FastAPI(title="carlab allocation service", version=__version__)
    app.state.store = store
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "path": exc.path},
        )

    @app.middleware("http")
    async def _auth(request: Request, call_next):
        token = os.environ.get("CAR_TOKEN", "")
        if token and request.url.path != "/health":
            supplied = request.headers.get("authorization", "")
            if supplied != f"Bearer {token}":
                return JSONResponse(
                    status_code=401,
                    content={"code": "auth", "message": "missing or bad bearer token", "path": ""},
                )
        return await call_next(request)

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__, "trials": len(store.trials)}

    @app.post("/trials", status_code=201)
    async def create_trial(request: Request):
        try:
            doc = await request.json()
        except json.JSONDecodeError:
            raise ApiError(400, "schema", "request body is not valid JSON", "")
        rec = store.create(doc)
        return {"trial_id": rec.trial_id, "name": rec.cfg.name, "created_at": rec.created_at}

    @app.get("/trials")
    def list_trials():
        out = []
        for rec in store.trials.values():
            out.append(
                {
                    "trial_id": rec.trial_id,
                    "name": rec.cfg.name,
                    "n": rec.trial.imbalance.n,
                    "policy": rec.trial.policy.kind,
                    "created_at": rec.created_at,
                }
            )
        out.sort(key=lambda r: r["created_at"])
        return {"trials": out}

    @app.get("/trials/{trial_id}")
    def get_trial(trial_id: str):
        rec = store.get(trial_id)
        with rec.lock:
            snap = snapshot(rec.trial)
        snap["trial_id"] = rec.trial_id
        snap["name"] = rec.cfg.name
        snap["created_at"] = rec.created_at
        snap["config"] = rec.cfg.doc
        return snap

    @app.post("/trials/{trial_id}/units")
    async def enroll_unit(trial_id: str, request: Request):
        rec = store.get(trial_id)
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise ApiError(400, "schema", "request body is not valid JSON", "")
        x = _parse_covariates(body)
        expected = body.get("expected_unit_index")
        if expected is not None:
            try:
                expected = int(expected)
            except (TypeError, ValueError):
                raise ApiError(
                    400, "schema", "expected_unit_index must be an integer", "expected_unit_index"
                )
        with rec.lock:
            if expected is not None and expected != rec.trial.imbalance.n + 1:
                raise ApiError(
                    409,
                    "stale",
                    f"expected_unit_index {expected} but next unit is {rec.trial.imbalance.n + 1}",
                    "expected_unit_index",
                )
            try:
                event = enroll(rec.trial, x)
            except InvalidInput as exc:
                raise ApiError(400, "invalid", str(exc), "x")
            rec.append_event(event)
            snap = snapshot(rec.trial)
        return {
            "unit_index": event.unit_index,
            "arm": event.arm,
            "prob": event.prob,
            "lambda": list(event.lam),
            "theta_summary": snap.get("theta"),
            "warmup_remaining": snap["warmup_remaining"],
        }

    @app.post("/trials/{trial_id}/whatif")
    async def whatif_unit(trial_id: str, request: Request):
        rec = store.get(trial_id)
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise ApiError(400, "schema", "request body is not valid JSON", "")
        x = _parse_covariates(body)
        with rec.lock:
            try:
                preview = whatif(rec.trial, x)
            except InvalidInput as exc:
                raise ApiError(400, "invalid", str(exc), "x")
        return preview

    @app.get("/trials/{trial_id}/events")
    def get_events(trial_id: str, request: Request):
        rec = store.get(trial_id)
        params = request.query_params
        try:
            start = int(params.get("from", 0))
            limit = int(params["limit"]) if "limit" in params else None
        except ValueError:
            raise ApiError(400, "schema", "from and limit must be integers", "from")
        if start < 0 or (limit is not None and limit < 0):
            raise ApiError(400, "schema", "from and limit must be nonnegative", "from")
        with rec.lock:
            events = rec.trial.events[start:]
            if limit is not None:
                events = events[:limit]
            body = "".join(ev.to_json() + "\n" for ev in events)
        return PlainTextResponse(body, media_type="application/x-ndjson")

    return app
