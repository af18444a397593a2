"""HTTP gateway: the service surface over a runtime of callers.

All endpoints live under /v1 and speak JSON. Authentication is a static
API-key table mapped to roles (header ``X-Api-Key``); an unknown key is
rejected outright rather than downgraded to a read-only role. Every error
body has the shape ``{"error": {"code": ..., "message": ...}}``.

Gateway calls take the surrogate path through the pipeline, so context
providers run server-side; anytime calls stream as server-sent events, one
``data:`` line per emission.
"""

from __future__ import annotations

import importlib
import json
import logging
import os
import socket
import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from typing import Dict, Optional

import uvicorn
from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse, StreamingResponse

from . import persistence, quality, transformation
from .core import (
    METHOD_COLLAB_ANSWER,
    METHOD_EVALUATE,
    METHOD_READ,
    METHOD_TRAIN,
    CallerConfig,
    Runtime,
)
from .datastore import DatasetSelector
from .ensemble import CollabState
from .errors import (
    AggregationError,
    AuthenticationError,
    AuthorizationError,
    CallError,
    ConfigError,
    ConflictError,
    McallError,
    NotFoundError,
    PersistenceError,
    SignatureError,
    ValidationError,
)
from .quality import Matcher, TrainSpec
from .records import Signature

log = logging.getLogger(__name__)

ERROR_STATUS = (
    (AuthenticationError, 401),
    (AuthorizationError, 403),
    (NotFoundError, 404),
    (ConflictError, 409),
    (AggregationError, 409),
    (CallError, 409),
    (ConfigError, 422),
    (SignatureError, 422),
    (ValidationError, 422),
    (PersistenceError, 500),
)


def _status_for(exc: McallError) -> int:
    for etype, status in ERROR_STATUS:
        if isinstance(exc, etype):
            return status
    return 500


def _error_response(exc: McallError) -> JSONResponse:
    return JSONResponse(status_code=_status_for(exc),
                        content={"error": {"code": exc.code, "message": str(exc)}})


async def _body(request: Request) -> dict:
    try:
        doc = await request.json()
    except Exception:
        raise ValidationError("request body must be a JSON object") from None
    if not isinstance(doc, dict):
        raise ValidationError("request body must be a JSON object")
    return doc


def create_app(runtime: Runtime, api_keys: Dict[str, str],
               persistence_dir: Optional[str] = None) -> FastAPI:
    """The gateway application over an existing runtime."""

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        if persistence_dir:
            persistence.persist_all(runtime, persistence_dir)

    app = FastAPI(title="mcall gateway", lifespan=lifespan)
    app.state.runtime = runtime
    # The supervision console is a browser client; auth is the key header.
    from fastapi.middleware.cors import CORSMiddleware
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["X-Api-Key", "Content-Type"])

    @app.exception_handler(McallError)
    async def on_mcall_error(_request: Request, exc: McallError):
        return _error_response(exc)

    def principal(request: Request) -> str:
        key = request.headers.get("X-Api-Key")
        if key is None or key not in api_keys:
            raise AuthenticationError("unknown API key")
        return api_keys[key]

    def reader(request: Request) -> str:
        role = principal(request)
        runtime.require(role, METHOD_READ)
        return role

    # -- callers -------------------------------------------------------------

    @app.post("/v1/callers")
    async def create_caller(request: Request):
        role = principal(request)
        doc = await _body(request)
        if "name" not in doc or "signature" not in doc:
            raise ValidationError("caller creation needs 'name' and 'signature'")
        signature = Signature.from_dict(doc["signature"])
        host = runtime.callable_from_desc(doc["host"]) if doc.get("host") else None
        # Omitted config defaults to host-target when a host is present.
        config = CallerConfig.from_dict(doc["config"]) if "config" in doc else None
        caller = runtime.create_caller(
            doc["name"], signature, config=config, host=host,
            context_providers=[tuple(p) for p in doc.get("context_providers", [])],
            principal=role)
        return caller.describe()

    @app.get("/v1/callers")
    async def list_callers(request: Request):
        reader(request)
        return [{"id": c.id, "name": c.name, "sample_count": len(c.store.samples),
                 "call_target": c.config.call_target.value,
                 "plan_state": c.plan.state.value if c.plan else None}
                for c in runtime.callers.values()]

    @app.get("/v1/callers/{caller_id}")
    async def show_caller(caller_id: str, request: Request):
        reader(request)
        return runtime.get_caller(caller_id).describe()

    @app.patch("/v1/callers/{caller_id}/config")
    async def patch_config(caller_id: str, request: Request):
        role = principal(request)
        caller = runtime.get_caller(caller_id)
        patch = await _body(request)
        new = caller.update_config(patch, principal=role)
        return new.to_dict()

    @app.delete("/v1/callers/{caller_id}/host")
    async def retire_host(caller_id: str, request: Request):
        role = principal(request)
        caller = runtime.get_caller(caller_id)
        return transformation.retire_host(caller, principal=role)

    # -- registrations ---------------------------------------------------------

    @app.post("/v1/callers/{caller_id}/register")
    async def register(caller_id: str, request: Request):
        role = principal(request)
        caller = runtime.get_caller(caller_id)
        doc = await _body(request)
        if "callable" not in doc:
            raise ValidationError("registration needs a 'callable' description")
        cb = runtime.callable_from_desc(doc["callable"])
        reg = caller.register(cb, role=doc.get("role", "ensemble"),
                              attributes=doc.get("attributes"), principal=role)
        return reg.to_json(with_params=False)

    @app.delete("/v1/callers/{caller_id}/registrations/{rid}")
    async def unregister(caller_id: str, rid: str, request: Request):
        role = principal(request)
        caller = runtime.get_caller(caller_id)
        reg = caller.unregister(rid, principal=role)
        return {"removed": reg.id}

    # -- calls -------------------------------------------------------------------

    @app.post("/v1/callers/{caller_id}/call")
    async def call(caller_id: str, request: Request):
        role = principal(request)
        caller = runtime.get_caller(caller_id)
        doc = await _body(request)
        if "inputs" not in doc or not isinstance(doc["inputs"], dict):
            raise ValidationError("call body needs an 'inputs' object")
        # The pipeline may block (external members, remote timeouts), so it
        # must never run on the event loop.
        result = await run_in_threadpool(
            caller.call, doc["inputs"], explicit_context=doc.get("context"),
            principal=role, path="surrogate")
        return result.to_json()

    @app.post("/v1/callers/{caller_id}/call/stream")
    async def call_stream(caller_id: str, request: Request):
        role = principal(request)
        caller = runtime.get_caller(caller_id)
        doc = await _body(request)
        if "inputs" not in doc or not isinstance(doc["inputs"], dict):
            raise ValidationError("call body needs an 'inputs' object")
        emissions = caller.call_anytime(doc["inputs"], explicit_context=doc.get("context"),
                                        principal=role, deadline_s=doc.get("deadline_s"))

        def sse():
            try:
                for emission in emissions:
                    yield f"data: {json.dumps(emission.to_json())}\n\n"
            except McallError as exc:
                payload = {"error": {"code": exc.code, "message": str(exc)}}
                yield f"data: {json.dumps(payload)}\n\n"

        return StreamingResponse(sse(), media_type="text/event-stream")

    # -- sensors -------------------------------------------------------------------

    @app.post("/v1/callers/{caller_id}/sensor")
    async def sensor(caller_id: str, request: Request):
        role = principal(request)
        caller = runtime.get_caller(caller_id)
        doc = await _body(request)
        if not isinstance(doc.get("inputs"), dict) or not isinstance(doc.get("output"), dict):
            raise ValidationError("sensor body needs 'inputs' and 'output' objects")
        sample = caller.add_sensor_sample(doc["inputs"], doc["output"], principal=role)
        return {"sample_id": sample.id, "split": sample.split.value}

    # -- datasets -------------------------------------------------------------------

    @app.get("/v1/callers/{caller_id}/dataset")
    async def dataset(caller_id: str, request: Request, category: Optional[str] = None,
                      origin: Optional[str] = None, limit: Optional[int] = None,
                      since: Optional[float] = None, until: Optional[float] = None):
        reader(request)
        caller = runtime.get_caller(caller_id)
        selector = DatasetSelector.make(
            categories=[category] if category else None,
            origins=[origin] if origin else None,
            since=since, until=until, limit=limit)
        return [s.to_json() for s in caller.dataset_view(selector)]

    # -- reviews --------------------------------------------------------------------

    @app.get("/v1/callers/{caller_id}/reviews")
    async def reviews(caller_id: str, request: Request, state: str = "pending",
                      limit: int = 50):
        reader(request)
        caller = runtime.get_caller(caller_id)
        if state != "pending":
            raise ValidationError("only state=pending is queryable")
        return [{"token": token, "sample": sample.to_json()}
                for token, sample in caller.pending_reviews(limit)]

    @app.post("/v1/reviews/{token}")
    async def review(token: str, request: Request):
        role = principal(request)
        doc = await _body(request)
        action = doc.get("action")
        if action not in ("confirm", "override", "reward"):
            raise ValidationError("action must be confirm, override, or reward")
        caller = _caller_for_token(runtime, token)
        sample = caller.apply_feedback(token, action, output=doc.get("output"),
                                       value=doc.get("value"), principal=role)
        return sample.to_json()

    # -- collaboration ------------------------------------------------------------------

    @app.get("/v1/collab")
    async def collab_list(request: Request, state: str = "open"):
        reader(request)
        want = CollabState(state) if state else None
        return [r.to_json() for r in runtime.collab.list(want)]

    @app.post("/v1/collab/{request_id}/answer")
    async def collab_answer(request_id: str, request: Request):
        role = principal(request)
        runtime.require(role, METHOD_COLLAB_ANSWER)
        doc = await _body(request)
        if not isinstance(doc.get("output"), dict):
            raise ValidationError("answer body needs an 'output' object")
        req = runtime.collab.get(request_id)
        caller = runtime.get_caller(req.caller_id)
        caller.signature.validate_outputs(doc["output"])
        return runtime.collab.answer(request_id, doc["output"]).to_json()

    # -- training / evaluation / metrics --------------------------------------------------

    @app.post("/v1/callers/{caller_id}/train")
    async def train(caller_id: str, request: Request):
        role = principal(request)
        runtime.require(role, METHOD_TRAIN)
        caller = runtime.get_caller(caller_id)
        doc = await _body(request)
        spec = TrainSpec(
            mode=doc.get("mode", "local"),
            init=doc.get("init", "incremental"),
            dataset=(DatasetSelector.make(**doc["dataset"]) if doc.get("dataset")
                     else quality.TRAINING_SELECTOR),
            bagging=bool(doc.get("bagging", False)),
        )
        target = caller.get_registration(doc["target"]) if doc.get("target") else None
        report = await run_in_threadpool(quality.train, caller, target, spec)
        return report.to_json()

    @app.post("/v1/callers/{caller_id}/eval")
    async def evaluate(caller_id: str, request: Request):
        role = principal(request)
        runtime.require(role, METHOD_EVALUATE)
        caller = runtime.get_caller(caller_id)
        doc = await _body(request)
        matcher = Matcher.from_dict(doc["matcher"]) if doc.get("matcher") else quality.EXACT
        target = caller.get_registration(doc["target"]) if doc.get("target") else None
        metrics = await run_in_threadpool(
            quality.evaluate, caller, target,
            behavior=doc.get("behavior", "combined"),
            scope=doc.get("scope", "local"), matcher=matcher)
        out = {"metrics": metrics.to_json()}
        if target is not None:
            out["qualification"] = quality.qualify(caller, target).value
        return out

    @app.get("/v1/callers/{caller_id}/metrics")
    async def metrics(caller_id: str, request: Request):
        reader(request)
        caller = runtime.get_caller(caller_id)
        return {
            "caller_id": caller.id,
            "category_counts": caller.store.category_counts(),
            "sample_count": len(caller.store.samples),
            "host_invocations": caller.host_invocations,
            "call_target": caller.config.call_target.value,
            "members": [
                {
                    "registration_id": reg.id,
                    "callable_id": reg.callable.id,
                    "role": reg.role,
                    "qualification": reg.qualification.value,
                    "metrics": reg.metrics.to_json(),
                    "invocations": reg.invocations,
                }
                for reg in caller.registrations
            ],
            "learned_weights": caller.learned_weights,
        }

    @app.get("/v1/callers/{caller_id}/drift")
    async def drift(caller_id: str, request: Request, window: int = 200):
        reader(request)
        caller = runtime.get_caller(caller_id)
        return quality.detect_drift(caller, window).to_json()

    # -- transformation plans ----------------------------------------------------------------

    @app.post("/v1/callers/{caller_id}/plan")
    async def plan_start(caller_id: str, request: Request):
        role = principal(request)
        caller = runtime.get_caller(caller_id)
        doc = await _body(request)
        if "candidate" not in doc:
            raise ValidationError("plan needs a 'candidate' registration id")
        plan = transformation.plan_transformation(
            caller, doc["candidate"],
            demote_on_drift=bool(doc.get("demote_on_drift", False)),
            drift_window=int(doc.get("drift_window", transformation.DEFAULT_DRIFT_WINDOW)),
            principal=role)
        return plan.to_json()

    @app.post("/v1/callers/{caller_id}/plan/step")
    async def plan_step(caller_id: str, request: Request):
        role = principal(request)
        caller = runtime.get_caller(caller_id)
        plan = await run_in_threadpool(transformation.step_transformation,
                                       caller, principal=role)
        return plan.to_json()

    @app.get("/v1/callers/{caller_id}/plan")
    async def plan_show(caller_id: str, request: Request):
        reader(request)
        caller = runtime.get_caller(caller_id)
        if caller.plan is None:
            raise NotFoundError("caller has no transformation plan")
        return caller.plan.to_json()

    return app


def _caller_for_token(runtime: Runtime, token: str):
    for caller in runtime.callers.values():
        if token in caller.store._by_token:
            return caller
    raise NotFoundError(f"unknown review token {token!r}")


# ---------------------------------------------------------------------------
# Service bootstrap
# ---------------------------------------------------------------------------

@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    api_keys: Dict[str, str] = field(default_factory=dict)
    persistence_dir: Optional[str] = None
    skip_corrupt: bool = False
    plugins: list = field(default_factory=list)


def load_service_config(path: str) -> ServiceConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc.get("api_keys"), dict) or not doc["api_keys"]:
        raise ConfigError("config needs a non-empty 'api_keys' map")
    bind = doc.get("bind", {})
    return ServiceConfig(
        host=bind.get("host", "127.0.0.1"),
        port=int(bind.get("port", 8080)),
        api_keys={str(k): str(v) for k, v in doc["api_keys"].items()},
        persistence_dir=doc.get("persistence_dir"),
        skip_corrupt=bool(doc.get("skip_corrupt", False)),
        plugins=list(doc.get("plugins", [])),
    )


def build_runtime(cfg: ServiceConfig) -> Runtime:
    runtime = Runtime()
    for plugin in cfg.plugins:
        module = importlib.import_module(plugin)
        register = getattr(module, "register_implementations", None)
        if register is not None:
            register(runtime)
    if cfg.persistence_dir and os.path.isdir(cfg.persistence_dir):
        persistence.load_all(runtime, cfg.persistence_dir, skip_corrupt=cfg.skip_corrupt)
    return runtime


class ServiceHandle:
    """A running gateway; stop() shuts it down and persists all callers."""

    def __init__(self, server: uvicorn.Server, thread: threading.Thread,
                 runtime: Runtime, cfg: ServiceConfig):
        self.server = server
        self.thread = thread
        self.runtime = runtime
        self.config = cfg

    @property
    def url(self) -> str:
        return f"http://{self.config.host}:{self.config.port}"

    def stop(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10)


def start_service(config_path: str, block: bool = False) -> ServiceHandle:
    """Boot the gateway from a config file. Binds the socket eagerly so a
    taken port fails fast; restores persisted callers; persists on shutdown."""
    cfg = load_service_config(config_path)
    runtime = build_runtime(cfg)
    app = create_app(runtime, cfg.api_keys, persistence_dir=cfg.persistence_dir)
    try:
        sock = socket.create_server((cfg.host, cfg.port))
    except OSError as exc:
        raise ConfigError(f"cannot bind {cfg.host}:{cfg.port}: {exc}") from None
    server = uvicorn.Server(uvicorn.Config(app, log_level="warning", lifespan="on"))
    if block:
        try:
            server.run(sockets=[sock])
        finally:
            sock.close()
        return ServiceHandle(server, threading.current_thread(), runtime, cfg)
    thread = threading.Thread(target=server.run, kwargs={"sockets": [sock]}, daemon=True)
    thread.start()
    return ServiceHandle(server, thread, runtime, cfg)
