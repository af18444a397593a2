"""Caller persistence: one metadata document plus a JSONL sample log.

Layout per caller directory:

    meta.json      single JSON document {"format_version": 1, "caller": {...}}
    samples.jsonl  one sample object per line, append-friendly

Round-tripping is byte-exact: loading a persisted caller and persisting it
again reproduces both files, including RNG stream positions and counters.
Local function implementations are rebound by their registered ``ref`` name;
built-in models serialize their full learned state.
"""

from __future__ import annotations

import json
import logging
import os
from typing import List

from .errors import NotFoundError, PersistenceError
from .quality import MemberMetrics, Qualification

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
META_FILE = "meta.json"
SAMPLES_FILE = "samples.jsonl"


def _dumps(doc: dict) -> str:
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False)


def caller_meta(caller) -> dict:
    with caller._lock:
        doc = {
            "id": caller.id,
            "name": caller.name,
            "created_at": caller.created_at,
            "signature": caller.signature.to_dict(),
            "config": caller.config.to_dict(),
            "context_providers": [list(p) for p in caller.context_providers],
            "host": caller.host.describe(with_params=True) if caller.host else None,
            "registrations": [r.to_json(with_params=True) for r in caller.registrations],
            "counters": {
                "host_invocations": caller.host_invocations,
                "config_version": caller.config_version,
                "reg_seq": caller._reg_seq,
                "token_seq": caller._token_seq,
            },
            "rng": caller.rng.state_dict(),
            "learned_weights": caller.learned_weights,
            "plan": caller.plan.to_json() if caller.plan else None,
        }
    return {"format_version": FORMAT_VERSION, "caller": doc}


def persist_caller(caller, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, META_FILE), "w", encoding="utf-8") as fh:
        fh.write(_dumps(caller_meta(caller)))
        fh.write("\n")
    with open(os.path.join(directory, SAMPLES_FILE), "w", encoding="utf-8") as fh:
        for doc in caller.store.snapshot():
            fh.write(_dumps(doc))
            fh.write("\n")


def _read_samples(path: str, skip_corrupt: bool) -> List[dict]:
    docs: List[dict] = []
    if not os.path.exists(path):
        return docs
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                docs.append(json.loads(line))
            except ValueError as exc:
                if skip_corrupt:
                    log.warning("skipping corrupt sample line %d in %s: %s", lineno, path, exc)
                    continue
                raise PersistenceError(f"corrupt sample line {lineno} in {path}: {exc}") from None
    return docs


def load_caller(runtime, directory: str, skip_corrupt: bool = False):
    """Restore one caller into the runtime. Nested bindings are resolved
    against callers already present, so restore inner callers first (or use
    ``load_all``, which orders loads automatically)."""
    from .core import Caller, CallerConfig  # late import: persistence is imported by core users

    meta_path = os.path.join(directory, META_FILE)
    if not os.path.exists(meta_path):
        raise PersistenceError(f"no {META_FILE} in {directory}")
    with open(meta_path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except ValueError as exc:
            raise PersistenceError(f"corrupt {meta_path}: {exc}") from None
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise PersistenceError(f"unsupported format version {version!r} (expected {FORMAT_VERSION})")
    c = doc["caller"]

    from .records import Signature
    signature = Signature.from_dict(c["signature"])
    config = CallerConfig.from_dict(c["config"])
    host = runtime.callable_from_desc(c["host"]) if c.get("host") else None

    caller = Caller(runtime, c["name"], signature, config, host=host,
                    context_providers=[tuple(p) for p in c.get("context_providers", [])],
                    created_at=c["created_at"])
    runtime.callers[caller.id] = caller

    from .core import Registration
    for rdoc in c.get("registrations", []):
        cb = runtime.callable_from_desc(rdoc["callable"])
        reg = Registration(
            id=rdoc["id"], callable=cb, role=rdoc["role"],
            attributes=dict(rdoc.get("attributes", {})),
            qualification=Qualification(rdoc.get("qualification", "insufficient_data")),
            metrics=MemberMetrics.from_json(rdoc.get("metrics", {})),
            invocations=rdoc.get("invocations", 0),
        )
        caller.registrations.append(reg)
        runtime.callables.setdefault(cb.id, cb)

    counters = c.get("counters", {})
    caller.host_invocations = counters.get("host_invocations", 0)
    caller.config_version = counters.get("config_version", 1)
    caller._reg_seq = counters.get("reg_seq", len(caller.registrations))
    caller._token_seq = counters.get("token_seq", 0)
    caller.rng.restore(c.get("rng", {}))
    caller.learned_weights = c.get("learned_weights")

    if c.get("plan"):
        from .transformation import TransformationPlan
        caller.plan = TransformationPlan.from_json(c["plan"])

    caller.store.restore(_read_samples(os.path.join(directory, SAMPLES_FILE), skip_corrupt))
    return caller


def persist_all(runtime, root: str) -> None:
    os.makedirs(root, exist_ok=True)
    for caller in runtime.callers.values():
        persist_caller(caller, os.path.join(root, caller.id))


def load_all(runtime, root: str, skip_corrupt: bool = False) -> list:
    """Restore every caller directory under ``root``. Nested references are
    resolved in a retry loop so inner callers load before their outers."""
    if not os.path.isdir(root):
        return []
    remaining = sorted(d for d in os.listdir(root)
                       if os.path.isdir(os.path.join(root, d)))
    loaded = []
    while remaining:
        progressed = False
        deferred = []
        for name in remaining:
            try:
                loaded.append(load_caller(runtime, os.path.join(root, name), skip_corrupt))
                progressed = True
            except NotFoundError:
                deferred.append(name)  # nested target not restored yet
        if not progressed:
            raise PersistenceError(
                f"could not resolve nested caller references for: {', '.join(deferred)}")
        remaining = deferred
    return loaded
