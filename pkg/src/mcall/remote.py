"""HTTP client for remote model/function endpoints.

The wire contract is a POST of ``{"inputs": {...}}`` answered with
``{"outputs": {...}}``. Endpoints that exhaust their retry budget are marked
down and fail fast until a cooldown elapses, after which one probe attempt
is allowed through.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import httpx

from .errors import MemberFailure
from .records import Record

DOWN_COOLDOWN_S = 5.0


@dataclass
class RemoteBinding:
    url: str
    timeout_s: float = 10.0
    retry: int = 0
    down_since: Optional[float] = None

    @property
    def health(self) -> str:
        return "up" if self.down_since is None else "down"


def invoke_remote(binding: RemoteBinding, record: Record) -> Record:
    if binding.down_since is not None:
        if time.time() - binding.down_since < DOWN_COOLDOWN_S:
            raise MemberFailure(f"endpoint {binding.url} is down, failing fast")
        # cooldown over: let one probe through

    last_error = "unknown"
    for _ in range(binding.retry + 1):
        try:
            resp = httpx.post(binding.url, json={"inputs": record}, timeout=binding.timeout_s)
        except httpx.HTTPError as exc:
            last_error = str(exc) or type(exc).__name__
            continue
        if resp.status_code >= 400:
            last_error = f"HTTP {resp.status_code}"
            continue
        try:
            body = resp.json()
        except ValueError:
            last_error = "response is not JSON"
            continue
        outputs = body.get("outputs") if isinstance(body, dict) else None
        if not isinstance(outputs, dict):
            last_error = "response lacks an 'outputs' object"
            break
        binding.down_since = None
        return outputs
    binding.down_since = time.time()
    raise MemberFailure(f"remote call to {binding.url} failed: {last_error}")
