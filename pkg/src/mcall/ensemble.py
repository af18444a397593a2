"""Ensemble execution: member fan-out, gating, and output aggregation.

Members run in parallel (one thread each, results reported in registration
order regardless of completion order) or as a sequential chain where each
stage may consume the previous stage's output through the reserved
``__mc_prev`` parameter. Failed members are captured per member and excluded
from aggregation; a call only fails once every activated source has failed.
Chains are the exception: any stage failure aborts the chain.
"""

from __future__ import annotations

import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from .errors import AggregationError, ConflictError, McallError, NotFoundError, ValidationError
from .records import Record, canonical_vote_key, is_number

ROLE_ENSEMBLE = "ensemble"
ROLE_AGGREGATOR = "aggregator"
ROLE_GATE = "gate"


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

class Strategy(str, Enum):
    STACKING = "stacking"
    VOTING = "voting"
    MEAN = "mean"
    QUALITY_WEIGHTED_MEAN = "quality_weighted_mean"
    AGGREGATOR_MODEL = "aggregator_model"
    FILTERED_MEAN = "filtered_mean"
    CUSTOM_HOOK = "custom_hook"


class WeightSource(str, Enum):
    GOLD = "gold"
    SILVER = "silver"
    COMBINED = "combined"


@dataclass(frozen=True)
class AggregationSpec:
    strategy: Strategy = Strategy.MEAN
    weight_source: WeightSource = WeightSource.GOLD
    min_accuracy: Optional[float] = None      # filtered_mean cutoff
    hook: Optional[str] = None                # custom_hook id

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "weight_source", WeightSource(self.weight_source))
        if self.strategy is Strategy.FILTERED_MEAN and self.min_accuracy is None:
            raise ValidationError("filtered_mean needs min_accuracy")
        if self.strategy is Strategy.CUSTOM_HOOK and not self.hook:
            raise ValidationError("custom_hook needs a hook id")

    def to_dict(self) -> dict:
        doc = {"strategy": self.strategy.value, "weight_source": self.weight_source.value}
        if self.min_accuracy is not None:
            doc["min_accuracy"] = self.min_accuracy
        if self.hook is not None:
            doc["hook"] = self.hook
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "AggregationSpec":
        return cls(
            strategy=doc.get("strategy", "mean"),
            weight_source=doc.get("weight_source", "gold"),
            min_accuracy=doc.get("min_accuracy"),
            hook=doc.get("hook"),
        )


class GateKind(str, Enum):
    NONE = "none"
    TOP_K = "top_k"
    QUALIFIED_ONLY = "qualified_only"
    RANDOM_K = "random_k"
    GATE_MODEL = "gate_model"


@dataclass(frozen=True)
class GateSpec:
    kind: GateKind = GateKind.NONE
    k: Optional[int] = None
    by: WeightSource = WeightSource.GOLD   # accuracy used by top_k ranking

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))
        object.__setattr__(self, "by", WeightSource(self.by))
        if self.kind in (GateKind.TOP_K, GateKind.RANDOM_K):
            if self.k is None or self.k < 1:
                raise ValidationError(f"{self.kind.value} needs k >= 1")

    def to_dict(self) -> dict:
        doc = {"kind": self.kind.value, "by": self.by.value}
        if self.k is not None:
            doc["k"] = self.k
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "GateSpec":
        return cls(kind=doc.get("kind", "none"), k=doc.get("k"), by=doc.get("by", "gold"))


# ---------------------------------------------------------------------------
# Member execution
# ---------------------------------------------------------------------------

@dataclass
class MemberOutput:
    callable_id: str
    ok: bool
    output: Optional[Record] = None
    error: Optional[str] = None
    latency_s: float = 0.0

    def to_json(self) -> dict:
        doc: dict = {"callable_id": self.callable_id, "ok": self.ok}
        if self.ok:
            doc["output"] = self.output
        else:
            doc["error"] = self.error
        doc["latency_s"] = self.latency_s
        return doc


Thunk = Callable[[], Record]


def run_parallel(entries: Sequence[Tuple[str, Thunk]]) -> List[MemberOutput]:
    """Invoke every (id, thunk) once, concurrently; results in entry order.

    Failures are captured in the corresponding slot, never raised.
    """
    if not entries:
        return []

    def guarded(thunk: Thunk, cid: str) -> MemberOutput:
        started = time.perf_counter()
        try:
            out = thunk()
            return MemberOutput(cid, True, output=out, latency_s=time.perf_counter() - started)
        except Exception as exc:  # member failures must not escape their slot
            return MemberOutput(cid, False, error=str(exc) or type(exc).__name__,
                                latency_s=time.perf_counter() - started)

    if len(entries) == 1:
        cid, thunk = entries[0]
        return [guarded(thunk, cid)]
    with ThreadPoolExecutor(max_workers=len(entries)) as pool:
        futures = [pool.submit(guarded, thunk, cid) for cid, thunk in entries]
        return [f.result() for f in futures]


def run_sequential(stages: Sequence[Tuple[str, Callable[[Optional[Record]], Record]]]
                   ) -> Tuple[Optional[Record], List[MemberOutput]]:
    """Run stages in order, feeding each stage the previous stage's output.

    Each stage callable receives the previous output record (None for the
    first stage) and returns its own output. Any failure aborts the chain;
    outputs produced so far stay in the member list. Returns (final output
    or None, per-stage outputs).
    """
    outputs: List[MemberOutput] = []
    prev: Optional[Record] = None
    for cid, stage in stages:
        started = time.perf_counter()
        try:
            prev = stage(prev)
            outputs.append(MemberOutput(cid, True, output=prev,
                                        latency_s=time.perf_counter() - started))
        except Exception as exc:
            outputs.append(MemberOutput(cid, False, error=str(exc) or type(exc).__name__,
                                        latency_s=time.perf_counter() - started))
            return None, outputs
    return prev, outputs


# ---------------------------------------------------------------------------
# Gating
# ---------------------------------------------------------------------------

def gate(members: Sequence, spec: GateSpec, inputs: Record,
         rng=None, invoke_gate=None) -> list:
    """Select the active subset of ensemble members.

    ``members`` are Registration objects (ordered by registration). Rankings
    use the accuracy named by ``spec.by``; members without that accuracy rank
    below any measured member, with registration order breaking ties.
    """
    members = list(members)
    if spec.kind is GateKind.NONE or not members:
        return members
    if spec.kind is GateKind.TOP_K:
        if spec.k >= len(members):
            return members
        ranked = sorted(
            range(len(members)),
            key=lambda i: (-(_accuracy(members[i], spec.by) if _accuracy(members[i], spec.by) is not None else -1.0), i),
        )
        chosen = sorted(ranked[: spec.k])
        return [members[i] for i in chosen]
    if spec.kind is GateKind.QUALIFIED_ONLY:
        return [m for m in members if getattr(m, "qualification", None) == "qualified"]
    if spec.kind is GateKind.RANDOM_K:
        if rng is None:
            raise ValidationError("random_k gating needs the caller's gate stream")
        idx = sorted(rng.sample_indices(len(members), spec.k))
        return [members[i] for i in idx]
    if spec.kind is GateKind.GATE_MODEL:
        if invoke_gate is None:
            raise ValidationError("gate_model gating needs a gate registration")
        verdict = invoke_gate(inputs)
        active = verdict.get("active") if isinstance(verdict, dict) else None
        if not isinstance(active, list):
            raise ValidationError("gate model must return {'active': [callable ids]}")
        wanted = set(active)
        return [m for m in members if m.callable.id in wanted]
    raise ValidationError(f"unknown gate kind {spec.kind!r}")


def _accuracy(registration, source: WeightSource) -> Optional[float]:
    metrics = getattr(registration, "metrics", None)
    if metrics is None:
        return None
    if source is WeightSource.GOLD:
        return metrics.gold_accuracy
    if source is WeightSource.SILVER:
        return metrics.silver_accuracy
    return metrics.combined_accuracy


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def resolve_weights(ids: Sequence[str], known: Dict[str, Optional[float]]) -> List[float]:
    """Per-member weights for quality weighting and filtering.

    Members with a measured accuracy use it; members without one get the
    mean of the measured weights, or 1.0 when nothing is measured yet.
    """
    measured = [known[i] for i in ids if known.get(i) is not None]
    default = sum(measured) / len(measured) if measured else 1.0
    return [known[i] if known.get(i) is not None else default for i in ids]


def aggregate(member_outputs: Sequence[Tuple[str, Record]], spec: AggregationSpec,
              output_names: Sequence[str], weights: Dict[str, Optional[float]] = None,
              inputs: Record = None, invoke_aggregator=None, hook=None,
              metrics: dict = None) -> Record:
    """Combine successful member outputs into one record.

    ``member_outputs`` holds only successes, in registration order.
    """
    if not member_outputs:
        raise AggregationError("no member outputs to aggregate")
    ids = [cid for cid, _ in member_outputs]
    outs = [out for _, out in member_outputs]

    if spec.strategy is Strategy.STACKING:
        stacked: Record = {}
        for cid, out in member_outputs:
            for name, value in out.items():
                stacked[f"{cid}.{name}"] = value
        return stacked

    if spec.strategy is Strategy.VOTING:
        result: Record = {}
        for name in output_names:
            tally: dict = {}
            for out in outs:
                key = canonical_vote_key(out[name])
                entry = tally.setdefault(key, [0, out[name]])
                entry[0] += 1
            best = sorted(tally.items(), key=lambda kv: (-kv[1][0], kv[0]))[0]
            result[name] = best[1][1]
        return result

    if spec.strategy is Strategy.MEAN:
        return _mean(outs, output_names)

    if spec.strategy is Strategy.QUALITY_WEIGHTED_MEAN:
        ws = resolve_weights(ids, weights or {})
        total = sum(ws)
        if total <= 0:
            raise AggregationError("quality weights sum to zero")
        result = {}
        for name in output_names:
            _require_numeric(outs, name)
            result[name] = sum(w * out[name] for w, out in zip(ws, outs)) / total
        return result

    if spec.strategy is Strategy.FILTERED_MEAN:
        ws = resolve_weights(ids, weights or {})
        kept = [out for w, out in zip(ws, outs) if w >= spec.min_accuracy]
        if not kept:
            raise AggregationError("every member fell below min_accuracy")
        return _mean(kept, output_names)

    if spec.strategy is Strategy.AGGREGATOR_MODEL:
        if invoke_aggregator is None:
            raise AggregationError("no registration with role 'aggregator'")
        stacked = {} if inputs is None else dict(inputs)
        for cid, out in member_outputs:
            for name, value in out.items():
                stacked[f"{cid}.{name}"] = value
        return invoke_aggregator(stacked)

    if spec.strategy is Strategy.CUSTOM_HOOK:
        if hook is None:
            raise AggregationError(f"aggregation hook {spec.hook!r} is not registered")
        return hook(list(member_outputs), inputs or {}, metrics or {})

    raise AggregationError(f"unknown strategy {spec.strategy!r}")


def _require_numeric(outs: Sequence[Record], name: str) -> None:
    for out in outs:
        if not is_number(out.get(name)):
            raise AggregationError(f"output parameter {name!r} is not numeric in every member")


def _mean(outs: Sequence[Record], output_names: Sequence[str]) -> Record:
    result: Record = {}
    for name in output_names:
        _require_numeric(outs, name)
        result[name] = sum(out[name] for out in outs) / len(outs)
    return result


# ---------------------------------------------------------------------------
# Collaboration (external members)
# ---------------------------------------------------------------------------

class CollabState(str, Enum):
    OPEN = "open"
    ANSWERED = "answered"
    TIMED_OUT = "timed_out"


@dataclass
class CollabRequest:
    id: str
    caller_id: str
    inputs: Record
    deadline: float
    state: CollabState = CollabState.OPEN
    output: Optional[Record] = None
    opened_at: float = field(default_factory=time.time)

    def to_json(self) -> dict:
        doc = {
            "id": self.id,
            "caller_id": self.caller_id,
            "inputs": self.inputs,
            "deadline": self.deadline,
            "state": self.state.value,
            "opened_at": self.opened_at,
        }
        if self.output is not None:
            doc["output"] = self.output
        return doc


class CollabBoard:
    """Open questions for humans or external systems.

    An external member's invocation opens a request and parks its ensemble
    slot until the request is answered or its deadline passes. Answers are
    accepted at most once and validated against the output signature by the
    caller before they reach the board.
    """

    def __init__(self):
        self._requests: dict[str, CollabRequest] = {}
        self._events: dict[str, threading.Event] = {}
        self._lock = threading.Lock()

    def open(self, caller_id: str, inputs: Record, timeout_s: float) -> CollabRequest:
        req = CollabRequest(
            id=uuid.uuid4().hex[:12],
            caller_id=caller_id,
            inputs=inputs,
            deadline=time.time() + timeout_s,
        )
        with self._lock:
            self._requests[req.id] = req
            self._events[req.id] = threading.Event()
        return req

    def get(self, request_id: str) -> CollabRequest:
        with self._lock:
            req = self._requests.get(request_id)
        if req is None:
            raise NotFoundError(f"unknown collaboration request {request_id!r}")
        return req

    def answer(self, request_id: str, output: Record) -> CollabRequest:
        with self._lock:
            req = self._requests.get(request_id)
            if req is None:
                raise NotFoundError(f"unknown collaboration request {request_id!r}")
            if req.state is CollabState.ANSWERED:
                raise ConflictError(f"request {request_id!r} already answered")
            if req.state is CollabState.TIMED_OUT or time.time() > req.deadline:
                req.state = CollabState.TIMED_OUT
                raise ConflictError(f"request {request_id!r} timed out")
            req.output = output
            req.state = CollabState.ANSWERED
            self._events[request_id].set()
        return req

    def wait(self, request_id: str) -> Record:
        """Block until answered or deadline; raises on timeout."""
        req = self.get(request_id)
        event = self._events[req.id]
        remaining = req.deadline - time.time()
        if remaining > 0:
            event.wait(remaining)
        with self._lock:
            if req.state is CollabState.ANSWERED:
                return req.output
            req.state = CollabState.TIMED_OUT
        raise McallError("collaboration request timed out")

    def list(self, state: Optional[CollabState] = None) -> List[CollabRequest]:
        with self._lock:
            reqs = list(self._requests.values())
        if state is None:
            return reqs
        # Promote expired open requests before filtering so listings are honest.
        now = time.time()
        for req in reqs:
            if req.state is CollabState.OPEN and now > req.deadline:
                req.state = CollabState.TIMED_OUT
        return [r for r in reqs if r.state is state]


# ---------------------------------------------------------------------------
# Anytime emissions
# ---------------------------------------------------------------------------

@dataclass
class AnytimeEmission:
    output: Record
    expected_quality: float
    members_included: tuple
    elapsed_s: float

    def to_json(self) -> dict:
        return {
            "output": self.output,
            "expected_quality": self.expected_quality,
            "members_included": list(self.members_included),
            "elapsed_s": self.elapsed_s,
        }
