"""The caller entity and its call pipeline.

A Caller wraps an optional host callable and a registry of registered
members. Every call runs the same pipeline: resolve context arguments,
resolve targets from ``call_target``, gate the registered ensemble, execute
members (parallel or sequential), aggregate, sample for supervision, and
cache. Registered models receive the declared inputs plus resolved context;
the host and registered functions receive declared inputs only.

Callers live in a Runtime, which owns the shared callable registry (the same
model object registered in two callers shares its parameters), the
collaboration board, extension hooks, and role-based access control.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable as PyCallable, Dict, List, Optional, Sequence, Tuple

from . import quality
from .datastore import (
    ACTION_OVERRIDE,
    DatasetSelector,
    Origin,
    Sample,
    SampleStore,
    Split,
)
from .ensemble import (
    ROLE_AGGREGATOR,
    ROLE_ENSEMBLE,
    ROLE_GATE,
    AggregationSpec,
    AnytimeEmission,
    CollabBoard,
    GateKind,
    GateSpec,
    MemberOutput,
    Strategy,
    WeightSource,
    aggregate,
    gate,
    run_parallel,
    run_sequential,
)
from .errors import (
    AuthorizationError,
    CallError,
    ConfigError,
    ConflictError,
    MemberFailure,
    NotFoundError,
    SignatureError,
    ValidationError,
)
from .models import ToyModel, build_model, model_spec
from .quality import MemberMetrics, Qualification
from .records import (
    CALLER_ID_PARAM,
    PREV_OUTPUT_PARAM,
    RESERVED_PREFIX,
    Record,
    Signature,
)
from .remote import RemoteBinding, invoke_remote
from .rng import STREAM_FEEDBACK, STREAM_GATE, STREAM_SPLIT, SplitMix64, StreamSet, mix_str

# ---------------------------------------------------------------------------
# Role-based access control
# ---------------------------------------------------------------------------

METHOD_READ = "read"
METHOD_CALL = "call"
METHOD_SENSOR = "sensor"
METHOD_CREATE_CALLER = "create-caller"
METHOD_REGISTER_MODEL = "register-model"
METHOD_REGISTER_FUNCTION = "register-function"
METHOD_UNREGISTER_MODEL = "unregister-model"
METHOD_UNREGISTER_FUNCTION = "unregister-function"
METHOD_UPDATE_CONFIG = "update-config"
METHOD_REVIEW = "review"
METHOD_COLLAB_ANSWER = "collab-answer"
METHOD_TRAIN = "train"
METHOD_EVALUATE = "evaluate"
METHOD_PLAN_START = "plan-start"
METHOD_PLAN_STEP = "plan-step"
METHOD_RETIRE_HOST = "retire-host"

ALL_METHODS = frozenset({
    METHOD_READ, METHOD_CALL, METHOD_SENSOR, METHOD_CREATE_CALLER,
    METHOD_REGISTER_MODEL, METHOD_REGISTER_FUNCTION,
    METHOD_UNREGISTER_MODEL, METHOD_UNREGISTER_FUNCTION,
    METHOD_UPDATE_CONFIG, METHOD_REVIEW, METHOD_COLLAB_ANSWER,
    METHOD_TRAIN, METHOD_EVALUATE,
    METHOD_PLAN_START, METHOD_PLAN_STEP, METHOD_RETIRE_HOST,
})

# Default role table. Software engineers may add hosts and functions but not
# models; only ML engineers add models; operators run traffic and review;
# viewers are read-only; admin may do everything including host retirement.
DEFAULT_RBAC: Dict[str, frozenset] = {
    "admin": ALL_METHODS,
    "swe": frozenset({METHOD_READ, METHOD_CREATE_CALLER, METHOD_REGISTER_FUNCTION,
                      METHOD_UNREGISTER_FUNCTION, METHOD_UPDATE_CONFIG}),
    "mle": frozenset({METHOD_READ, METHOD_REGISTER_MODEL, METHOD_UNREGISTER_MODEL,
                      METHOD_TRAIN, METHOD_EVALUATE, METHOD_PLAN_START, METHOD_PLAN_STEP}),
    "operator": frozenset({METHOD_READ, METHOD_CALL, METHOD_SENSOR, METHOD_REVIEW,
                           METHOD_COLLAB_ANSWER}),
    "viewer": frozenset({METHOD_READ}),
}


def authorize(role: str, method: str, table: Dict[str, frozenset] = None) -> bool:
    """Role/method decision; unknown roles are denied."""
    table = DEFAULT_RBAC if table is None else table
    allowed = table.get(role)
    return bool(allowed and method in allowed)


# ---------------------------------------------------------------------------
# Callables
# ---------------------------------------------------------------------------

class CallableKind(str, Enum):
    MODEL = "model"
    FUNCTION = "function"
    EXTERNAL = "external"
    NESTED = "nested"


@dataclass
class LocalBinding:
    """A local implementation: record in, record out. ``ref`` names the
    implementation in the hook registry so persisted callers can rebind."""
    impl: Optional[PyCallable] = None
    ref: Optional[str] = None


@dataclass
class ModelBinding:
    model: ToyModel = None


@dataclass
class ExternalBinding:
    timeout_s: float = 30.0


@dataclass
class NestedBinding:
    caller_id: str = ""


@dataclass
class Callable:
    """A unit a caller can host or register: model, function, external
    collaboration slot, or a nested caller."""

    id: str
    kind: CallableKind
    signature: Signature
    binding: Any
    trainable: bool = False

    def describe(self, with_params: bool = True) -> dict:
        doc: dict = {"id": self.id, "kind": self.kind.value,
                     "signature": self.signature.to_dict(), "trainable": self.trainable}
        b = self.binding
        if isinstance(b, ModelBinding):
            doc["binding"] = {"type": "builtin", "model": model_spec(b.model, with_params)}
        elif isinstance(b, LocalBinding):
            doc["binding"] = {"type": "local", "ref": b.ref}
        elif isinstance(b, RemoteBinding):
            doc["binding"] = {"type": "remote", "url": b.url,
                              "timeout_s": b.timeout_s, "retry": b.retry}
        elif isinstance(b, ExternalBinding):
            doc["binding"] = {"type": "external", "timeout_s": b.timeout_s}
        elif isinstance(b, NestedBinding):
            doc["binding"] = {"type": "nested", "caller_id": b.caller_id}
        else:
            doc["binding"] = {"type": "unbound"}
        return doc


@dataclass
class Registration:
    id: str
    callable: Callable
    role: str
    attributes: Dict[str, Any] = field(default_factory=dict)
    qualification: Qualification = Qualification.INSUFFICIENT_DATA
    metrics: MemberMetrics = field(default_factory=MemberMetrics)
    invocations: int = 0

    def to_json(self, with_params: bool = True) -> dict:
        return {
            "id": self.id,
            "callable": self.callable.describe(with_params),
            "role": self.role,
            "attributes": self.attributes,
            "qualification": self.qualification.value,
            "metrics": self.metrics.to_json(),
            "invocations": self.invocations,
        }


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

class CallTarget(str, Enum):
    HOST = "host"
    REGISTERED = "registered"
    BOTH = "both"


class AutoId(str, Enum):
    ON = "on"
    OFF = "off"
    PASSTHROUGH = "passthrough"


class ExecutionMode(str, Enum):
    PARALLEL = "parallel"
    SEQUENTIAL = "sequential"


def _fraction(value, name: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number") from None
    if not 0.0 <= v <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")
    return v


@dataclass(frozen=True)
class CallerConfig:
    """Automation and routing attributes of one caller."""

    auto_cache: bool = True
    edata_fraction: float = 0.2
    feedback_fraction: float = 0.1
    quality_thresholds: Tuple[float, float] = (0.9, 0.8)      # (supervised_min, unsupervised_min)
    validation_threshold: Tuple[float, float] = (0.95, 0.85)  # stricter, gates full cutover
    auto_train: bool = False
    auto_test: bool = False
    auto_id: AutoId = AutoId.OFF
    call_target: CallTarget = CallTarget.REGISTERED
    aggregation: AggregationSpec = field(default_factory=AggregationSpec)
    gating: GateSpec = field(default_factory=GateSpec)
    execution: ExecutionMode = ExecutionMode.PARALLEL
    anytime: bool = False
    rng_seed: int = 0
    min_eval_samples: Tuple[int, int] = (5, 20)               # (gold_min, silver_min)
    review_ttl_s: Optional[float] = None

    def validated(self, has_host: bool) -> "CallerConfig":
        _fraction(self.edata_fraction, "edata_fraction")
        _fraction(self.feedback_fraction, "feedback_fraction")
        qt = tuple(_fraction(v, "quality_thresholds") for v in self.quality_thresholds)
        vt = tuple(_fraction(v, "validation_threshold") for v in self.validation_threshold)
        if len(qt) != 2 or len(vt) != 2:
            raise ConfigError("thresholds must be (supervised, unsupervised) pairs")
        if vt[0] < qt[0] or vt[1] < qt[1]:
            raise ConfigError("validation_threshold must dominate quality_thresholds componentwise")
        if self.call_target in (CallTarget.HOST, CallTarget.BOTH) and not has_host:
            raise ConfigError(f"call_target={self.call_target.value!r} requires a host")
        if self.auto_id is AutoId.PASSTHROUGH and not has_host:
            raise ConfigError("passthrough mode requires a host to forward to")
        gm, sm = self.min_eval_samples
        if int(gm) < 1 or int(sm) < 1:
            raise ConfigError("min_eval_samples must be positive")
        return self

    def to_dict(self) -> dict:
        return {
            "auto_cache": self.auto_cache,
            "edata_fraction": self.edata_fraction,
            "feedback_fraction": self.feedback_fraction,
            "quality_thresholds": list(self.quality_thresholds),
            "validation_threshold": list(self.validation_threshold),
            "auto_train": self.auto_train,
            "auto_test": self.auto_test,
            "auto_id": self.auto_id.value,
            "call_target": self.call_target.value,
            "aggregation": self.aggregation.to_dict(),
            "gating": self.gating.to_dict(),
            "execution": self.execution.value,
            "anytime": self.anytime,
            "rng_seed": self.rng_seed,
            "min_eval_samples": list(self.min_eval_samples),
            "review_ttl_s": self.review_ttl_s,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CallerConfig":
        base = cls()
        return base.patched(doc)

    def patched(self, patch: dict) -> "CallerConfig":
        """A new config with ``patch`` applied; unknown keys are rejected."""
        kwargs: dict = {}
        for key, value in patch.items():
            if key in ("auto_cache", "auto_train", "auto_test", "anytime"):
                kwargs[key] = bool(value)
            elif key in ("edata_fraction", "feedback_fraction"):
                kwargs[key] = value
            elif key in ("quality_thresholds", "validation_threshold", "min_eval_samples"):
                kwargs[key] = tuple(value)
            elif key == "auto_id":
                kwargs[key] = AutoId(value)
            elif key == "call_target":
                kwargs[key] = CallTarget(value)
            elif key == "execution":
                kwargs[key] = ExecutionMode(value)
            elif key == "aggregation":
                kwargs[key] = AggregationSpec.from_dict(value) if isinstance(value, dict) else value
            elif key == "gating":
                kwargs[key] = GateSpec.from_dict(value) if isinstance(value, dict) else value
            elif key == "rng_seed":
                kwargs[key] = int(value)
            elif key == "review_ttl_s":
                kwargs[key] = None if value is None else float(value)
            else:
                raise ConfigError(f"unknown config attribute {key!r}")
        try:
            return replace(self, **kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# Call results
# ---------------------------------------------------------------------------

@dataclass
class CallResult:
    caller_id: str
    output: Record
    member_outputs: List[MemberOutput]
    review_token: Optional[str]
    targets_used: Tuple[str, ...]
    latency_s: float
    config_version: int
    sample_id: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "caller_id": self.caller_id,
            "output": self.output,
            "member_outputs": [m.to_json() for m in self.member_outputs],
            "review_token": self.review_token,
            "targets_used": list(self.targets_used),
            "latency_s": self.latency_s,
            "config_version": self.config_version,
            "sample_id": self.sample_id,
        }


# ---------------------------------------------------------------------------
# Hooks
# ---------------------------------------------------------------------------

class HookRegistry:
    """Named extension points registered at startup: context providers,
    custom aggregation hooks, custom matchers, and rebindable local
    implementations."""

    def __init__(self):
        self.context_providers: Dict[str, PyCallable] = {}
        self.aggregators: Dict[str, PyCallable] = {}
        self.matchers: Dict[str, PyCallable] = {}
        self.implementations: Dict[str, PyCallable] = {}

    def add_context_provider(self, name: str, fn: PyCallable) -> None:
        self.context_providers[name] = fn

    def add_aggregator(self, name: str, fn: PyCallable) -> None:
        self.aggregators[name] = fn

    def add_matcher(self, name: str, fn: PyCallable) -> None:
        self.matchers[name] = fn

    def add_implementation(self, name: str, fn: PyCallable) -> None:
        self.implementations[name] = fn

    def context_provider(self, name: str) -> PyCallable:
        if name not in self.context_providers:
            raise NotFoundError(f"unknown context provider {name!r}")
        return self.context_providers[name]


# ---------------------------------------------------------------------------
# Caller
# ---------------------------------------------------------------------------

TARGET_HOST = "host"
TARGET_REGISTERED = "registered"

_EWMA_ALPHA = 0.2


class Caller:
    """One calling-side intermediary; create through Runtime."""

    def __init__(self, runtime: "Runtime", name: str, signature: Signature,
                 config: CallerConfig, host: Optional[Callable] = None,
                 context_providers: Sequence[Tuple[str, str]] = (),
                 created_at: float = None):
        for pname, _ in signature.inputs:
            if pname.startswith(RESERVED_PREFIX):
                raise SignatureError("caller signatures may not use reserved parameter names")
        self.runtime = runtime
        self.id = name
        self.name = name
        self.signature = signature
        self.host = host
        self.config = config.validated(has_host=host is not None)
        self.registrations: List[Registration] = []
        self.context_providers: List[Tuple[str, str]] = list(context_providers)
        declared = set(signature.context_names)
        for pname, provider in self.context_providers:
            if pname not in declared:
                raise SignatureError(f"context provider for undeclared parameter {pname!r}")
        self.created_at = time.time() if created_at is None else created_at
        self.store = SampleStore(self.id)
        self.rng = StreamSet(config.rng_seed)
        self.learned_weights: Optional[Dict[str, float]] = None
        self.plan = None          # active transformation plan, if any
        self.host_invocations = 0
        self.config_version = 1
        self._reg_seq = 0
        self._token_seq = 0
        self._lock = threading.RLock()
        if host is not None:
            self._check_host_signature(host)

    # -- registration --------------------------------------------------------

    def _check_host_signature(self, host: Callable) -> None:
        if not set(host.signature.input_names) <= set(self.signature.input_names):
            raise SignatureError("host inputs must be a subset of the caller's inputs")
        if host.signature.output_names != self.signature.output_names:
            raise SignatureError("host outputs must match the caller's outputs")

    def _check_member_signature(self, callable: Callable, role: str) -> None:
        sig = callable.signature
        caller_inputs = set(self.signature.input_names)
        caller_outputs = tuple(self.signature.output_names)
        if role == ROLE_AGGREGATOR:
            if tuple(sig.output_names) != caller_outputs:
                raise SignatureError("aggregator outputs must match the caller's outputs")
            return
        if role == ROLE_GATE:
            if not (set(sig.input_names) - {PREV_OUTPUT_PARAM}) <= caller_inputs:
                raise SignatureError("gate inputs must be a subset of the caller's inputs")
            return
        if role != ROLE_ENSEMBLE:
            return  # custom roles carry attributes only; never invoked by the pipeline
        if tuple(sig.output_names) != caller_outputs:
            raise SignatureError("ensemble member outputs must match the caller's outputs")
        if callable.kind is CallableKind.MODEL:
            if not caller_inputs <= set(sig.input_names):
                raise SignatureError("model inputs must cover all of the caller's inputs")
            extra = set(sig.input_names) - caller_inputs
            if not extra <= set(self.signature.context_names):
                raise SignatureError(
                    "model parameters beyond the caller's inputs must be declared context parameters")
            for other in self.registrations:
                if other.role == ROLE_ENSEMBLE and other.callable.kind is CallableKind.MODEL:
                    if other.callable.signature != sig:
                        raise SignatureError("all ensemble models must share one signature")
                    break
        else:
            if not (set(sig.input_names) - {PREV_OUTPUT_PARAM}) <= caller_inputs:
                raise SignatureError("member inputs must be a subset of the caller's inputs")

    def _would_cycle(self, callable: Callable) -> bool:
        """True if registering ``callable`` would close a nesting cycle."""
        stack = [callable]
        seen = set()
        while stack:
            node = stack.pop()
            targets = []
            if isinstance(node, Callable):
                if isinstance(node.binding, NestedBinding):
                    targets = [node.binding.caller_id]
            for cid in targets:
                if cid == self.id:
                    return True
                if cid in seen:
                    continue
                seen.add(cid)
                inner = self.runtime.callers.get(cid)
                if inner is None:
                    continue
                if inner.host is not None:
                    stack.append(inner.host)
                for reg in inner.registrations:
                    stack.append(reg.callable)
        return False

    def register(self, callable: Callable, role: str = ROLE_ENSEMBLE,
                 attributes: Dict[str, Any] = None, principal: str = "admin") -> Registration:
        method = METHOD_REGISTER_MODEL if callable.kind is CallableKind.MODEL else METHOD_REGISTER_FUNCTION
        self.runtime.require(principal, method)
        with self._lock:
            if role == ROLE_AGGREGATOR and any(r.role == ROLE_AGGREGATOR for r in self.registrations):
                raise ConflictError("a caller admits at most one aggregator")
            if role == ROLE_GATE and any(r.role == ROLE_GATE for r in self.registrations):
                raise ConflictError("a caller admits at most one gate")
            self._check_member_signature(callable, role)
            if self._would_cycle(callable):
                raise ConflictError("registration would create a nesting cycle")
            self._reg_seq += 1
            reg = Registration(id=f"r{self._reg_seq}", callable=callable, role=role,
                               attributes=dict(attributes or {}))
            self.registrations.append(reg)
            self.runtime.callables.setdefault(callable.id, callable)
            cfg = self.config
        if cfg.auto_train and callable.trainable:
            training = self.dataset_view(quality.TRAINING_SELECTOR)
            if training:
                quality.train(self, reg, quality.TrainSpec(init="fresh"))
        if cfg.auto_test and callable.trainable:
            quality.evaluate(self, reg, behavior=quality.BEHAVIOR_COMBINED)
            quality.qualify(self, reg)
        return reg

    def unregister(self, registration_id: str, principal: str = "admin") -> Registration:
        with self._lock:
            reg = self.get_registration(registration_id)
            method = (METHOD_UNREGISTER_MODEL if reg.callable.kind is CallableKind.MODEL
                      else METHOD_UNREGISTER_FUNCTION)
            self.runtime.require(principal, method)
            self.registrations.remove(reg)
            if self.plan is not None and getattr(self.plan, "candidate_rid", None) == reg.id:
                self.plan.halt("candidate unregistered")
            return reg

    def get_registration(self, registration_id: str) -> Registration:
        for reg in self.registrations:
            if reg.id == registration_id:
                return reg
        raise NotFoundError(f"unknown registration {registration_id!r}")

    def ensemble_members(self) -> List[Registration]:
        return [r for r in self.registrations if r.role == ROLE_ENSEMBLE]

    def aggregator_registration(self) -> Optional[Registration]:
        for r in self.registrations:
            if r.role == ROLE_AGGREGATOR:
                return r
        return None

    def gate_registration(self) -> Optional[Registration]:
        for r in self.registrations:
            if r.role == ROLE_GATE:
                return r
        return None

    # -- configuration -------------------------------------------------------

    def update_config(self, patch, principal: str = "admin") -> CallerConfig:
        self.runtime.require(principal, METHOD_UPDATE_CONFIG)
        with self._lock:
            new = self.config.patched(patch) if isinstance(patch, dict) else patch
            new.validated(has_host=self.host is not None)
            if (self.plan is not None and self.plan.is_active()
                    and new.call_target != self.config.call_target):
                raise ConflictError(
                    "call_target is managed by the active transformation plan")
            self.config = new
            self.config_version += 1
            return new

    def _set_call_target(self, target: CallTarget) -> None:
        """Internal config flip used by transformation transitions."""
        with self._lock:
            self.config = replace(self.config, call_target=target).validated(self.host is not None)
            self.config_version += 1

    # -- context -------------------------------------------------------------

    def _resolve_context(self, inputs: Record, explicit: Optional[Record],
                         path: str, cfg: CallerConfig) -> Record:
        ctx: Record = {}
        if path != "direct":
            for pname, provider_id in self.context_providers:
                provider = self.runtime.hooks.context_provider(provider_id)
                ctx[pname] = provider(inputs)
        if explicit:
            for key, value in explicit.items():
                if key.startswith(RESERVED_PREFIX):
                    raise SignatureError(f"context parameter {key!r} uses the reserved prefix")
                ctx[key] = value
        self.signature.validate_context(ctx)
        if cfg.auto_id is AutoId.ON:
            ctx[CALLER_ID_PARAM] = self.id
        return ctx

    # -- member invocation ----------------------------------------------------

    def _member_record(self, callable: Callable, inputs: Record, context: Record,
                       prev: Optional[Record] = None, as_host: bool = False) -> Record:
        """Build the record one member receives. Models get inputs plus
        context; everything else gets its declared subset of the inputs.
        ``prev`` is attached under the reserved name for sequential stages."""
        if callable.kind is CallableKind.MODEL and not as_host:
            rec = dict(inputs)
            rec.update(context)
            if prev is not None:
                rec[PREV_OUTPUT_PARAM] = prev
            return rec
        rec = {}
        for pname in callable.signature.input_names:
            if pname == PREV_OUTPUT_PARAM:
                if prev is None:
                    raise MemberFailure("first stage cannot consume a previous output")
                rec[pname] = prev
            elif pname in inputs:
                rec[pname] = inputs[pname]
            else:
                raise MemberFailure(f"input {pname!r} unavailable for member {callable.id!r}")
        return rec

    def _invoke(self, callable: Callable, record: Record, principal: str,
                eval_mode: bool, validate_output: bool = True) -> Record:
        b = callable.binding
        if isinstance(b, ModelBinding):
            out = b.model.predict(record)
        elif isinstance(b, LocalBinding):
            if b.impl is None:
                raise MemberFailure(f"callable {callable.id!r} has no bound implementation"
                                    + (f" (ref {b.ref!r})" if b.ref else ""))
            out = b.impl(record)
        elif isinstance(b, RemoteBinding):
            out = invoke_remote(b, record)
        elif isinstance(b, ExternalBinding):
            if eval_mode:
                raise MemberFailure("external members cannot be evaluated offline")
            req = self.runtime.collab.open(self.id, record, b.timeout_s)
            out = self.runtime.collab.wait(req.id)
        elif isinstance(b, NestedBinding):
            inner = self.runtime.get_caller(b.caller_id)
            out = inner.call(record, principal=principal, path="surrogate",
                             _eval_mode=eval_mode).output
        else:
            raise MemberFailure(f"callable {callable.id!r} is unbound")
        if validate_output:
            try:
                callable.signature.validate_outputs(out)
            except SignatureError as exc:
                raise MemberFailure(str(exc)) from None
        return out

    def _weight_map(self, source: WeightSource, extra_ids: Sequence[str] = ()) -> Dict[str, Optional[float]]:
        known: Dict[str, Optional[float]] = {cid: None for cid in extra_ids}
        for reg in self.ensemble_members():
            if source is WeightSource.GOLD:
                known[reg.callable.id] = reg.metrics.gold_accuracy
            elif source is WeightSource.SILVER:
                known[reg.callable.id] = reg.metrics.silver_accuracy
            else:
                known[reg.callable.id] = reg.metrics.combined_accuracy
        return known

    def _record_latency(self, reg: Registration, latency_s: float) -> None:
        m = reg.metrics
        m.latency_ewma_s = (latency_s if m.latency_ewma_s is None
                            else (1 - _EWMA_ALPHA) * m.latency_ewma_s + _EWMA_ALPHA * latency_s)

    def _gated_members(self, inputs: Record, context: Record, cfg: CallerConfig,
                       principal: str, eval_mode: bool) -> List[Registration]:
        members = self.ensemble_members()
        if cfg.gating.kind is GateKind.GATE_MODEL:
            gate_reg = self.gate_registration()
            if gate_reg is None:
                raise ConfigError("gate_model gating requires a registration with role 'gate'")

            def invoke_gate(gin: Record) -> Record:
                rec = self._member_record(gate_reg.callable, gin, context)
                if not eval_mode:
                    with self._lock:
                        gate_reg.invocations += 1
                return self._invoke(gate_reg.callable, rec, principal, eval_mode)

            return gate(members, cfg.gating, inputs, invoke_gate=invoke_gate)
        if cfg.gating.kind is GateKind.RANDOM_K:
            if eval_mode:
                # Evaluation must not consume the caller's gate stream.
                return gate(members, cfg.gating, inputs,
                            rng=SplitMix64(mix_str(cfg.rng_seed, "eval-gate")))
            with self._lock:
                return gate(members, cfg.gating, inputs, rng=self.rng[STREAM_GATE])
        return gate(members, cfg.gating, inputs)

    # -- the pipeline ----------------------------------------------------------

    def call(self, inputs: Record, explicit_context: Optional[Record] = None,
             principal: str = "admin", path: str = "surrogate",
             _eval_mode: bool = False) -> CallResult:
        if not _eval_mode:
            self.runtime.require(principal, METHOD_CALL)
        with self._lock:
            cfg = self.config
            version = self.config_version
        started = time.perf_counter()

        if cfg.auto_id is AutoId.PASSTHROUGH:
            # Thin forwarding: no validation, no context, no caching, no sampling.
            if self.host is None:
                raise ConfigError("passthrough caller has no host")
            out = self._invoke(self.host, inputs, principal, _eval_mode, validate_output=False)
            if not _eval_mode:
                with self._lock:
                    self.host_invocations += 1
            return CallResult(self.id, out, [MemberOutput(self.host.id, True, output=out)],
                              None, (TARGET_HOST,), time.perf_counter() - started, version)

        self.signature.validate_inputs(inputs)
        context = self._resolve_context(inputs, explicit_context, path, cfg)

        use_host = cfg.call_target in (CallTarget.HOST, CallTarget.BOTH) and self.host is not None
        active: List[Registration] = []
        if cfg.call_target in (CallTarget.REGISTERED, CallTarget.BOTH):
            active = self._gated_members(inputs, context, cfg, principal, _eval_mode)

        if not use_host and not active:
            raise CallError("no targets: no host in scope and no active registered members")

        member_outputs: List[MemberOutput] = []
        host_output: Optional[MemberOutput] = None

        def host_thunk() -> Record:
            rec = self._member_record(self.host, inputs, context, as_host=True)
            if not _eval_mode:
                with self._lock:
                    self.host_invocations += 1
            return self._invoke(self.host, rec, principal, _eval_mode)

        if cfg.execution is ExecutionMode.SEQUENTIAL and active:
            if use_host:
                host_output = run_parallel([(self.host.id, host_thunk)])[0]

            def stage_fn(reg: Registration):
                def run(prev: Optional[Record]) -> Record:
                    rec = self._member_record(reg.callable, inputs, context, prev=prev)
                    if not _eval_mode:
                        with self._lock:
                            reg.invocations += 1
                    out = self._invoke(reg.callable, rec, principal, _eval_mode)
                    return out
                return run

            final, stage_outputs = run_sequential(
                [(reg.callable.id, stage_fn(reg)) for reg in active])
            member_outputs.extend(stage_outputs)
            for reg, mo in zip(active, stage_outputs):
                self._record_latency(reg, mo.latency_s)
            # Only the final stage's output represents the chain downstream.
            success_pairs = [] if final is None else [(active[-1].callable.id, final)]
        else:
            entries = []
            if use_host:
                entries.append((self.host.id, host_thunk))

            def member_thunk(reg: Registration):
                def run() -> Record:
                    rec = self._member_record(reg.callable, inputs, context)
                    if not _eval_mode:
                        with self._lock:
                            reg.invocations += 1
                    return self._invoke(reg.callable, rec, principal, _eval_mode)
                return run

            entries.extend((reg.callable.id, member_thunk(reg)) for reg in active)
            results = run_parallel(entries)
            if use_host:
                host_output = results[0]
                results = results[1:]
            member_outputs.extend(results)
            for reg, mo in zip(active, results):
                self._record_latency(reg, mo.latency_s)
            success_pairs = [(mo.callable_id, mo.output) for mo in results if mo.ok]

        if host_output is not None:
            member_outputs.insert(0, host_output)

        targets_used = tuple(t for t, used in
                             ((TARGET_HOST, use_host), (TARGET_REGISTERED, bool(active)))
                             if used)

        if cfg.call_target is CallTarget.HOST:
            if host_output is None or not host_output.ok:
                raise CallError(f"host failed: {host_output.error if host_output else 'absent'}")
            output = host_output.output
        else:
            if host_output is not None and host_output.ok:
                success_pairs.insert(0, (self.host.id, host_output.output))
            if not success_pairs:
                errors = "; ".join(f"{m.callable_id}: {m.error}" for m in member_outputs if not m.ok)
                raise CallError(f"every activated source failed ({errors})")
            output = self._aggregate(success_pairs, cfg, inputs, principal, _eval_mode)

        review_token = None
        sample_id = None
        if cfg.auto_cache and not _eval_mode:
            with self._lock:
                split = (Split.EVALUATION
                         if self.rng[STREAM_SPLIT].next_float() < cfg.edata_fraction
                         else Split.TRAINING)
                sampled = self.rng[STREAM_FEEDBACK].next_float() < cfg.feedback_fraction
                sample = self.store.append(inputs, context, output, Origin.CALL, split, version)
                sample_id = sample.id
                if sampled:
                    self._token_seq += 1
                    review_token = f"t-{self.id}-{self._token_seq}"
                    self.store.mark_pending(sample, review_token)

        return CallResult(self.id, output, member_outputs, review_token, targets_used,
                          time.perf_counter() - started, version, sample_id)

    def _aggregate(self, success_pairs: List[Tuple[str, Record]], cfg: CallerConfig,
                   inputs: Record, principal: str, eval_mode: bool) -> Record:
        spec = cfg.aggregation
        invoke_aggregator = None
        if spec.strategy is Strategy.AGGREGATOR_MODEL:
            agg_reg = self.aggregator_registration()
            if agg_reg is not None:
                def invoke_aggregator(record: Record, _reg=agg_reg) -> Record:
                    if not eval_mode:
                        with self._lock:
                            _reg.invocations += 1
                    return self._invoke(_reg.callable, record, principal, eval_mode)
        hook = None
        if spec.strategy is Strategy.CUSTOM_HOOK:
            hook = self.runtime.hooks.aggregators.get(spec.hook)
        weights = None
        if spec.strategy in (Strategy.QUALITY_WEIGHTED_MEAN, Strategy.FILTERED_MEAN):
            if (spec.strategy is Strategy.QUALITY_WEIGHTED_MEAN
                    and self.learned_weights is not None):
                weights = dict(self.learned_weights)
                for cid, _ in success_pairs:
                    weights.setdefault(cid, None)
            else:
                weights = self._weight_map(spec.weight_source,
                                           extra_ids=[cid for cid, _ in success_pairs])
        metrics = {reg.callable.id: reg.metrics for reg in self.ensemble_members()}
        output = aggregate(success_pairs, spec, self.signature.output_names,
                           weights=weights, inputs=inputs,
                           invoke_aggregator=invoke_aggregator, hook=hook, metrics=metrics)
        if spec.strategy not in (Strategy.STACKING,):
            self.signature.validate_outputs(output)
        return output

    # -- convenience entry points ----------------------------------------------

    def call_direct(self, inputs: Record, context: Optional[Record] = None,
                    principal: str = "admin") -> CallResult:
        """Direct invocation: context arguments must be supplied explicitly."""
        return self.call(inputs, explicit_context=context, principal=principal, path="direct")

    def call_nested(self, inputs: Record, explicit_context: Optional[Record] = None,
                    principal: str = "admin") -> CallResult:
        """Call through a caller that nests other callers; each nested member
        runs its own full pipeline and caches its own samples."""
        if not any(isinstance(r.callable.binding, NestedBinding)
                   for r in self.registrations):
            raise ValidationError("caller has no nested-caller registrations")
        return self.call(inputs, explicit_context=explicit_context, principal=principal)

    def surrogate(self) -> "Surrogate":
        return Surrogate(self)

    def eval_call(self, inputs: Record, context: Optional[Record] = None) -> Record:
        """Pipeline invocation for evaluation: no caching, no sampling, no
        counters; context is replayed from the stored sample."""
        result = self.call(inputs, explicit_context=_strip_reserved(context),
                           path="surrogate", _eval_mode=True)
        return result.output

    # -- sensors, reviews, datasets ---------------------------------------------

    def add_sensor_sample(self, inputs: Record, output: Record,
                          principal: str = "admin") -> Sample:
        """Ingest an input/output pair observed elsewhere; no member is invoked."""
        self.runtime.require(principal, METHOD_SENSOR)
        self.signature.validate_inputs(inputs)
        self.signature.validate_outputs(output)
        with self._lock:
            cfg = self.config
            split = (Split.EVALUATION
                     if self.rng[STREAM_SPLIT].next_float() < cfg.edata_fraction
                     else Split.TRAINING)
            return self.store.append(inputs, {}, output, Origin.SENSOR, split,
                                     self.config_version)

    def pending_reviews(self, limit: Optional[int] = None) -> List[Tuple[str, Sample]]:
        return self.store.pending(limit)

    def apply_feedback(self, token: str, action: str, output: Optional[Record] = None,
                       value: Optional[float] = None, principal: str = "admin") -> Sample:
        self.runtime.require(principal, METHOD_REVIEW)
        if action == ACTION_OVERRIDE and output is not None:
            self.signature.validate_outputs(output)
        return self.store.apply_feedback(token, action, output=output, value=value,
                                         ttl=self.config.review_ttl_s)

    def dataset_view(self, selector: DatasetSelector = DatasetSelector()) -> List[Sample]:
        return self.store.view(selector)

    # -- anytime -----------------------------------------------------------------

    def call_anytime(self, inputs: Record, explicit_context: Optional[Record] = None,
                     principal: str = "admin", deadline_s: Optional[float] = None):
        """Yield aggregates of strictly increasing expected quality as
        sources complete. Requires ``anytime`` mode and at least two output
        sources (the host counts as one)."""
        self.runtime.require(principal, METHOD_CALL)
        with self._lock:
            cfg = self.config
        if not cfg.anytime:
            raise ConfigError("anytime mode is disabled for this caller")
        self.signature.validate_inputs(inputs)
        context = self._resolve_context(inputs, explicit_context, "surrogate", cfg)

        use_host = cfg.call_target in (CallTarget.HOST, CallTarget.BOTH) and self.host is not None
        active = []
        if cfg.call_target in (CallTarget.REGISTERED, CallTarget.BOTH):
            active = self._gated_members(inputs, context, cfg, principal, False)
        sources: List[Tuple[str, Optional[Registration]]] = []
        if use_host:
            sources.append((self.host.id, None))
        sources.extend((reg.callable.id, reg) for reg in active)
        if len(sources) < 2:
            raise CallError("anytime calls need at least two output sources")

        return self._anytime_stream(sources, inputs, context, cfg, principal, deadline_s)

    def _anytime_stream(self, sources, inputs, context, cfg, principal, deadline_s):
        from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait as fwait

        started = time.perf_counter()
        deadline = None if deadline_s is None else started + deadline_s

        def quality_of(reg: Optional[Registration]) -> float:
            if reg is None:
                return 0.5
            m = reg.metrics
            if m.gold_accuracy is not None:
                return m.gold_accuracy
            if m.silver_accuracy is not None:
                return m.silver_accuracy
            return 0.5

        def run_source(cid: str, reg: Optional[Registration]) -> Tuple[str, Record, float]:
            if reg is None:
                rec = self._member_record(self.host, inputs, context, as_host=True)
                with self._lock:
                    self.host_invocations += 1
                return cid, self._invoke(self.host, rec, principal, False), 0.5
            rec = self._member_record(reg.callable, inputs, context)
            with self._lock:
                reg.invocations += 1
            return cid, self._invoke(reg.callable, rec, principal, False), quality_of(reg)

        pool = ThreadPoolExecutor(max_workers=len(sources))
        futures = {pool.submit(run_source, cid, reg): cid for cid, reg in sources}
        try:
            completed: List[Tuple[str, Record]] = []
            best_quality = None
            last_emitted = None
            pending = set(futures)
            while pending:
                timeout = None if deadline is None else max(deadline - time.perf_counter(), 0.0)
                done, pending = fwait(pending, timeout=timeout, return_when=FIRST_COMPLETED)
                if not done:
                    break  # deadline hit
                for fut in done:
                    try:
                        cid, out, q = fut.result()
                    except Exception:
                        continue  # failed source: excluded, never emitted
                    completed.append((cid, out))
                    best_quality = q if best_quality is None else max(best_quality, q)
                if not completed:
                    continue
                if last_emitted is None or best_quality > last_emitted:
                    agg = self._aggregate(list(completed), cfg, inputs, principal, True)
                    last_emitted = best_quality
                    yield AnytimeEmission(agg, best_quality,
                                          tuple(cid for cid, _ in completed),
                                          time.perf_counter() - started)
            if not completed:
                raise CallError("no anytime source completed before the deadline")
        finally:
            pool.shutdown(wait=False)

    # -- collaboration -------------------------------------------------------------

    def collab_open(self, inputs: Record, timeout_s: float):
        self.signature.validate_inputs(inputs)
        return self.runtime.collab.open(self.id, inputs, timeout_s)

    # -- reporting -------------------------------------------------------------------

    def describe(self, with_params: bool = False) -> dict:
        with self._lock:
            return {
                "id": self.id,
                "name": self.name,
                "created_at": self.created_at,
                "signature": self.signature.to_dict(),
                "config": self.config.to_dict(),
                "config_version": self.config_version,
                "host": self.host.describe(with_params) if self.host else None,
                "context_providers": [list(p) for p in self.context_providers],
                "registrations": [r.to_json(with_params) for r in self.registrations],
                "host_invocations": self.host_invocations,
                "sample_count": len(self.store.samples),
                "category_counts": self.store.category_counts(),
                "learned_weights": self.learned_weights,
                "plan_state": self.plan.state.value if self.plan else None,
            }


def _strip_reserved(record: Optional[Record]) -> Optional[Record]:
    if record is None:
        return None
    return {k: v for k, v in record.items() if not k.startswith(RESERVED_PREFIX)}


class Surrogate:
    """The callable stand-in returned when wrapping a host. Calling it runs
    the owning caller's pipeline with surrogate-path context resolution."""

    def __init__(self, caller: Caller):
        self.caller = caller

    def __call__(self, record: Record = None, /, **kwargs) -> Record:
        inputs = dict(record) if record else {}
        inputs.update(kwargs)
        return self.caller.call(inputs, path="surrogate").output


# ---------------------------------------------------------------------------
# Runtime
# ---------------------------------------------------------------------------

class Runtime:
    """Shared home for callers, callables, hooks, collaboration, and RBAC."""

    def __init__(self, rbac_table: Dict[str, frozenset] = None):
        self.callers: Dict[str, Caller] = {}
        self.callables: Dict[str, Callable] = {}
        self.hooks = HookRegistry()
        self.collab = CollabBoard()
        self.rbac = dict(DEFAULT_RBAC if rbac_table is None else rbac_table)
        self._callable_seq = 0
        self._lock = threading.RLock()

    # -- RBAC -------------------------------------------------------------

    def authorize(self, role: str, method: str) -> bool:
        return authorize(role, method, self.rbac)

    def require(self, role: str, method: str) -> None:
        if not self.authorize(role, method):
            raise AuthorizationError(f"role {role!r} may not perform {method!r}")

    # -- callable factories -------------------------------------------------

    def _new_callable_id(self, prefix: str) -> str:
        with self._lock:
            self._callable_seq += 1
            return f"{prefix}{self._callable_seq}"

    def function_callable(self, fn: PyCallable, signature: Signature,
                          id: str = None, ref: str = None, raw: bool = False) -> Callable:
        """Wrap a Python function as a registrable callable. By default the
        function is called with keyword arguments drawn from the record and
        its return value is coerced to a record; ``raw`` passes the record
        through untouched."""
        if raw:
            impl = fn
        else:
            out_names = signature.output_names

            def impl(record: Record, _fn=fn, _names=out_names) -> Record:
                result = _fn(**record)
                if isinstance(result, dict):
                    return result
                if len(_names) != 1:
                    raise MemberFailure("scalar return needs exactly one output parameter")
                return {_names[0]: result}
        cb = Callable(id=id or self._new_callable_id("fn-"), kind=CallableKind.FUNCTION,
                      signature=signature, binding=LocalBinding(impl=impl, ref=ref))
        self.callables[cb.id] = cb
        return cb

    def model_callable(self, model: ToyModel, id: str = None) -> Callable:
        signature = Signature(
            inputs=[(f, "number") for f in model.features],
            outputs=[(model.output, "any")],
        )
        cb = Callable(id=id or self._new_callable_id("m-"), kind=CallableKind.MODEL,
                      signature=signature, binding=ModelBinding(model=model), trainable=True)
        self.callables[cb.id] = cb
        return cb

    def builtin_model(self, spec: dict, id: str = None,
                      signature: Signature = None) -> Callable:
        """Build one of the built-in trainable models as a callable."""
        model = build_model(spec)
        cb = self.model_callable(model, id=id)
        if signature is not None:
            cb.signature = signature
        return cb

    def remote_callable(self, url: str, signature: Signature, kind: str = "model",
                        timeout_s: float = 10.0, retry: int = 0, id: str = None) -> Callable:
        cb = Callable(id=id or self._new_callable_id("rm-"), kind=CallableKind(kind),
                      signature=signature,
                      binding=RemoteBinding(url=url, timeout_s=timeout_s, retry=retry),
                      trainable=False)
        self.callables[cb.id] = cb
        return cb

    def external_callable(self, signature: Signature, timeout_s: float = 30.0,
                          id: str = None) -> Callable:
        cb = Callable(id=id or self._new_callable_id("ext-"), kind=CallableKind.EXTERNAL,
                      signature=signature, binding=ExternalBinding(timeout_s=timeout_s))
        self.callables[cb.id] = cb
        return cb

    def nested_callable(self, inner: "Caller", id: str = None) -> Callable:
        cb = Callable(id=id or f"nested-{inner.id}", kind=CallableKind.NESTED,
                      signature=inner.signature, binding=NestedBinding(caller_id=inner.id))
        self.callables[cb.id] = cb
        return cb

    def callable_from_desc(self, desc: dict) -> Callable:
        """Wire/persisted description to a live callable."""
        if "id" in desc and desc["id"] in self.callables:
            return self.callables[desc["id"]]
        kind = CallableKind(desc.get("kind", "function"))
        binding = desc.get("binding") or {}
        btype = binding.get("type")
        signature = Signature.from_dict(desc.get("signature", {}))
        cid = desc.get("id")
        if btype == "builtin":
            cb = self.builtin_model(binding["model"], id=cid)
            if desc.get("signature"):
                cb.signature = signature
            return cb
        if btype == "remote":
            return self.remote_callable(binding["url"], signature, kind=kind.value,
                                        timeout_s=binding.get("timeout_s", 10.0),
                                        retry=binding.get("retry", 0), id=cid)
        if btype == "external":
            return self.external_callable(signature, timeout_s=binding.get("timeout_s", 30.0),
                                          id=cid)
        if btype == "nested":
            inner = self.get_caller(binding["caller_id"])
            return self.nested_callable(inner, id=cid)
        if btype == "local":
            ref = binding.get("ref")
            impl = self.hooks.implementations.get(ref) if ref else None
            cb = Callable(id=cid or self._new_callable_id("fn-"), kind=kind,
                          signature=signature, binding=LocalBinding(impl=impl, ref=ref),
                          trainable=bool(desc.get("trainable")))
            self.callables[cb.id] = cb
            return cb
        raise ValidationError(f"cannot build a callable from binding {btype!r}")

    # -- caller management ------------------------------------------------------

    def create_caller(self, name: str, signature: Signature,
                      config: CallerConfig = None, host: Callable = None,
                      context_providers: Sequence[Tuple[str, str]] = (),
                      principal: str = "admin") -> Caller:
        self.require(principal, METHOD_CREATE_CALLER)
        with self._lock:
            if name in self.callers:
                raise ConflictError(f"caller {name!r} already exists")
            cfg = config or CallerConfig(
                call_target=CallTarget.HOST if host is not None else CallTarget.REGISTERED)
            caller = Caller(self, name, signature, cfg, host=host,
                            context_providers=context_providers)
            if host is not None:
                self.callables.setdefault(host.id, host)
            self.callers[name] = caller
            return caller

    def get_caller(self, caller_id: str) -> Caller:
        caller = self.callers.get(caller_id)
        if caller is None:
            raise NotFoundError(f"unknown caller {caller_id!r}")
        return caller

    def wrap(self, fn: PyCallable, name: str, signature: Signature,
             config: CallerConfig = None, ref: str = None, raw: bool = False,
             principal: str = "admin") -> Surrogate:
        """Wrap an existing function as the host of a new caller and return
        the surrogate that replaces it."""
        host = self.function_callable(fn, signature, ref=ref, raw=raw)
        caller = self.create_caller(name, signature, config=config, host=host,
                                    principal=principal)
        return caller.surrogate()

    def wrapd(self, name: str, signature: Signature, config: CallerConfig = None,
              ref: str = None):
        """Decorator flavor of ``wrap``: the decorated name is rebound to the
        surrogate within this namespace."""
        def deco(fn: PyCallable) -> Surrogate:
            return self.wrap(fn, name=name, signature=signature, config=config, ref=ref)
        return deco

    def share_check(self, callable_id: str) -> List[str]:
        """Caller ids that currently register the callable."""
        if callable_id not in self.callables:
            raise NotFoundError(f"unknown callable {callable_id!r}")
        return [c.id for c in self.callers.values()
                if any(r.callable.id == callable_id for r in c.registrations)]
