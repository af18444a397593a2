"""Legacy-to-model transformation: the host -> both -> registered workflow.

A plan binds one candidate model registration to its caller and walks the
call target forward as evidence accrues: the caller starts host-only while
operational data accumulates; once the candidate qualifies at the quality
thresholds the caller runs hybrid (host and candidate aggregated); once the
candidate clears the stricter validation thresholds the host is no longer
called. Host removal itself stays a manual, admin-only step.

While a plan is active the caller's call target belongs to the plan: manual
call-target patches are rejected, and every transition lands atomically with
its config flip plus a history entry carrying the evidence.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

from . import quality
from .errors import ConflictError, NotFoundError, ValidationError

DEFAULT_DRIFT_WINDOW = 200


class PlanState(str, Enum):
    HOST_ONLY = "host_only"
    HYBRID = "hybrid"
    MODEL_ONLY = "model_only"
    HALTED = "halted"


_TARGET_FOR_STATE = {
    PlanState.HOST_ONLY: "host",
    PlanState.HYBRID: "both",
    PlanState.MODEL_ONLY: "registered",
}


@dataclass
class PlanEvent:
    at: float
    transition: str
    evidence: dict

    def to_json(self) -> dict:
        return {"at": self.at, "transition": self.transition, "evidence": self.evidence}


@dataclass
class TransformationPlan:
    caller_id: str
    candidate_rid: str
    state: PlanState = PlanState.HOST_ONLY
    qualify_thresholds: tuple = (0.9, 0.8)
    validate_thresholds: tuple = (0.95, 0.85)
    demote_on_drift: bool = False
    drift_window: int = DEFAULT_DRIFT_WINDOW
    history: List[PlanEvent] = field(default_factory=list)
    active: bool = True
    halt_reason: Optional[str] = None

    def is_active(self) -> bool:
        return self.active and self.state is not PlanState.HALTED

    def halt(self, reason: str) -> None:
        self.history.append(PlanEvent(time.time(), f"{self.state.value}->halted",
                                      {"reason": reason}))
        self.state = PlanState.HALTED
        self.halt_reason = reason
        self.active = False

    def to_json(self) -> dict:
        return {
            "caller_id": self.caller_id,
            "candidate_rid": self.candidate_rid,
            "state": self.state.value,
            "qualify_thresholds": list(self.qualify_thresholds),
            "validate_thresholds": list(self.validate_thresholds),
            "demote_on_drift": self.demote_on_drift,
            "drift_window": self.drift_window,
            "history": [e.to_json() for e in self.history],
            "active": self.active,
            "halt_reason": self.halt_reason,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TransformationPlan":
        plan = cls(
            caller_id=doc["caller_id"],
            candidate_rid=doc["candidate_rid"],
            state=PlanState(doc.get("state", "host_only")),
            qualify_thresholds=tuple(doc.get("qualify_thresholds", (0.9, 0.8))),
            validate_thresholds=tuple(doc.get("validate_thresholds", (0.95, 0.85))),
            demote_on_drift=doc.get("demote_on_drift", False),
            drift_window=doc.get("drift_window", DEFAULT_DRIFT_WINDOW),
            active=doc.get("active", True),
            halt_reason=doc.get("halt_reason"),
        )
        plan.history = [PlanEvent(e["at"], e["transition"], e["evidence"])
                        for e in doc.get("history", [])]
        return plan


def plan_transformation(caller, candidate_rid: str, demote_on_drift: bool = False,
                        drift_window: int = DEFAULT_DRIFT_WINDOW,
                        principal: str = "admin") -> TransformationPlan:
    """Open a plan: force host-only routing and make sure data accrues."""
    caller.runtime.require(principal, "plan-start")
    with caller._lock:
        if caller.host is None:
            raise ValidationError("transformation needs a caller with a host")
        if caller.plan is not None and caller.plan.is_active():
            raise ConflictError("caller already has an active transformation plan")
        reg = caller.get_registration(candidate_rid)
        if reg.role != "ensemble" or not reg.callable.trainable:
            raise ValidationError("candidate must be a trainable ensemble-role model")
        plan = TransformationPlan(
            caller_id=caller.id,
            candidate_rid=candidate_rid,
            qualify_thresholds=tuple(caller.config.quality_thresholds),
            validate_thresholds=tuple(caller.config.validation_threshold),
            demote_on_drift=demote_on_drift,
            drift_window=drift_window,
        )
        caller.plan = plan
        from .core import CallTarget
        caller._set_call_target(CallTarget.HOST)
        if not caller.config.auto_cache:
            caller.config = caller.config.patched({"auto_cache": True})
            caller.config_version += 1
        plan.history.append(PlanEvent(time.time(), "->host_only",
                                      {"candidate": candidate_rid}))
    return plan


def step_transformation(caller, principal: str = "admin") -> TransformationPlan:
    """Re-evaluate the candidate and advance the plan if the evidence allows."""
    caller.runtime.require(principal, "plan-step")
    with caller._lock:
        plan = caller.plan
        if plan is None:
            raise NotFoundError("caller has no transformation plan")
        if not plan.is_active():
            raise ConflictError(f"plan is halted: {plan.halt_reason or 'inactive'}")
        reg = caller.get_registration(plan.candidate_rid)

    metrics = quality.evaluate(caller, reg, behavior=quality.BEHAVIOR_COMBINED)
    qualification = quality.qualify(caller, reg)
    evidence = {
        "gold_accuracy": metrics.gold_accuracy,
        "silver_accuracy": metrics.silver_accuracy,
        "qualification": qualification.value,
    }

    with caller._lock:
        if plan.state is PlanState.HOST_ONLY:
            if qualification is quality.Qualification.QUALIFIED:
                _transition(caller, plan, PlanState.HYBRID, evidence)
        elif plan.state is PlanState.HYBRID:
            vg, vs = plan.validate_thresholds
            if (metrics.gold_accuracy is not None and metrics.silver_accuracy is not None
                    and metrics.gold_accuracy >= vg and metrics.silver_accuracy >= vs):
                evidence["validate_thresholds"] = list(plan.validate_thresholds)
                _transition(caller, plan, PlanState.MODEL_ONLY, evidence)
        elif plan.state is PlanState.MODEL_ONLY and plan.demote_on_drift:
            check = quality.detect_drift(caller, plan.drift_window)
            if check.status == "alert":
                evidence["drift"] = check.alert.to_json()
                _transition(caller, plan, PlanState.HYBRID, evidence)
    return plan


def _transition(caller, plan: TransformationPlan, new_state: PlanState, evidence: dict) -> None:
    from .core import CallTarget
    old = plan.state
    plan.state = new_state
    caller._set_call_target(CallTarget(_TARGET_FOR_STATE[new_state]))
    plan.history.append(PlanEvent(time.time(), f"{old.value}->{new_state.value}", evidence))


def retire_host(caller, principal: str) -> dict:
    """Manual final step: drop the host once the plan has fully cut over."""
    caller.runtime.require(principal, "retire-host")
    with caller._lock:
        plan = caller.plan
        if plan is None or plan.state is not PlanState.MODEL_ONLY:
            raise ConflictError("host retirement requires a plan in the model-only state")
        host_id = caller.host.id if caller.host else None
        caller.host = None
        plan.history.append(PlanEvent(time.time(), "host_retired", {"host": host_id}))
        plan.active = False
    return {"retired_host": host_id, "call_target": caller.config.call_target.value}
