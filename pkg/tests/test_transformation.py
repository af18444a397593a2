"""The host -> both -> registered state machine."""

import pytest

from mcall import (
    AuthorizationError,
    CallTarget,
    ConflictError,
    PlanState,
    Qualification,
    ValidationError,
    plan_transformation,
    retire_host,
    step_transformation,
)
from tests.conftest import constant_member, make_caller


def hosted_caller_with_candidate(runtime, sig, name="tf", **kw):
    defaults = dict(feedback_fraction=0.5, edata_fraction=0.5, rng_seed=13,
                    quality_thresholds=(0.6, 0.5), validation_threshold=(0.8, 0.7))
    defaults.update(kw)
    caller = make_caller(runtime, sig, name, host_fn=lambda r: {"y": 0.0},
                         call_target=CallTarget.HOST, **defaults)
    caller.update_config({"min_eval_samples": [1, 1]})
    model = runtime.builtin_model({"kind": "constant", "value": 0.0, "output": "y"},
                                  signature=sig)
    reg = caller.register(model)
    return caller, reg


def feed_matching_traffic(caller, n=30):
    """Traffic where the cached output always matches the injected truth."""
    for i in range(n):
        res = caller.call({"v": float(i)})
        if res.review_token:
            caller.apply_feedback(res.review_token, "confirm")


class TestPlanLifecycle:
    def test_plan_starts_host_only_and_forces_target(self, runtime, sig):
        caller, reg = hosted_caller_with_candidate(runtime, sig)
        caller.update_config({"call_target": "both"})
        plan = plan_transformation(caller, reg.id)
        assert plan.state is PlanState.HOST_ONLY
        assert caller.config.call_target is CallTarget.HOST
        assert caller.config.auto_cache

    def test_requires_host(self, runtime, sig):
        caller = make_caller(runtime, sig, "nohost-tf")
        model = runtime.builtin_model({"kind": "constant", "value": 0.0, "output": "y"},
                                      signature=sig)
        reg = caller.register(model)
        with pytest.raises(ValidationError):
            plan_transformation(caller, reg.id)

    def test_candidate_must_be_trainable_ensemble(self, runtime, sig):
        caller, _ = hosted_caller_with_candidate(runtime, sig, "tf2")
        fn_reg = caller.register(constant_member(runtime, sig, 1.0))
        with pytest.raises(ValidationError):
            plan_transformation(caller, fn_reg.id)

    def test_single_active_plan(self, runtime, sig):
        caller, reg = hosted_caller_with_candidate(runtime, sig, "tf3")
        plan_transformation(caller, reg.id)
        with pytest.raises(ConflictError):
            plan_transformation(caller, reg.id)

    def test_manual_target_change_blocked_while_active(self, runtime, sig):
        caller, reg = hosted_caller_with_candidate(runtime, sig, "tf4")
        plan_transformation(caller, reg.id)
        with pytest.raises(ConflictError):
            caller.update_config({"call_target": "registered"})


class TestTransitions:
    def test_full_walk_to_model_only(self, runtime, sig):
        caller, reg = hosted_caller_with_candidate(runtime, sig, "walk")
        plan = plan_transformation(caller, reg.id)
        feed_matching_traffic(caller, 40)
        # The constant candidate reproduces the host exactly, so its gold and
        # silver accuracies are 1.0: qualification then validation both clear.
        plan = step_transformation(caller)
        assert plan.state is PlanState.HYBRID
        assert caller.config.call_target is CallTarget.BOTH
        plan = step_transformation(caller)
        assert plan.state is PlanState.MODEL_ONLY
        assert caller.config.call_target is CallTarget.REGISTERED
        transitions = [e.transition for e in plan.history]
        assert transitions == ["->host_only", "host_only->hybrid", "hybrid->model_only"]

    def test_no_transition_without_qualification(self, runtime, sig):
        caller, reg = hosted_caller_with_candidate(
            runtime, sig, "stuck", quality_thresholds=(0.99, 0.99),
            validation_threshold=(0.995, 0.995))
        plan = plan_transformation(caller, reg.id)
        # candidate answers 0.0 but truth is overridden to 1.0: never qualifies
        for i in range(30):
            res = caller.call({"v": float(i)})
            if res.review_token:
                caller.apply_feedback(res.review_token, "override", output={"y": 1.0})
        plan = step_transformation(caller)
        assert plan.state is PlanState.HOST_ONLY
        assert reg.qualification is not Qualification.QUALIFIED

    def test_hybrid_holds_until_validation(self, runtime, sig):
        caller, reg = hosted_caller_with_candidate(
            runtime, sig, "hold", quality_thresholds=(0.6, 0.5),
            validation_threshold=(1.0, 1.0))
        plan = plan_transformation(caller, reg.id)
        feed_matching_traffic(caller, 30)
        step_transformation(caller)
        assert plan.state is PlanState.HYBRID
        # perfection is unreachable once any mismatch exists
        res = caller.call({"v": 999.0})
        if res.review_token:
            caller.apply_feedback(res.review_token, "override", output={"y": 5.0})
        step_transformation(caller)
        assert plan.state is PlanState.HYBRID

    def test_every_target_change_has_history_evidence(self, runtime, sig):
        caller, reg = hosted_caller_with_candidate(runtime, sig, "audit")
        plan = plan_transformation(caller, reg.id)
        feed_matching_traffic(caller, 40)
        versions = [caller.config_version]
        while plan.state is not PlanState.MODEL_ONLY:
            step_transformation(caller)
            versions.append(caller.config_version)
        target_changes = versions[-1] - versions[0]
        transition_events = [e for e in plan.history if "->" in e.transition
                             and not e.transition.startswith("->")]
        assert target_changes == len(transition_events) == 2
        for event in transition_events:
            assert "qualification" in event.evidence
        final = transition_events[-1]
        assert final.evidence["gold_accuracy"] >= plan.validate_thresholds[0]
        assert final.evidence["silver_accuracy"] >= plan.validate_thresholds[1]

    def test_step_on_halted_plan_errors(self, runtime, sig):
        caller, reg = hosted_caller_with_candidate(runtime, sig, "halt")
        plan = plan_transformation(caller, reg.id)
        caller.unregister(reg.id)
        assert plan.state is PlanState.HALTED
        with pytest.raises(ConflictError):
            step_transformation(caller)


class TestDemotion:
    def test_drift_demotes_when_enabled(self, runtime, sig):
        caller, reg = hosted_caller_with_candidate(
            runtime, sig, "demote", quality_thresholds=(0.6, 0.5),
            validation_threshold=(0.7, 0.6))
        plan = plan_transformation(caller, reg.id, demote_on_drift=True,
                                   drift_window=20)
        feed_matching_traffic(caller, 60)
        step_transformation(caller)
        step_transformation(caller)
        assert plan.state is PlanState.MODEL_ONLY
        # now the world changes: every review overrides to a new truth
        for i in range(60):
            res = caller.call({"v": float(i)})
            if res.review_token:
                caller.apply_feedback(res.review_token, "override", output={"y": 7.0})
        plan = step_transformation(caller)
        assert plan.state is PlanState.HYBRID
        assert caller.config.call_target is CallTarget.BOTH
        assert any("drift" in e.evidence for e in plan.history)

    def test_no_demotion_by_default(self, runtime, sig):
        caller, reg = hosted_caller_with_candidate(
            runtime, sig, "stay", quality_thresholds=(0.6, 0.5),
            validation_threshold=(0.7, 0.6))
        plan = plan_transformation(caller, reg.id)
        feed_matching_traffic(caller, 60)
        step_transformation(caller)
        step_transformation(caller)
        assert plan.state is PlanState.MODEL_ONLY
        for i in range(60):
            res = caller.call({"v": float(i)})
            if res.review_token:
                caller.apply_feedback(res.review_token, "override", output={"y": 7.0})
        plan = step_transformation(caller)
        assert plan.state is PlanState.MODEL_ONLY


class TestRetireHost:
    def _model_only_caller(self, runtime, sig, name):
        caller, reg = hosted_caller_with_candidate(runtime, sig, name)
        plan_transformation(caller, reg.id)
        feed_matching_traffic(caller, 40)
        step_transformation(caller)
        step_transformation(caller)
        return caller

    def test_admin_retires_in_model_only(self, runtime, sig):
        caller = self._model_only_caller(runtime, sig, "retire")
        result = retire_host(caller, principal="admin")
        assert caller.host is None
        assert result["call_target"] == "registered"
        assert not caller.plan.active

    def test_wrong_state_rejected(self, runtime, sig):
        caller, reg = hosted_caller_with_candidate(runtime, sig, "early")
        plan_transformation(caller, reg.id)
        with pytest.raises(ConflictError):
            retire_host(caller, principal="admin")

    def test_operator_denied(self, runtime, sig):
        caller = self._model_only_caller(runtime, sig, "deny")
        with pytest.raises(AuthorizationError):
            retire_host(caller, principal="operator")
