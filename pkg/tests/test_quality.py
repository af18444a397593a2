"""Matching, evaluation behaviors, qualification, training, drift detection."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcall import (
    CallerConfig,
    CallTarget,
    DatasetSelector,
    Matcher,
    Qualification,
    Runtime,
    Signature,
    TrainSpec,
    ValidationError,
    detect_drift,
    evaluate,
    match_outputs,
    qualify,
    train,
)
from mcall.datastore import Category
from mcall.quality import BEHAVIOR_COMBINED, BEHAVIOR_GOLDEN, SCOPE_NESTED
from mcall.rng import SplitMix64
from tests.conftest import constant_member, make_caller


class TestMatchOutputs:
    def test_exact(self):
        assert match_outputs({"fraud": 1}, {"fraud": 1})
        assert not match_outputs({"fraud": 1}, {"fraud": 0})

    def test_numeric_tolerance(self):
        m = Matcher("numeric_tolerance", epsilon=1e-3)
        assert match_outputs({"score": 0.500001}, {"score": 0.5}, m)
        assert not match_outputs({"score": 0.51}, {"score": 0.5}, m)

    def test_per_param_epsilon(self):
        m = Matcher("numeric_tolerance", epsilon={"a": 0.5})
        assert match_outputs({"a": 1.4, "b": 2}, {"a": 1.0, "b": 2}, m)
        assert not match_outputs({"a": 1.4, "b": 2.1}, {"a": 1.0, "b": 2}, m)

    def test_non_numeric_params_stay_exact_under_tolerance(self):
        m = Matcher("numeric_tolerance", epsilon=1.0)
        assert not match_outputs({"tag": "x"}, {"tag": "y"}, m)

    def test_param_set_mismatch_errors(self):
        with pytest.raises(ValidationError):
            match_outputs({"a": 1}, {"b": 1})

    def test_custom_hook(self):
        hooks = {"lenient": lambda a, d: True}
        m = Matcher("custom", hook="lenient")
        assert match_outputs({"a": 1}, {"a": 99}, m, hooks)

    def test_negative_epsilon_rejected(self):
        with pytest.raises(ValidationError):
            Matcher("numeric_tolerance", epsilon=-0.1)


def build_eval_caller(runtime, sig, predictions, truths, *, splits, confirm,
                      name="ev", min_eval=(1, 1)):
    """A caller with one constant-style member and a hand-built dataset.

    predictions: what the member answers; truths: the supervised label per
    sample (None leaves the cached output in place).
    """
    caller = make_caller(runtime, sig, name, feedback_fraction=1.0,
                         edata_fraction=0.0, rng_seed=1)
    caller.update_config({"min_eval_samples": list(min_eval)})
    member = PredictMember(predictions)
    reg = caller.register(runtime.function_callable(member, sig, raw=True))
    reg.callable.kind = reg.callable.kind.__class__.MODEL
    reg.callable.trainable = False
    for i, (split_eval, do_confirm, truth) in enumerate(zip(splits, confirm, truths)):
        # drive the split stream deterministically by patching the fraction
        caller.update_config({"edata_fraction": 1.0 if split_eval else 0.0})
        res = caller.call({"v": float(i)})
        if do_confirm:
            caller.apply_feedback(res.review_token, "confirm")
        elif truth is not None:
            caller.apply_feedback(res.review_token, "override", output=truth)
    return caller, reg, member


class PredictMember:
    """Answers from a fixed script keyed by the input value."""

    def __init__(self, table):
        self.table = dict(table)

    def __call__(self, record):
        return {"y": self.table[record["v"]]}


class TestEvaluate:
    def test_golden_single_correct(self, runtime, sig):
        caller, reg, member = build_eval_caller(
            runtime, sig, predictions={0.0: 2.0}, truths=[{"y": 2.0}],
            splits=[True], confirm=[False])
        metrics = evaluate(caller, reg, behavior=BEHAVIOR_GOLDEN)
        assert metrics.gold_accuracy == 1.0
        assert metrics.silver_accuracy is None

    def test_combined_micro_average(self, runtime, sig):
        # gold: 1/1 correct; silver: 0/1 -> combined (1+0)/2
        caller, reg, member = build_eval_caller(
            runtime, sig,
            predictions={0.0: 2.0, 1.0: 5.0},
            truths=[{"y": 2.0}, None],
            splits=[True, True], confirm=[False, None])
        member.table[1.0] = 5.0
        # sample 1 stays unsupervised: cached output was member's 5.0;
        # flip the member answer so silver now mismatches
        member.table[1.0] = 7.0
        metrics = evaluate(caller, reg, behavior=BEHAVIOR_COMBINED)
        assert metrics.gold_accuracy == 1.0
        assert metrics.silver_accuracy == 0.0
        assert metrics.combined_accuracy == pytest.approx(0.5)

    def test_min_eval_samples_gate_accuracy(self, runtime, sig):
        caller, reg, member = build_eval_caller(
            runtime, sig, predictions={0.0: 2.0, 1.0: 2.0, 2.0: 2.0},
            truths=[{"y": 2.0}] * 3, splits=[True] * 3, confirm=[False] * 3,
            min_eval=(10, 1))
        metrics = evaluate(caller, reg)
        assert metrics.gold_accuracy is None  # 3 gold < gold_min=10
        assert metrics.sample_counts["gold"] == 3

    def test_invocation_failure_counts_as_mismatch(self, runtime, sig):
        caller, reg, member = build_eval_caller(
            runtime, sig, predictions={0.0: 2.0, 1.0: 99.0},
            truths=[{"y": 2.0}, {"y": 3.0}],
            splits=[True, True], confirm=[False, False])
        del member.table[1.0]  # the member now crashes on that input
        metrics = evaluate(caller, reg, behavior=BEHAVIOR_GOLDEN)
        assert metrics.gold_accuracy == 0.5
        assert metrics.sample_counts["failures"] == 1

    def test_evaluation_is_pure(self, runtime, sig):
        caller = make_caller(runtime, sig, "pure-ev", feedback_fraction=1.0,
                             edata_fraction=1.0, rng_seed=4)
        model = runtime.builtin_model(
            {"kind": "online_linear", "features": ["v"], "output": "y", "epochs": 10},
            signature=sig)
        reg = caller.register(model)
        for i in range(6):
            res = caller.call({"v": float(i)})
            caller.apply_feedback(res.review_token, "override", output={"y": float(2 * i)})
        train(caller, reg, TrainSpec(dataset=DatasetSelector()))
        param_hash = model.binding.model.param_hash()
        samples_before = [s.to_json() for s in caller.store.samples]
        evaluate(caller, reg, behavior=BEHAVIOR_COMBINED)
        assert model.binding.model.param_hash() == param_hash
        assert [s.to_json() for s in caller.store.samples] == samples_before

    def test_nested_scope_fills_member_metrics(self, runtime, sig):
        caller = make_caller(runtime, sig, "nested-ev", feedback_fraction=1.0,
                             edata_fraction=1.0, rng_seed=2,
                             config=None)
        caller.update_config({"min_eval_samples": [1, 1]})
        r1 = caller.register(constant_member(runtime, sig, 1.0))
        r2 = caller.register(constant_member(runtime, sig, 2.0))
        for i in range(3):
            res = caller.call({"v": float(i)})
            caller.apply_feedback(res.review_token, "override", output={"y": 1.0})
        evaluate(caller, behavior=BEHAVIOR_COMBINED, scope=SCOPE_NESTED)
        assert r1.metrics.gold_accuracy == 1.0
        assert r2.metrics.gold_accuracy == 0.0


class TestQualify:
    def _reg_with(self, runtime, sig, gold, silver, thresholds=(0.9, 0.8)):
        caller = make_caller(runtime, sig, f"q-{gold}-{silver}",
                             quality_thresholds=thresholds)
        reg = caller.register(constant_member(runtime, sig, 1.0))
        reg.metrics.gold_accuracy = gold
        reg.metrics.silver_accuracy = silver
        return caller, reg

    # Closed inequality: meeting a threshold exactly qualifies.
    @pytest.mark.parametrize("gold,silver,expected", [
        (0.9, 0.8, Qualification.QUALIFIED),
        (0.95, 0.79, Qualification.UNQUALIFIED),
        (0.89, 0.95, Qualification.UNQUALIFIED),
        (1.0, 1.0, Qualification.QUALIFIED),
        (0.9, 0.79999, Qualification.UNQUALIFIED),
        (None, 0.9, Qualification.INSUFFICIENT_DATA),
        (0.9, None, Qualification.INSUFFICIENT_DATA),
        (None, None, Qualification.INSUFFICIENT_DATA),
    ])
    def test_boundary(self, runtime, sig, gold, silver, expected):
        caller, reg = self._reg_with(runtime, sig, gold, silver)
        assert qualify(caller, reg) is expected
        assert reg.qualification is expected

    @settings(max_examples=150, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_grid_matches_rule(self, gold, silver, t_gold, t_silver):
        runtime = Runtime()
        sig = Signature(inputs=[("v", "number")], outputs=[("y", "number")])
        caller = make_caller(
            runtime, sig, "grid",
            quality_thresholds=(t_gold, t_silver),
            validation_threshold=(max(t_gold, 0.99), max(t_silver, 0.99)))
        reg = caller.register(constant_member(runtime, sig, 1.0))
        reg.metrics.gold_accuracy = gold
        reg.metrics.silver_accuracy = silver
        want = (Qualification.QUALIFIED if gold >= t_gold and silver >= t_silver
                else Qualification.UNQUALIFIED)
        assert qualify(caller, reg) is want


class TestTrain:
    def _caller_with_linear(self, runtime, sig, name, seed=3, epochs=60):
        caller = make_caller(runtime, sig, name, feedback_fraction=1.0,
                             edata_fraction=0.0, rng_seed=seed)
        model = runtime.builtin_model(
            {"kind": "online_linear", "features": ["v"], "output": "y",
             "epochs": epochs},
            signature=sig)
        reg = caller.register(model)
        return caller, reg, model

    def _feed(self, caller, pairs):
        for v, y in pairs:
            res = caller.call({"v": v})
            caller.apply_feedback(res.review_token, "override", output={"y": y})

    def test_fresh_twice_identical(self, runtime, sig):
        caller, reg, model = self._caller_with_linear(runtime, sig, "fresh")
        self._feed(caller, [(1.0, 2.0), (2.0, 4.0), (3.0, 6.0)])
        train(caller, reg, TrainSpec(init="fresh"))
        h1 = model.binding.model.param_hash()
        train(caller, reg, TrainSpec(init="fresh"))
        assert model.binding.model.param_hash() == h1

    def test_incremental_continues(self, runtime, sig):
        caller, reg, model = self._caller_with_linear(runtime, sig, "incr")
        self._feed(caller, [(1.0, 2.0), (2.0, 4.0)])
        r1 = train(caller, reg, TrainSpec(init="fresh"))
        w_after_fresh = list(model.binding.model.w)
        r2 = train(caller, reg, TrainSpec(init="incremental"))
        assert model.binding.model.w != w_after_fresh or model.binding.model.b != 0
        assert r1.loss_trace[-1] >= r2.loss_trace[-1] - 1e-12

    def test_empty_dataset_errors(self, runtime, sig):
        caller, reg, model = self._caller_with_linear(runtime, sig, "empty-train")
        with pytest.raises(ValidationError):
            train(caller, reg, TrainSpec())

    def test_non_trainable_target_errors(self, runtime, sig):
        caller = make_caller(runtime, sig, "notrain", feedback_fraction=0.0)
        reg = caller.register(constant_member(runtime, sig, 1.0))
        caller.add_sensor_sample({"v": 1.0}, {"y": 1.0})
        with pytest.raises(ValidationError):
            train(caller, reg, TrainSpec())

    def test_bagging_partitions_disjoint_exhaustive(self, runtime, sig):
        caller = make_caller(runtime, sig, "bag", feedback_fraction=0.0,
                             edata_fraction=0.0, rng_seed=5)
        models = [runtime.builtin_model(
            {"kind": "online_linear", "features": ["v"], "output": "y", "epochs": 1},
            signature=sig) for _ in range(2)]
        regs = [caller.register(m) for m in models]
        for i in range(100):
            caller.call({"v": float(i)})
        report = train(caller, None, TrainSpec(mode="nested", bagging=True))
        sizes = [report.members[r.id].samples_used for r in regs]
        assert sum(sizes) == 100
        assert min(sizes) == 50  # round-robin split is balanced
        # seeded: repeating the partition yields identical sizes
        report2 = train(caller, None, TrainSpec(mode="nested", bagging=True))
        assert [report2.members[r.id].samples_used for r in regs] == sizes

    def test_caller_level_weight_fit_reduces_loss(self, runtime, sig):
        from mcall import AggregationSpec, Strategy
        caller = make_caller(runtime, sig, "wfit", feedback_fraction=1.0,
                             edata_fraction=0.0, rng_seed=6,
                             aggregation=AggregationSpec(Strategy.QUALITY_WEIGHTED_MEAN))
        caller.register(constant_member(runtime, sig, 0.0))
        caller.register(constant_member(runtime, sig, 1.0))
        # truth is always 1.0 -> weights should shift toward the second member
        for i in range(10):
            res = caller.call({"v": float(i)})
            caller.apply_feedback(res.review_token, "override", output={"y": 1.0})
        report = train(caller, None, TrainSpec(mode="local"))
        assert report.loss_trace[-1] < report.loss_trace[0]
        weights = caller.learned_weights
        ids = [r.callable.id for r in caller.ensemble_members()]
        assert weights[ids[1]] > weights[ids[0]]
        out = caller.call({"v": 99.0}).output["y"]
        assert out > 0.9  # aggregate now leans on the truthful member

    def test_auto_train_and_test_on_register(self, runtime, sig):
        # feedback 0.5 leaves both supervised (gold) and unsupervised (silver)
        # evaluation data, so qualification has everything it needs.
        caller = make_caller(runtime, sig, "auto", feedback_fraction=0.5,
                             edata_fraction=0.5, rng_seed=7, auto_train=True,
                             auto_test=True, quality_thresholds=(0.5, 0.5),
                             validation_threshold=(0.6, 0.6))
        caller.update_config({"min_eval_samples": [1, 1]})
        seed_member = constant_member(runtime, sig, 1.0)
        caller.register(seed_member)
        for i in range(40):
            res = caller.call({"v": float(i)})
            if res.review_token:
                caller.apply_feedback(res.review_token, "confirm")
        model = runtime.builtin_model(
            {"kind": "constant", "value": 1.0, "output": "y"}, signature=sig)
        reg = caller.register(model)
        # trained on cached data, then evaluated and qualified right away
        assert reg.metrics.last_evaluated is not None
        assert reg.qualification is Qualification.QUALIFIED


class TestSharedModels:
    def test_training_via_one_caller_updates_all(self, runtime, sig):
        a = make_caller(runtime, sig, "tr-a", feedback_fraction=1.0,
                        edata_fraction=0.0, rng_seed=8)
        b = make_caller(runtime, sig, "tr-b", feedback_fraction=0.0)
        model = runtime.builtin_model(
            {"kind": "online_linear", "features": ["v"], "output": "y",
             "epochs": 200},
            signature=sig)
        reg_a = a.register(model)
        b.register(model)
        for v in (1.0, 2.0, 3.0):
            res = a.call({"v": v})
            a.apply_feedback(res.review_token, "override", output={"y": 2 * v})
        train(a, reg_a, TrainSpec(init="fresh"))
        via_a = a.call({"v": 5.0}).output["y"]
        via_b = b.call({"v": 5.0}).output["y"]
        assert via_a == via_b == pytest.approx(10.0, abs=0.1)

    def test_per_caller_evaluations_differ(self, runtime, sig):
        a = make_caller(runtime, sig, "ev-a", feedback_fraction=1.0,
                        edata_fraction=1.0, rng_seed=9)
        b = make_caller(runtime, sig, "ev-b", feedback_fraction=1.0,
                        edata_fraction=1.0, rng_seed=10)
        for c in (a, b):
            c.update_config({"min_eval_samples": [1, 1]})
        model = runtime.builtin_model(
            {"kind": "constant", "value": 1.0, "output": "y"}, signature=sig)
        reg_a = a.register(model)
        reg_b = b.register(model)
        for i in range(4):
            res = a.call({"v": float(i)})
            a.apply_feedback(res.review_token, "confirm")       # truth == 1.0
            res = b.call({"v": float(i)})
            b.apply_feedback(res.review_token, "override", output={"y": 0.0})
        evaluate(a, reg_a)
        evaluate(b, reg_b)
        assert reg_a.metrics.gold_accuracy == 1.0
        assert reg_b.metrics.gold_accuracy == 0.0


class TestDriftDetection:
    def _run_drift_scenario(self, runtime, sig, flip_at, steps, window,
                            threshold=0.9, seed=33):
        """Caller hosts the pre-flip rule; labels flip at flip_at."""
        def rule(record):
            return {"y": 1.0 if record["v"] > 0.5 else 0.0}

        caller = make_caller(runtime, sig, f"drift-{flip_at}-{seed}", host_fn=rule,
                             call_target=CallTarget.HOST, feedback_fraction=1.0,
                             edata_fraction=0.5, rng_seed=seed,
                             quality_thresholds=(threshold, 0.5),
                             validation_threshold=(max(threshold, 0.95), 0.6))
        rng = SplitMix64(seed)
        first_alert = None
        pre_flip_alerts = 0
        for step in range(steps):
            v = rng.next_float()
            res = caller.call({"v": v})
            flipped = step >= flip_at
            truth = 1.0 if (v <= 0.35 if flipped else v > 0.5) else 0.0
            if res.output == {"y": truth}:
                caller.apply_feedback(res.review_token, "confirm")
            else:
                caller.apply_feedback(res.review_token, "override", output={"y": truth})
            check = detect_drift(caller, window)
            if check.status == "alert":
                if step < flip_at:
                    pre_flip_alerts += 1
                elif first_alert is None:
                    first_alert = step
        return first_alert, pre_flip_alerts

    def test_flip_raises_alert_within_window(self, runtime, sig):
        first_alert, pre_flip = self._run_drift_scenario(
            runtime, sig, flip_at=600, steps=900, window=100)
        assert pre_flip == 0
        assert first_alert is not None and 600 < first_alert <= 700

    def test_not_enough_data(self, runtime, sig):
        caller = make_caller(runtime, sig, "short", feedback_fraction=1.0, rng_seed=1)
        caller.register(constant_member(runtime, sig, 1.0))
        res = caller.call({"v": 1.0})
        caller.apply_feedback(res.review_token, "confirm")
        check = detect_drift(caller, window_size=100)
        assert check.status == "not_enough_data"
        assert check.alert is None

    def test_healthy_window_no_alert(self, runtime, sig):
        first_alert, pre_flip = self._run_drift_scenario(
            runtime, sig, flip_at=10**9, steps=400, window=100)
        assert first_alert is None and pre_flip == 0

    def test_baseline_reported(self, runtime, sig):
        def rule(record):
            return {"y": 1.0}
        caller = make_caller(runtime, sig, "base", host_fn=rule,
                             call_target=CallTarget.HOST, feedback_fraction=1.0,
                             edata_fraction=0.0, rng_seed=3,
                             quality_thresholds=(0.9, 0.5))
        for i in range(30):
            res = caller.call({"v": float(i)})
            caller.apply_feedback(res.review_token, "confirm")
        check = detect_drift(caller, 10)
        assert check.status == "ok"
        assert check.windowed_accuracy == 1.0
        assert check.baseline_accuracy == 1.0

    def test_soundness_no_alert_on_stable_rule(self, runtime, sig):
        """A model trained on >= 500 samples of an unchanged rule never alerts."""
        caller = make_caller(runtime, sig, "sound", feedback_fraction=1.0,
                             edata_fraction=0.0, rng_seed=12,
                             quality_thresholds=(0.9, 0.5))
        model = runtime.builtin_model(
            {"kind": "nearest_centroid", "features": ["v"], "output": "y"},
            signature=sig)
        reg = caller.register(model)
        rng = SplitMix64(55)
        pairs = []
        for _ in range(500):
            v = rng.next_float()
            pairs.append(({"v": v}, {"y": 1.0 if v > 0.5 else 0.0}))
        model.binding.model.fit(pairs, fresh=True)
        alerts = 0
        for step in range(400):
            v = rng.next_float()
            res = caller.call({"v": v})
            truth = {"y": 1.0 if v > 0.5 else 0.0}
            if res.output == truth:
                caller.apply_feedback(res.review_token, "confirm")
            else:
                caller.apply_feedback(res.review_token, "override", output=truth)
            if detect_drift(caller, 200).status == "alert":
                alerts += 1
        assert alerts == 0
