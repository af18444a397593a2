"""Output matching, evaluation, qualification, training, and drift detection.

Accuracy comes in two flavors: gold accuracy (against supervised evaluation
samples, the human-backed truth) and silver accuracy (against unsupervised
evaluation samples, i.e. consistency with what the caller shipped). A member
qualifies when it meets or exceeds both configured thresholds; either
accuracy missing (too few samples) leaves it in the insufficient-data state.

These functions never import the core module: they operate on the caller
object they are handed, which keeps evaluation logic reusable against any
object exposing the same small surface.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .datastore import (
    TRAINING_SELECTOR,
    Category,
    DatasetSelector,
    ReviewState,
    Sample,
)
from .errors import ConfigError, McallError, NotFoundError, ValidationError
from .records import Record, is_number
from .rng import SplitMix64, mix_str


class Qualification(str, Enum):
    QUALIFIED = "qualified"
    UNQUALIFIED = "unqualified"
    INSUFFICIENT_DATA = "insufficient_data"


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------

class MatcherKind(str, Enum):
    EXACT = "exact"
    NUMERIC_TOLERANCE = "numeric_tolerance"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Matcher:
    kind: MatcherKind = MatcherKind.EXACT
    epsilon: Any = 0.0              # float, or per-parameter {name: eps}
    hook: Optional[str] = None      # custom matcher id

    def __post_init__(self):
        object.__setattr__(self, "kind", MatcherKind(self.kind))
        eps = self.epsilon
        values = eps.values() if isinstance(eps, dict) else [eps]
        for v in values:
            if not is_number(v) or v < 0:
                raise ValidationError("matcher epsilon must be a non-negative number")

    def eps_for(self, name: str) -> float:
        if isinstance(self.epsilon, dict):
            return float(self.epsilon.get(name, 0.0))
        return float(self.epsilon)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "epsilon": self.epsilon, "hook": self.hook}

    @classmethod
    def from_dict(cls, doc: dict) -> "Matcher":
        return cls(kind=doc.get("kind", "exact"), epsilon=doc.get("epsilon", 0.0),
                   hook=doc.get("hook"))


EXACT = Matcher()


def match_outputs(actual: Record, desired: Record, matcher: Matcher = EXACT,
                  hooks: Dict[str, Any] = None) -> bool:
    """Compare an actual output record against the desired one."""
    if set(actual.keys()) != set(desired.keys()):
        raise ValidationError("output parameter sets differ")
    if matcher.kind is MatcherKind.CUSTOM:
        fn = (hooks or {}).get(matcher.hook)
        if fn is None:
            raise NotFoundError(f"unknown matcher hook {matcher.hook!r}")
        return bool(fn(actual, desired))
    for name, desired_value in desired.items():
        value = actual[name]
        if (matcher.kind is MatcherKind.NUMERIC_TOLERANCE
                and is_number(value) and is_number(desired_value)):
            if abs(value - desired_value) > matcher.eps_for(name):
                return False
        elif value != desired_value or type(value) is not type(desired_value):
            if not (is_number(value) and is_number(desired_value) and value == desired_value):
                return False
    return True


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class MemberMetrics:
    gold_accuracy: Optional[float] = None
    silver_accuracy: Optional[float] = None
    combined_accuracy: Optional[float] = None
    sample_counts: Dict[str, int] = field(default_factory=dict)
    latency_ewma_s: Optional[float] = None
    last_evaluated: Optional[float] = None

    def to_json(self) -> dict:
        return {
            "gold_accuracy": self.gold_accuracy,
            "silver_accuracy": self.silver_accuracy,
            "combined_accuracy": self.combined_accuracy,
            "sample_counts": dict(self.sample_counts),
            "latency_ewma_s": self.latency_ewma_s,
            "last_evaluated": self.last_evaluated,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MemberMetrics":
        return cls(
            gold_accuracy=doc.get("gold_accuracy"),
            silver_accuracy=doc.get("silver_accuracy"),
            combined_accuracy=doc.get("combined_accuracy"),
            sample_counts=dict(doc.get("sample_counts", {})),
            latency_ewma_s=doc.get("latency_ewma_s"),
            last_evaluated=doc.get("last_evaluated"),
        )


BEHAVIOR_GOLDEN = "golden"
BEHAVIOR_COMBINED = "combined"
SCOPE_LOCAL = "local"
SCOPE_NESTED = "nested"


def _forbid_passthrough(caller) -> None:
    if caller.config.auto_id.value == "passthrough":
        raise ConfigError("passthrough callers neither train nor evaluate")


def _invoke_target(caller, registration, sample: Sample) -> Record:
    """Invoke the evaluation target on one sample's inputs (and, for models,
    its stored context). Returns the output record; exceptions bubble."""
    if registration is None:
        return caller.eval_call(sample.inputs, sample.context)
    record = caller._member_record(registration.callable, sample.inputs, sample.context)
    return caller._invoke(registration.callable, record, "admin", True)


def _missing_context(caller, registration, sample: Sample) -> bool:
    """True when the sample predates a context parameter the target needs;
    such samples are skipped rather than scored."""
    if registration is None:
        needed = set(caller.signature.context_names)
    elif registration.callable.kind.value == "model":
        needed = (set(registration.callable.signature.input_names)
                  - set(caller.signature.input_names))
    else:
        return False
    return not needed <= set(sample.context.keys())


def _score(caller, registration, samples: Sequence[Sample], matcher: Matcher,
           hooks) -> Tuple[int, int, int, int]:
    """(matches, evaluated, failures, skipped) over the samples."""
    matches = evaluated = failures = skipped = 0
    for sample in samples:
        if _missing_context(caller, registration, sample):
            skipped += 1
            continue
        try:
            actual = _invoke_target(caller, registration, sample)
        except Exception:  # any invocation failure scores as a mismatch
            evaluated += 1
            failures += 1
            continue
        evaluated += 1
        try:
            if match_outputs(actual, sample.output, matcher, hooks):
                matches += 1
        except ValidationError:
            failures += 1
    return matches, evaluated, failures, skipped


def evaluate(caller, target=None, behavior: str = BEHAVIOR_COMBINED,
             scope: str = SCOPE_LOCAL, matcher: Matcher = EXACT) -> MemberMetrics:
    """Evaluate a caller (target None) or one registration.

    Golden behavior scores gold samples only; combined behavior scores gold
    and silver and additionally reports the micro-averaged combined
    accuracy. Metrics are stored on the registration (or returned for the
    caller itself); nested scope also evaluates every ensemble registration.
    """
    _forbid_passthrough(caller)
    hooks = caller.runtime.hooks.matchers
    gold = caller.dataset_view(DatasetSelector.make(categories=(Category.GOLD,)))
    silver = caller.dataset_view(DatasetSelector.make(categories=(Category.SILVER,)))
    gold_min, silver_min = (int(v) for v in caller.config.min_eval_samples)

    def run_one(registration) -> MemberMetrics:
        metrics = MemberMetrics()
        g_match, g_n, g_fail, g_skip = _score(caller, registration, gold, matcher, hooks)
        counts = {"gold": g_n, "gold_skipped": g_skip, "failures": g_fail}
        if g_n >= gold_min:
            metrics.gold_accuracy = g_match / g_n
        if behavior == BEHAVIOR_COMBINED:
            s_match, s_n, s_fail, s_skip = _score(caller, registration, silver, matcher, hooks)
            counts.update({"silver": s_n, "silver_skipped": s_skip})
            counts["failures"] += s_fail
            if s_n >= silver_min:
                metrics.silver_accuracy = s_match / s_n
            if metrics.gold_accuracy is not None and metrics.silver_accuracy is not None:
                metrics.combined_accuracy = (g_match + s_match) / (g_n + s_n)
        metrics.sample_counts = counts
        metrics.last_evaluated = time.time()
        return metrics

    if target is not None:
        result = run_one(target)
        target.metrics = result
        if scope == SCOPE_NESTED:
            for reg in caller.ensemble_members():
                if reg is not target and reg.callable.kind.value != "external":
                    reg.metrics = run_one(reg)
        return result

    caller_metrics = run_one(None)
    if scope == SCOPE_NESTED:
        for reg in caller.ensemble_members():
            if reg.callable.kind.value != "external":
                reg.metrics = run_one(reg)
    return caller_metrics


def qualify(caller, registration) -> Qualification:
    """Recompute and store a registration's qualification from its metrics.

    Qualified means both accuracies meet or exceed their thresholds (closed
    inequality); a missing accuracy yields the insufficient-data state.
    """
    supervised_min, unsupervised_min = caller.config.quality_thresholds
    m = registration.metrics
    if m.gold_accuracy is None or m.silver_accuracy is None:
        result = Qualification.INSUFFICIENT_DATA
    elif m.gold_accuracy >= supervised_min and m.silver_accuracy >= unsupervised_min:
        result = Qualification.QUALIFIED
    else:
        result = Qualification.UNQUALIFIED
    registration.qualification = result
    return result


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

TRAIN_LOCAL = "local"
TRAIN_NESTED = "nested"
INIT_FRESH = "fresh"
INIT_INCREMENTAL = "incremental"


@dataclass(frozen=True)
class TrainSpec:
    mode: str = TRAIN_LOCAL
    init: str = INIT_INCREMENTAL
    dataset: DatasetSelector = TRAINING_SELECTOR
    bagging: bool = False
    weight_epochs: int = 200       # caller-level weight fitting
    weight_lr: float = 0.1


@dataclass
class TrainReport:
    target: str
    loss_trace: List[float] = field(default_factory=list)
    samples_used: int = 0
    duration_s: float = 0.0
    members: Dict[str, "TrainReport"] = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = {
            "target": self.target,
            "loss_trace": self.loss_trace,
            "samples_used": self.samples_used,
            "duration_s": self.duration_s,
        }
        if self.members:
            doc["members"] = {k: v.to_json() for k, v in self.members.items()}
        return doc


def _training_pairs(samples: Sequence[Sample]) -> List[Tuple[Record, Record]]:
    pairs = []
    for s in samples:
        record = dict(s.inputs)
        record.update(s.context)
        pairs.append((record, s.output))
    return pairs


def _bagging_partition(n_samples: int, n_members: int, seed: int) -> List[List[int]]:
    """Disjoint, exhaustive round-robin split over a seeded shuffle."""
    idx = list(range(n_samples))
    SplitMix64(mix_str(seed, "bagging")).shuffle(idx)
    parts: List[List[int]] = [[] for _ in range(n_members)]
    for pos, i in enumerate(idx):
        parts[pos % n_members].append(i)
    return parts


def train(caller, target=None, spec: TrainSpec = TrainSpec()) -> TrainReport:
    """Train a registration's model, or the caller itself.

    Caller-local training fits the caller's own learnable parameters (the
    quality-weighting vector) against supervised samples; nested mode also
    trains every trainable ensemble member, optionally bagging the training
    set disjointly across them.
    """
    _forbid_passthrough(caller)
    started = time.perf_counter()

    if target is not None:
        return _train_registration(caller, target, spec, started)

    report = TrainReport(target=caller.id)
    samples = caller.dataset_view(
        DatasetSelector.make(categories=(Category.GOLD, Category.PLATINUM)))
    if not samples and spec.mode == TRAIN_LOCAL:
        raise ValidationError("no supervised samples to fit caller weights against")
    report.loss_trace, report.samples_used = _fit_weights(caller, samples, spec)

    if spec.mode == TRAIN_NESTED:
        members = [r for r in caller.ensemble_members() if r.callable.trainable]
        training = caller.dataset_view(spec.dataset)
        if spec.bagging and members:
            parts = _bagging_partition(len(training), len(members), caller.config.rng_seed)
        else:
            parts = [list(range(len(training))) for _ in members]
        for reg, part in zip(members, parts):
            sub = [training[i] for i in part]
            report.members[reg.id] = _fit_model(caller, reg, sub, spec)
    report.duration_s = time.perf_counter() - started

    if caller.config.auto_test:
        for reg in caller.ensemble_members():
            if reg.callable.trainable:
                evaluate(caller, reg, behavior=BEHAVIOR_COMBINED)
                qualify(caller, reg)
    return report


def _train_registration(caller, registration, spec: TrainSpec, started: float) -> TrainReport:
    if not registration.callable.trainable:
        raise ValidationError(f"registration {registration.id!r} is not trainable")
    samples = caller.dataset_view(spec.dataset)
    report = _fit_model(caller, registration, samples, spec)
    report.duration_s = time.perf_counter() - started
    if caller.config.auto_test:
        evaluate(caller, registration, behavior=BEHAVIOR_COMBINED)
        qualify(caller, registration)
    return report


def _fit_model(caller, registration, samples: Sequence[Sample], spec: TrainSpec) -> TrainReport:
    if not samples:
        raise ValidationError("selected training dataset is empty")
    binding = registration.callable.binding
    model = getattr(binding, "model", None)
    if model is None:
        raise ValidationError(f"callable {registration.callable.id!r} has no trainable binding")
    pairs = _training_pairs(samples)
    trace = model.fit(pairs, fresh=(spec.init == INIT_FRESH))
    return TrainReport(target=registration.id, loss_trace=list(trace),
                       samples_used=len(samples))


def _fit_weights(caller, samples: Sequence[Sample], spec: TrainSpec) -> Tuple[List[float], int]:
    """Fit the caller's quality-weighting vector by gradient descent on the
    squared error of the weighted mean against supervised outputs."""
    members = caller.ensemble_members()
    numeric_outputs = [n for n, _ in caller.signature.outputs]
    if not members or not samples:
        return [], 0
    # Member predictions per sample, by eval-mode invocation.
    rows: List[List[Record]] = []
    desired: List[Record] = []
    for sample in samples:
        preds = []
        ok = True
        for reg in members:
            try:
                record = caller._member_record(reg.callable, sample.inputs, sample.context)
                preds.append(caller._invoke(reg.callable, record, "admin", True))
            except McallError:
                ok = False
                break
        if ok:
            rows.append(preds)
            desired.append(sample.output)
    if not rows:
        return [], 0
    k = len(members)
    w = [1.0 / k] * k

    def loss(ws: List[float]) -> float:
        total = 0.0
        s = sum(ws)
        for preds, want in zip(rows, desired):
            for name in numeric_outputs:
                if not is_number(want.get(name)):
                    continue
                agg = sum(wi * p[name] for wi, p in zip(ws, preds)) / s
                total += (agg - want[name]) ** 2
        return total / len(rows)

    trace = [loss(w)]
    for _ in range(spec.weight_epochs):
        s = sum(w)
        grad = [0.0] * k
        for preds, want in zip(rows, desired):
            for name in numeric_outputs:
                if not is_number(want.get(name)):
                    continue
                agg = sum(wi * p[name] for wi, p in zip(w, preds)) / s
                err = 2.0 * (agg - want[name]) / len(rows)
                for i in range(k):
                    grad[i] += err * (preds[i][name] - agg) / s
        w = [max(wi - spec.weight_lr * gi, 1e-6) for wi, gi in zip(w, grad)]
        trace.append(loss(w))
    caller.learned_weights = {reg.callable.id: wi for reg, wi in zip(members, w)}
    return trace, len(rows)


# ---------------------------------------------------------------------------
# Drift detection
# ---------------------------------------------------------------------------

@dataclass
class DriftAlert:
    caller_id: str
    window_start: str
    window_end: str
    window_size: int
    windowed_accuracy: float
    baseline_accuracy: Optional[float]
    threshold_breached: str
    threshold_value: float
    raised_at: float = field(default_factory=time.time)

    def to_json(self) -> dict:
        return {
            "caller_id": self.caller_id,
            "window": {"start": self.window_start, "end": self.window_end,
                       "size": self.window_size},
            "windowed_accuracy": self.windowed_accuracy,
            "baseline_accuracy": self.baseline_accuracy,
            "threshold_breached": self.threshold_breached,
            "threshold_value": self.threshold_value,
            "raised_at": self.raised_at,
        }


@dataclass
class DriftCheck:
    status: str                       # "ok" | "alert" | "not_enough_data"
    windowed_accuracy: Optional[float] = None
    baseline_accuracy: Optional[float] = None
    supervised_count: int = 0
    alert: Optional[DriftAlert] = None

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "windowed_accuracy": self.windowed_accuracy,
            "baseline_accuracy": self.baseline_accuracy,
            "supervised_count": self.supervised_count,
            "alert": self.alert.to_json() if self.alert else None,
        }


def _sample_was_correct(sample: Sample, matcher: Matcher) -> bool:
    """Did the output the caller shipped match the supervised truth?

    Confirmed samples shipped the truth by definition; overridden samples
    compare what was shipped (the preserved original) to the override.
    """
    if sample.review is ReviewState.OVERRIDDEN and sample.original_output is not None:
        try:
            return match_outputs(sample.original_output, sample.output, matcher)
        except ValidationError:
            return False
    return True


def detect_drift(caller, window_size: int, matcher: Matcher = EXACT) -> DriftCheck:
    """Accuracy of the caller's shipped outputs over the most recent
    ``window_size`` supervised call samples; alerts when it falls below the
    supervised quality threshold."""
    if window_size < 1:
        raise ValidationError("window_size must be positive")
    supervised = caller.store.supervised_call_samples()
    if len(supervised) < window_size:
        return DriftCheck(status="not_enough_data", supervised_count=len(supervised))
    window = supervised[-window_size:]
    earlier = supervised[:-window_size]
    windowed = sum(_sample_was_correct(s, matcher) for s in window) / window_size
    baseline = (sum(_sample_was_correct(s, matcher) for s in earlier) / len(earlier)
                if earlier else None)
    threshold = caller.config.quality_thresholds[0]
    check = DriftCheck(status="ok", windowed_accuracy=windowed,
                       baseline_accuracy=baseline, supervised_count=len(supervised))
    if windowed < threshold:
        check.status = "alert"
        check.alert = DriftAlert(
            caller_id=caller.id,
            window_start=window[0].id, window_end=window[-1].id, window_size=window_size,
            windowed_accuracy=windowed, baseline_accuracy=baseline,
            threshold_breached="supervised_min", threshold_value=threshold,
        )
    return check
