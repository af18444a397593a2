"""Sample cache, review lifecycle, and dataset views.

Every call (and every sensor submission) lands here as a Sample. Two
orthogonal partitions classify each sample: the split (training vs
evaluation, drawn at caching time from the caller's split stream) and the
supervision state (supervised once a reviewer confirms or overrides the
output). Their cross product yields the four data categories:

    gold     = evaluation x supervised
    platinum = training   x supervised
    silver   = evaluation x unsupervised
    bronze   = training   x unsupervised

Samples are append-only and totally ordered per caller; review actions
mutate supervision state but never the split.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Tuple

from .errors import ConflictError, NotFoundError, ValidationError
from .records import Record


class Split(str, Enum):
    TRAINING = "training"
    EVALUATION = "evaluation"


class Supervision(str, Enum):
    SUPERVISED = "supervised"
    UNSUPERVISED = "unsupervised"


class Origin(str, Enum):
    CALL = "call"
    SENSOR = "sensor"


class ReviewState(str, Enum):
    NONE = "none"
    PENDING = "pending"
    CONFIRMED = "confirmed"
    OVERRIDDEN = "overridden"


class Category(str, Enum):
    GOLD = "gold"
    PLATINUM = "platinum"
    SILVER = "silver"
    BRONZE = "bronze"


@dataclass
class Sample:
    id: str
    caller_id: str
    inputs: Record
    context: Record
    output: Record
    origin: Origin
    split: Split
    supervision: Supervision = Supervision.UNSUPERVISED
    review: ReviewState = ReviewState.NONE
    review_token: Optional[str] = None
    original_output: Optional[Record] = None
    reward: Optional[float] = None
    created_at: float = 0.0
    config_version: int = 0

    def category(self) -> Category:
        return categorize(self.split, self.supervision)

    def to_json(self) -> dict:
        """Wire/log form; field order is the log schema, absent optionals omitted."""
        doc = {
            "id": self.id,
            "caller_id": self.caller_id,
            "inputs": self.inputs,
            "context": self.context,
            "output": self.output,
            "origin": self.origin.value,
            "split": self.split.value,
            "supervision": self.supervision.value,
        }
        if self.review is not ReviewState.NONE:
            doc["review"] = {"state": self.review.value}
            if self.review_token is not None:
                doc["review"]["token"] = self.review_token
        if self.original_output is not None:
            doc["original_output"] = self.original_output
        if self.reward is not None:
            doc["reward"] = self.reward
        doc["created_at"] = self.created_at
        doc["config_version"] = self.config_version
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "Sample":
        review = doc.get("review")
        state = ReviewState(review["state"]) if review else ReviewState.NONE
        return cls(
            id=doc["id"],
            caller_id=doc["caller_id"],
            inputs=doc["inputs"],
            context=doc["context"],
            output=doc["output"],
            origin=Origin(doc["origin"]),
            split=Split(doc["split"]),
            supervision=Supervision(doc["supervision"]),
            review=state,
            review_token=(review or {}).get("token"),
            original_output=doc.get("original_output"),
            reward=doc.get("reward"),
            created_at=doc["created_at"],
            config_version=doc["config_version"],
        )


def categorize(split: Split, supervision: Supervision) -> Category:
    """The four-way category map; pure in (split, supervision)."""
    if split is Split.EVALUATION:
        return Category.GOLD if supervision is Supervision.SUPERVISED else Category.SILVER
    return Category.PLATINUM if supervision is Supervision.SUPERVISED else Category.BRONZE


@dataclass(frozen=True)
class DatasetSelector:
    """Filter over a caller's samples; an empty selector selects everything."""

    categories: Optional[frozenset] = None
    origins: Optional[frozenset] = None
    since: Optional[float] = None
    until: Optional[float] = None
    limit: Optional[int] = None

    @classmethod
    def make(cls, categories: Iterable = None, origins: Iterable = None,
             since: float = None, until: float = None, limit: int = None) -> "DatasetSelector":
        return cls(
            categories=frozenset(Category(c) for c in categories) if categories else None,
            origins=frozenset(Origin(o) for o in origins) if origins else None,
            since=since, until=until, limit=limit,
        )

    def matches(self, sample: Sample) -> bool:
        if self.categories is not None and sample.category() not in self.categories:
            return False
        if self.origins is not None and sample.origin not in self.origins:
            return False
        if self.since is not None and sample.created_at < self.since:
            return False
        if self.until is not None and sample.created_at > self.until:
            return False
        return True


TRAINING_SELECTOR = DatasetSelector.make(categories=(Category.PLATINUM, Category.BRONZE))


# Review actions.
ACTION_CONFIRM = "confirm"
ACTION_OVERRIDE = "override"
ACTION_REWARD = "reward"


class SampleStore:
    """Per-caller sample log plus the pending-review queue.

    Appends are atomic and totally ordered; feedback application is
    serialized per store. Confirm/override consume their token (idempotent
    for an identical re-application, conflicting for anything else); reward
    attaches a value and leaves the token pending.
    """

    def __init__(self, caller_id: str):
        self.caller_id = caller_id
        self.samples: List[Sample] = []
        self._by_token: dict[str, Sample] = {}
        self._lock = threading.RLock()
        self._seq = 0

    # -- appends ------------------------------------------------------------

    def append(self, inputs: Record, context: Record, output: Record,
               origin: Origin, split: Split, config_version: int,
               created_at: float = None) -> Sample:
        with self._lock:
            self._seq += 1
            sample = Sample(
                id=f"s-{self.caller_id}-{self._seq}",
                caller_id=self.caller_id,
                inputs=inputs, context=context, output=output,
                origin=origin, split=split,
                created_at=time.time() if created_at is None else created_at,
                config_version=config_version,
            )
            self.samples.append(sample)
            return sample

    def mark_pending(self, sample: Sample, token: str) -> None:
        with self._lock:
            sample.review = ReviewState.PENDING
            sample.review_token = token
            self._by_token[token] = sample

    # -- reviews ------------------------------------------------------------

    def pending(self, limit: Optional[int] = None) -> List[Tuple[str, Sample]]:
        """Oldest-first pending reviews."""
        with self._lock:
            items = [(s.review_token, s) for s in self.samples if s.review is ReviewState.PENDING]
        return items[:limit] if limit else items

    def apply_feedback(self, token: str, action: str, output: Optional[Record] = None,
                       value: Optional[float] = None, ttl: Optional[float] = None) -> Sample:
        if action not in (ACTION_CONFIRM, ACTION_OVERRIDE, ACTION_REWARD):
            raise ValidationError(f"unknown review action {action!r}")
        with self._lock:
            sample = self._by_token.get(token)
            if sample is None:
                raise NotFoundError(f"unknown review token {token!r}")
            # Idempotency is derived from sample state: re-applying the same
            # terminal action is a no-op, anything else on a consumed token
            # conflicts.
            if sample.review is ReviewState.CONFIRMED:
                if action == ACTION_CONFIRM:
                    return sample
                raise ConflictError(f"token {token!r} already consumed by confirm")
            if sample.review is ReviewState.OVERRIDDEN:
                if action == ACTION_OVERRIDE and output == sample.output:
                    return sample
                raise ConflictError(f"token {token!r} already consumed by override")
            if ttl is not None and time.time() - sample.created_at > ttl:
                raise NotFoundError(f"review token {token!r} expired")

            if action == ACTION_CONFIRM:
                sample.review = ReviewState.CONFIRMED
                sample.supervision = Supervision.SUPERVISED
            elif action == ACTION_OVERRIDE:
                if not isinstance(output, dict):
                    raise ValidationError("override requires an output record")
                sample.original_output = sample.output
                sample.output = output
                sample.review = ReviewState.OVERRIDDEN
                sample.supervision = Supervision.SUPERVISED
            else:
                if value is None:
                    raise ValidationError("reward requires a numeric value")
                sample.reward = float(value)
                # token stays pending: a later confirm/override may still land
            return sample

    # -- views --------------------------------------------------------------

    def view(self, selector: DatasetSelector = DatasetSelector()) -> List[Sample]:
        with self._lock:
            out = [s for s in self.samples if selector.matches(s)]
        if selector.limit is not None:
            out = out[: selector.limit]
        return out

    def category_counts(self) -> dict[str, int]:
        counts = {c.value: 0 for c in Category}
        with self._lock:
            for s in self.samples:
                counts[s.category().value] += 1
        return counts

    def supervised_call_samples(self) -> List[Sample]:
        """Supervised call-origin samples in creation order (drift input)."""
        with self._lock:
            return [s for s in self.samples
                    if s.supervision is Supervision.SUPERVISED and s.origin is Origin.CALL]

    # -- persistence hooks ---------------------------------------------------

    def snapshot(self) -> List[dict]:
        with self._lock:
            return [s.to_json() for s in self.samples]

    def restore(self, docs: Iterable[dict]) -> None:
        with self._lock:
            self.samples = []
            self._by_token = {}
            seq = 0
            for doc in docs:
                sample = Sample.from_json(doc)
                self.samples.append(sample)
                if sample.review_token:
                    self._by_token[sample.review_token] = sample
                try:
                    seq = max(seq, int(sample.id.rsplit("-", 1)[-1]))
                except ValueError:
                    pass
            self._seq = seq
