"""Records and signatures.

A Record is an ordered name->value mapping (a plain dict; insertion order is
meaningful) used for call inputs, outputs, and context arguments. A Signature
declares the parameter names and value kinds a caller or callable accepts.

Names starting with ``__mc_`` are reserved for infrastructure entries that
the pipeline injects (the caller id, the previous stage output in sequential
chains); user signatures may not claim them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Iterable, Tuple

from .errors import SignatureError

Record = Dict[str, Any]

RESERVED_PREFIX = "__mc_"
CALLER_ID_PARAM = "__mc_id"
PREV_OUTPUT_PARAM = "__mc_prev"

# Value kinds a parameter may declare.
KIND_NUMBER = "number"
KIND_STRING = "string"
KIND_BOOLEAN = "boolean"
KIND_LIST = "list"
KIND_MAP = "map"
KIND_ANY = "any"
VALUE_KINDS = {KIND_NUMBER, KIND_STRING, KIND_BOOLEAN, KIND_LIST, KIND_MAP, KIND_ANY}


def is_number(value: Any) -> bool:
    """True for int/float scalars; bool is deliberately not a number."""
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def conforms(value: Any, kind: str) -> bool:
    if kind == KIND_ANY:
        return True
    if kind == KIND_NUMBER:
        return is_number(value)
    if kind == KIND_STRING:
        return isinstance(value, str)
    if kind == KIND_BOOLEAN:
        return isinstance(value, bool)
    if kind == KIND_LIST:
        return isinstance(value, list)
    if kind == KIND_MAP:
        return isinstance(value, dict)
    return False


Param = Tuple[str, str]


def _normalize_params(params: Iterable, where: str) -> tuple[Param, ...]:
    out: list[Param] = []
    seen: set[str] = set()
    for item in params:
        name, kind = item[0], item[1]
        if not isinstance(name, str) or not name:
            raise SignatureError(f"{where}: parameter name must be a non-empty string")
        if kind not in VALUE_KINDS:
            raise SignatureError(f"{where}: unknown value kind {kind!r} for {name!r}")
        if name in seen:
            raise SignatureError(f"{where}: duplicate parameter {name!r}")
        seen.add(name)
        out.append((name, kind))
    return tuple(out)


@dataclass(frozen=True)
class Signature:
    """Declared inputs, outputs, and context parameters.

    Context parameters are delivered to models only; hosts and registered
    functions see the declared inputs alone. The three name sets must be
    pairwise disjoint. ``__mc_prev`` is tolerated as an *input* so that
    sequential stages can declare they consume the previous stage's output;
    every other reserved name is refused.
    """

    inputs: tuple[Param, ...] = ()
    outputs: tuple[Param, ...] = ()
    context_params: tuple[Param, ...] = ()

    def __init__(self, inputs=(), outputs=(), context_params=()):
        object.__setattr__(self, "inputs", _normalize_params(inputs, "inputs"))
        object.__setattr__(self, "outputs", _normalize_params(outputs, "outputs"))
        object.__setattr__(self, "context_params", _normalize_params(context_params, "context_params"))
        names = [n for n, _ in self.inputs + self.outputs + self.context_params]
        if len(set(names)) != len(names):
            raise SignatureError("input, output, and context parameter names must be pairwise disjoint")
        for name, _ in self.outputs + self.context_params:
            if name.startswith(RESERVED_PREFIX):
                raise SignatureError(f"parameter {name!r} uses the reserved {RESERVED_PREFIX!r} prefix")
        for name, _ in self.inputs:
            if name.startswith(RESERVED_PREFIX) and name != PREV_OUTPUT_PARAM:
                raise SignatureError(f"parameter {name!r} uses the reserved {RESERVED_PREFIX!r} prefix")

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.inputs)

    @property
    def output_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.outputs)

    @property
    def context_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.context_params)

    def validate_record(self, record: Record, params: tuple[Param, ...], where: str,
                        allow_extra_reserved: bool = True) -> None:
        """Check a record against a parameter list: all names present,
        no undeclared names (reserved infrastructure entries excepted),
        every value of the declared kind."""
        if not isinstance(record, dict):
            raise SignatureError(f"{where}: record must be a map, got {type(record).__name__}")
        declared = {n: k for n, k in params}
        for name in declared:
            if name not in record:
                raise SignatureError(f"{where}: missing parameter {name!r}")
        for name, value in record.items():
            if name not in declared:
                if allow_extra_reserved and name.startswith(RESERVED_PREFIX):
                    continue
                raise SignatureError(f"{where}: undeclared parameter {name!r}")
            if not conforms(value, declared[name]):
                raise SignatureError(
                    f"{where}: value for {name!r} does not conform to kind {declared[name]!r}")

    def validate_inputs(self, record: Record) -> None:
        self.validate_record(record, self.inputs, "inputs", allow_extra_reserved=False)

    def validate_outputs(self, record: Record) -> None:
        self.validate_record(record, self.outputs, "outputs", allow_extra_reserved=False)

    def validate_context(self, record: Record) -> None:
        """Context records must cover the declared context params; reserved
        infrastructure entries may ride along."""
        self.validate_record(record, self.context_params, "context", allow_extra_reserved=True)

    def to_dict(self) -> dict:
        return {
            "inputs": [list(p) for p in self.inputs],
            "outputs": [list(p) for p in self.outputs],
            "context_params": [list(p) for p in self.context_params],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Signature":
        return cls(
            inputs=data.get("inputs", ()),
            outputs=data.get("outputs", ()),
            context_params=data.get("context_params", ()),
        )


def canonical_vote_key(value: Any):
    """Total order used to break voting ties: numbers ascending first
    (booleans count as 0/1), then strings lexicographically."""
    if isinstance(value, bool):
        return (0, float(value), "")
    if is_number(value):
        return (0, float(value), "")
    if isinstance(value, str):
        return (1, 0.0, value)
    return (2, 0.0, repr(value))
