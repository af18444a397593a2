"""Built-in desk-scale trainable models.

These stand in for real served models wherever one is needed: they are
deterministic under their seed, cheap enough for tests, and support both
fresh retraining (reinitialize, then fit) and incremental continuation.
State is plain data so it serializes losslessly with caller persistence.

All three kinds read a fixed list of numeric feature parameters from the
incoming record (extra entries such as context arguments are ignored) and
emit a single output parameter.
"""

from __future__ import annotations

import hashlib
import json
import math
from typing import Any, List, Sequence, Tuple

from .errors import MemberFailure, ValidationError
from .records import Record, canonical_vote_key, is_number

KIND_CONSTANT = "constant"
KIND_NEAREST_CENTROID = "nearest_centroid"
KIND_ONLINE_LINEAR = "online_linear"

TrainPair = Tuple[Record, Record]


class ToyModel:
    """Base trainable model: record in, single-parameter record out."""

    kind = "abstract"

    def __init__(self, features: Sequence[str], output: str, seed: int = 0):
        if not output:
            raise ValidationError("model needs an output parameter name")
        self.features = list(features)
        self.output = output
        self.seed = int(seed)

    # -- feature plumbing ---------------------------------------------------

    def _vector(self, record: Record) -> List[float]:
        xs = []
        for name in self.features:
            if name not in record:
                raise MemberFailure(f"model input missing feature {name!r}")
            v = record[name]
            if not is_number(v):
                raise MemberFailure(f"feature {name!r} is not numeric")
            xs.append(float(v))
        return xs

    def _target(self, output_record: Record) -> Any:
        if self.output not in output_record:
            raise ValidationError(f"training output missing parameter {self.output!r}")
        return output_record[self.output]

    # -- the model surface --------------------------------------------------

    def predict(self, record: Record) -> Record:
        raise NotImplementedError

    def fit(self, pairs: Sequence[TrainPair], fresh: bool = False) -> List[float]:
        """Train on (input-record, output-record) pairs; returns a loss trace
        (one entry per epoch for iterative kinds, possibly empty)."""
        raise NotImplementedError

    def reinit(self) -> None:
        """Reset learnable state to the seed-determined initial point."""
        raise NotImplementedError

    # -- state --------------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "kind": self.kind,
            "features": list(self.features),
            "output": self.output,
            "seed": self.seed,
            "params": self._params(),
        }

    def _params(self) -> dict:
        raise NotImplementedError

    def _load_params(self, params: dict) -> None:
        raise NotImplementedError

    def param_hash(self) -> str:
        blob = json.dumps(self._params(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ConstantModel(ToyModel):
    """Ignores its inputs and emits a fixed value; training is a no-op."""

    kind = KIND_CONSTANT

    def __init__(self, value: Any, features: Sequence[str] = (), output: str = "out", seed: int = 0):
        super().__init__(features, output, seed)
        self.value = value

    def predict(self, record: Record) -> Record:
        return {self.output: self.value}

    def fit(self, pairs, fresh=False):
        return []

    def reinit(self):
        pass

    def _params(self):
        return {"value": self.value}

    def _load_params(self, params):
        self.value = params["value"]


class NearestCentroidModel(ToyModel):
    """Classifies to the label whose feature centroid is nearest.

    Features are standardized by running per-feature mean/variance collected
    from the training data, so differently scaled features contribute
    comparably. Distance ties break toward the smaller label under the
    canonical value order.
    """

    kind = KIND_NEAREST_CENTROID

    def __init__(self, features: Sequence[str], output: str, seed: int = 0):
        super().__init__(features, output, seed)
        self.reinit()

    def reinit(self):
        self.classes: dict[str, dict] = {}   # label-key -> {label, count, sums}
        self.n_seen = 0
        self.feat_sum = [0.0] * len(self.features)
        self.feat_sumsq = [0.0] * len(self.features)

    @staticmethod
    def _label_key(label: Any) -> str:
        return json.dumps(label, sort_keys=True)

    def fit(self, pairs, fresh=False):
        if fresh:
            self.reinit()
        for inp, outp in pairs:
            x = self._vector(inp)
            label = self._target(outp)
            key = self._label_key(label)
            cls = self.classes.setdefault(key, {"label": label, "count": 0, "sums": [0.0] * len(x)})
            cls["count"] += 1
            for i, v in enumerate(x):
                cls["sums"][i] += v
            self.n_seen += 1
            for i, v in enumerate(x):
                self.feat_sum[i] += v
                self.feat_sumsq[i] += v * v
        return []

    def _scale(self) -> tuple[list[float], list[float]]:
        if self.n_seen == 0:
            return [0.0] * len(self.features), [1.0] * len(self.features)
        means = [s / self.n_seen for s in self.feat_sum]
        stds = []
        for i, m in enumerate(means):
            var = max(self.feat_sumsq[i] / self.n_seen - m * m, 0.0)
            stds.append(math.sqrt(var) if var > 1e-18 else 1.0)
        return means, stds

    def predict(self, record: Record) -> Record:
        if not self.classes:
            raise MemberFailure("nearest-centroid model has no training data yet")
        x = self._vector(record)
        means, stds = self._scale()
        xs = [(v - means[i]) / stds[i] for i, v in enumerate(x)]
        candidates = []
        for cls in self.classes.values():
            centroid = [(s / cls["count"] - means[i]) / stds[i] for i, s in enumerate(cls["sums"])]
            dist = sum((a - b) ** 2 for a, b in zip(xs, centroid))
            candidates.append((dist, canonical_vote_key(cls["label"]), cls["label"]))
        candidates.sort(key=lambda c: (c[0], c[1]))
        return {self.output: candidates[0][2]}

    def _params(self):
        return {
            "classes": self.classes,
            "n_seen": self.n_seen,
            "feat_sum": self.feat_sum,
            "feat_sumsq": self.feat_sumsq,
        }

    def _load_params(self, params):
        self.classes = {k: dict(v) for k, v in params["classes"].items()}
        self.n_seen = params["n_seen"]
        self.feat_sum = list(params["feat_sum"])
        self.feat_sumsq = list(params["feat_sumsq"])


class OnlineLinearModel(ToyModel):
    """Fits y = w.x + b with per-sample gradient steps.

    Each epoch walks the training pairs in order; the loss trace records the
    dataset MSE after every epoch. Weights initialize to zero, so fresh
    training is a pure function of the data order.
    """

    kind = KIND_ONLINE_LINEAR

    def __init__(self, features: Sequence[str], output: str, seed: int = 0,
                 learning_rate: float = 0.1, epochs: int = 400):
        super().__init__(features, output, seed)
        if learning_rate <= 0 or epochs < 1:
            raise ValidationError("learning_rate must be > 0 and epochs >= 1")
        self.learning_rate = float(learning_rate)
        self.epochs = int(epochs)
        self.reinit()

    def reinit(self):
        self.w = [0.0] * len(self.features)
        self.b = 0.0

    def _mse(self, data: list[tuple[list[float], float]]) -> float:
        if not data:
            return 0.0
        total = 0.0
        for x, y in data:
            pred = sum(w * v for w, v in zip(self.w, x)) + self.b
            total += (pred - y) ** 2
        return total / len(data)

    def fit(self, pairs, fresh=False):
        if fresh:
            self.reinit()
        data = []
        for inp, outp in pairs:
            y = self._target(outp)
            if not is_number(y):
                raise ValidationError("online-linear target must be numeric")
            data.append((self._vector(inp), float(y)))
        trace: List[float] = []
        for _ in range(self.epochs):
            for x, y in data:
                pred = sum(w * v for w, v in zip(self.w, x)) + self.b
                g = pred - y
                for i, v in enumerate(x):
                    self.w[i] -= self.learning_rate * g * v
                self.b -= self.learning_rate * g
            trace.append(self._mse(data))
        return trace

    def predict(self, record: Record) -> Record:
        x = self._vector(record)
        return {self.output: sum(w * v for w, v in zip(self.w, x)) + self.b}

    def _params(self):
        return {"w": self.w, "b": self.b,
                "learning_rate": self.learning_rate, "epochs": self.epochs}

    def _load_params(self, params):
        self.w = list(params["w"])
        self.b = params["b"]
        self.learning_rate = params["learning_rate"]
        self.epochs = params["epochs"]


_KINDS = {
    KIND_CONSTANT: ConstantModel,
    KIND_NEAREST_CENTROID: NearestCentroidModel,
    KIND_ONLINE_LINEAR: OnlineLinearModel,
}


def build_model(spec: dict) -> ToyModel:
    """Construct a toy model from a plain-data spec.

    Spec keys: ``kind`` (required), ``features``, ``output``, ``seed``, plus
    kind-specific hyperparameters (``value`` for constant, ``learning_rate``
    and ``epochs`` for online-linear). A ``params`` key restores learned
    state on top, which is how persistence round-trips model parameters.
    """
    kind = spec.get("kind")
    if kind not in _KINDS:
        raise ValidationError(f"unknown builtin model kind {kind!r}")
    features = spec.get("features", [])
    output = spec.get("output", "out")
    seed = int(spec.get("seed", 0))
    if kind == KIND_CONSTANT:
        if "value" not in spec:
            raise ValidationError("constant model needs a 'value'")
        model = ConstantModel(spec["value"], features, output, seed)
    elif kind == KIND_NEAREST_CENTROID:
        if not features:
            raise ValidationError("nearest-centroid model needs features")
        model = NearestCentroidModel(features, output, seed)
    else:
        if not features:
            raise ValidationError("online-linear model needs features")
        model = OnlineLinearModel(
            features, output, seed,
            learning_rate=float(spec.get("learning_rate", 0.1)),
            epochs=int(spec.get("epochs", 400)),
        )
    if "params" in spec:
        model._load_params(spec["params"])
    return model


def model_spec(model: ToyModel, with_params: bool = True) -> dict:
    """Plain-data description of a model, optionally including learned state."""
    spec = {
        "kind": model.kind,
        "features": list(model.features),
        "output": model.output,
        "seed": model.seed,
    }
    if model.kind == KIND_CONSTANT:
        spec["value"] = model.value
    if model.kind == KIND_ONLINE_LINEAR:
        spec["learning_rate"] = model.learning_rate
        spec["epochs"] = model.epochs
    if with_params:
        spec["params"] = model._params()
    return spec
