"""mcall: a calling-side intermediary for models and legacy functions.

Wrap a function (or stand a caller up directly), register models and
functions into its ensemble, and let the caller cache operational data,
sample outputs for human review, evaluate and qualify members, detect
drift, and walk the host -> both -> registered transformation as a
candidate model earns its place.
"""

from .core import (
    AutoId,
    Callable,
    CallableKind,
    Caller,
    CallerConfig,
    CallResult,
    CallTarget,
    ExecutionMode,
    Registration,
    Runtime,
    Surrogate,
    authorize,
    DEFAULT_RBAC,
)
from .datastore import (
    Category,
    DatasetSelector,
    Origin,
    ReviewState,
    Sample,
    Split,
    Supervision,
    categorize,
)
from .ensemble import (
    AggregationSpec,
    AnytimeEmission,
    CollabRequest,
    CollabState,
    GateKind,
    GateSpec,
    Strategy,
    WeightSource,
    aggregate,
)
from .errors import (
    AggregationError,
    AuthenticationError,
    AuthorizationError,
    CallError,
    ConfigError,
    ConflictError,
    McallError,
    MemberFailure,
    NotFoundError,
    PersistenceError,
    SignatureError,
    ValidationError,
)
from .models import ConstantModel, NearestCentroidModel, OnlineLinearModel, build_model
from .persistence import load_all, load_caller, persist_all, persist_caller
from .quality import (
    DriftAlert,
    DriftCheck,
    Matcher,
    MatcherKind,
    MemberMetrics,
    Qualification,
    TrainReport,
    TrainSpec,
    detect_drift,
    evaluate,
    match_outputs,
    qualify,
    train,
)
from .records import Record, Signature
from .transformation import (
    PlanState,
    TransformationPlan,
    plan_transformation,
    retire_host,
    step_transformation,
)

__version__ = "0.1.0"
