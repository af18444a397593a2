"""Exception taxonomy shared by the library, the gateway, and the CLI.

Every error raised on a public surface is one of these; the gateway maps
them onto HTTP statuses (see ``gateway.ERROR_STATUS``).
"""


class McallError(Exception):
    """Base class for all library errors."""

    code = "error"


class ValidationError(McallError):
    """Malformed input: bad record, bad signature, bad config value."""

    code = "validation"


class SignatureError(ValidationError):
    """Record or callable does not conform to the governing signature."""

    code = "signature"


class ConfigError(ValidationError):
    """A caller configuration invariant would be violated."""

    code = "config"


class NotFoundError(McallError):
    """Unknown caller, registration, callable, token, or request id."""

    code = "not_found"


class ConflictError(McallError):
    """State conflict: duplicate name, cycle, consumed token, wrong plan state."""

    code = "conflict"


class AuthenticationError(McallError):
    """Unknown API key; the request is rejected, no role is assumed."""

    code = "unauthenticated"


class AuthorizationError(McallError):
    """The principal's role does not permit the method."""

    code = "forbidden"


class CallError(McallError):
    """A call could not produce an output (no targets, or all sources failed)."""

    code = "call_failed"


class AggregationError(CallError):
    """Aggregation could not combine the member outputs it was given."""

    code = "aggregation"


class MemberFailure(McallError):
    """A single member invocation failed; captured per member, never fatal
    on its own (the call fails only when every activated source fails)."""

    code = "member_failure"


class PersistenceError(McallError):
    """Corrupt or incompatible persisted state."""

    code = "persistence"
