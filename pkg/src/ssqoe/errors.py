"""Exception hierarchy shared by library, service, and CLI.

The CLI maps these onto exit codes (validation -> 2, training -> 3,
file I/O -> 4); the HTTP service maps them onto status codes.
"""


class QoeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(QoeError):
    """Invalid input data, configuration, or file contents."""


class DimensionError(ValidationError):
    """Array shapes inconsistent with the model configuration."""


class DataFormatError(ValidationError):
    """Malformed dataset file; carries the offending location."""

    def __init__(self, message, session_id=None, row=None):
        ctx = []
        if session_id is not None:
            ctx.append(f"session={session_id}")
        if row is not None:
            ctx.append(f"row={row}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)
        self.session_id = session_id
        self.row = row


class SchemaVersionError(ValidationError):
    """Persisted document has an unsupported schemaVersion."""


class ProtocolError(ValidationError):
    """A cross-validation split cannot satisfy the exclusion rule."""


class NumericOverflowError(QoeError):
    """Simulation produced a non-finite value; `t` is the first bad step."""

    def __init__(self, message, t=None):
        if t is not None:
            message = f"{message} (t={t})"
        super().__init__(message)
        self.t = t


class TrainingError(QoeError):
    """Every optimizer restart diverged; no usable model was produced."""
