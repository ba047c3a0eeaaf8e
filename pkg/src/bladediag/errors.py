"""Exception hierarchy shared by all bladediag modules."""


class BladeDiagError(Exception):
    """Base class for every error raised by this package."""


class DomainError(BladeDiagError, ValueError):
    """A value lies outside the domain an operation accepts."""


class LabelParseError(BladeDiagError, ValueError):
    """A label or prediction line could not be parsed."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class IntegrityError(BladeDiagError):
    """Dataset files are inconsistent (collisions, undecodable images)."""


class ConfigError(BladeDiagError, ValueError):
    """A configuration file or section is invalid."""


class TransportError(BladeDiagError):
    """A remote endpoint failed (non-success status, connection refused)."""

    def __init__(self, message: str, status: int | None = None):
        self.status = status
        super().__init__(message if status is None else f"{message} (status {status})")


class ProtocolError(BladeDiagError):
    """A remote endpoint answered with a malformed payload."""


class LLMTimeoutError(TransportError, TimeoutError):
    """A remote endpoint did not answer within the configured timeout."""


class EncodingError(BladeDiagError):
    """An image could not be encoded for transmission."""


class StageError(BladeDiagError):
    """Wraps a failure inside one pipeline stage, naming the stage."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
