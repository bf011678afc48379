"""Exception types shared across the package."""


class CascadeQoeError(Exception):
    """Base class for all errors raised by this package."""


class TraceError(CascadeQoeError):
    pass


class MalformedLine(TraceError):
    def __init__(self, line_no, text=""):
        self.line_no = line_no
        super().__init__(f"malformed trace line {line_no}: {text!r}")


class NonMonotoneTime(TraceError):
    def __init__(self, line_no):
        self.line_no = line_no
        super().__init__(f"time does not increase at line {line_no}")


class EmptyTrace(TraceError):
    def __init__(self, msg="trace has no samples"):
        super().__init__(msg)


class InvalidParams(CascadeQoeError, ValueError):
    pass


class EmptyList(CascadeQoeError, ValueError):
    pass


class LengthMismatch(CascadeQoeError, ValueError):
    pass


class ZeroBitrate(CascadeQoeError, ValueError):
    pass


class InsufficientTraces(CascadeQoeError, ValueError):
    pass


class SingularSystem(CascadeQoeError):
    pass


class DimensionMismatch(CascadeQoeError, ValueError):
    pass


class HistoryLengthMismatch(CascadeQoeError, ValueError):
    pass


class EmptyTestSplit(CascadeQoeError, ValueError):
    pass


class ModelIOError(CascadeQoeError, OSError):
    pass


class SchemaVersionMismatch(CascadeQoeError):
    pass


class SolverBudgetExceeded(CascadeQoeError):
    pass


class SessionError(CascadeQoeError):
    def __init__(self, step, cause):
        self.step = step
        self.cause = cause
        super().__init__(f"session failed at step {step}: {cause}")


class ConfigError(CascadeQoeError, ValueError):
    def __init__(self, field, msg):
        self.field = field
        super().__init__(f"{field}: {msg}")
