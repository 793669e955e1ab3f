"""Exception hierarchy shared by all crtlab modules."""


class CrtlabError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(CrtlabError, ValueError):
    """A caller-supplied parameter violates a documented precondition."""


class DataError(CrtlabError, ValueError):
    """Input data violates a structural invariant (NaN, negative metric, ...)."""


class ResourceGuardError(CrtlabError):
    """A requested computation exceeds the configured memory/size ceiling."""


class EnvelopeFailureError(CrtlabError):
    """Rejection sampling envelope failed (acceptance collapsed or bound violated)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class GateCheckError(CrtlabError):
    """A mandatory self-validation gate (e.g. heat-kernel checks) did not pass."""
