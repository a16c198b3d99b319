class RagspecError(Exception):
    """Base class for errors raised by ragspec."""


class InputDomainError(RagspecError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class DegenerateResidualError(RagspecError, ValueError):
    """A clamped residual vector has no positive mass to normalize."""


class ConfigurationError(RagspecError, ValueError):
    """Inconsistent or incomplete configuration (e.g. vocabulary mismatch)."""


class InvariantBreach(RagspecError, RuntimeError):
    """An internal consistency check failed at run time."""
