"""Exception types used across the package."""


class SelmodError(Exception):
    """Base class for package errors."""


class ConfigError(SelmodError):
    """Invalid configuration, schema, or precondition supplied by the caller."""


class ParseError(SelmodError):
    """Malformed cell encountered during ingestion."""


class ValidationError(SelmodError):
    """Data violates a structural invariant (positivity, binary actions, ...)."""


class SingularityError(SelmodError):
    """A matrix that must be invertible is numerically singular."""

    def __init__(self, message, columns=None):
        super().__init__(message)
        self.columns = columns


class ConvergenceError(SelmodError):
    """Iterative solver failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NumericError(SelmodError):
    """Numerical failure in the inference machinery (underflow, lost bracket)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
