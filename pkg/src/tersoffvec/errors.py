"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to so the front end does not
need a lookup table.
"""


class TersoffError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 2


class ParseError(TersoffError):
    """A parameter file line could not be parsed."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class CompletenessError(TersoffError):
    """A declared species triplet has no parameter entry."""


class ValidationError(TersoffError):
    """A parameter entry violates a physical or structural invariant."""


class ConfigurationError(TersoffError):
    """Inconsistent run configuration, box geometry or cutoff choice."""


class NumericalError(TersoffError):
    """A non-finite intermediate appeared during a force evaluation."""

    exit_code = 3
