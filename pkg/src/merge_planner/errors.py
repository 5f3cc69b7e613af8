"""Exception types raised across the package."""


class MergePlannerError(Exception):
    """Base class for all package errors."""


class DomainError(MergePlannerError, ValueError):
    """An argument lies outside the domain of an operation."""


class ExtractionError(MergePlannerError):
    """No merging manoeuvre could be located in a trajectory."""


class MultiLaneChangeError(ExtractionError):
    """The trajectory changes lane more than once."""


class ParseError(MergePlannerError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(MergePlannerError, ValueError):
    """A file is missing required columns or keys."""


class DegenerateInputError(MergePlannerError, ValueError):
    """Input data cannot support the requested fit."""


class ConfigError(MergePlannerError, ValueError):
    """Invalid configuration values."""


class NumericGuardError(MergePlannerError, FloatingPointError):
    """Non-finite values appeared in a numerical computation.

    ``checkpoint`` holds the last parameter set known to be finite, when one
    is available.
    """

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
