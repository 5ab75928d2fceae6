"""Exception hierarchy shared by every stage.

Input problems (bad files, bad configs, out-of-domain arguments) derive from
``InputError`` and map to CLI exit code 2; everything else is a runtime failure.
"""


class ReddEvalError(Exception):
    """Base class for all package errors."""


class InputError(ReddEvalError, ValueError):
    """Pre-flight / validation failure."""


class SchemaError(InputError):
    """A required column or field is missing."""


class IntegrityError(InputError):
    """Structural inconsistency in a panel (gaps, duplicates, misaligned years)."""


class DomainError(InputError):
    """An argument is outside the domain of the operation."""


class ConfigError(InputError):
    """Invalid run configuration."""


class NumericError(ReddEvalError, RuntimeError):
    """A numerical routine failed to converge."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class ScreeningExhausted(ReddEvalError):
    """No donors fall inside the widest buffer-pressure band."""


class StageFailed(ReddEvalError):
    """A pipeline stage raised; ``cause`` is the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
