"""Exception hierarchy shared across the package.

Each exception class carries the process exit code the CLI uses when it
terminates on that error class.
"""


class FaceSynthError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(FaceSynthError):
    """A config value is inconsistent with the model contracts."""

    exit_code = 2


class ValidationError(FaceSynthError):
    """An input (array, label, request field) violates a precondition."""

    exit_code = 3


class IngestionError(FaceSynthError):
    """A dataset file is missing, unreadable, or inconsistent."""

    exit_code = 4


class NumericalError(FaceSynthError):
    """A computation produced non-finite values.

    ``context`` holds a breakdown of the offending step (loss parts,
    step/epoch counters) for post-mortem inspection.
    """

    exit_code = 5

    def __init__(self, message, context=None):
        super().__init__(message)
        self.context = dict(context or {})


class CheckpointError(FaceSynthError):
    """A checkpoint archive is missing keys or incompatible."""

    exit_code = 6
