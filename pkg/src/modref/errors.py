"""Exception surface shared by all modules."""


class ModrefError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(ModrefError):
    """Tensor shapes do not satisfy an operation's contract."""


class ParameterError(ModrefError):
    """A numeric parameter is outside its valid range."""


class ConfigError(ModrefError):
    """A structural configuration is inconsistent (e.g. head count vs width)."""


class NonFiniteError(ModrefError):
    """An operation produced NaN or Inf."""


class DegenerateInputError(ModrefError):
    """Input is structurally valid but numerically degenerate (e.g. a zero row)."""


class EmptyInputError(ModrefError):
    """An input collection that must be non-empty is empty."""


class MissingReferenceError(ModrefError):
    """A requested classifier or class reference is not available."""


class ValidationError(ModrefError):
    """Input data failed validation before any work started."""


class ArchiveFormatError(ModrefError):
    """Tensor archive bytes do not parse; carries the failing byte offset."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingDivergedError(ModrefError):
    """Smoothed training loss exceeded the divergence tripwire."""
