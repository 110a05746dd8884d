"""Exception hierarchy shared across the package."""


class PedkError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(PedkError, ValueError):
    """Tensor shapes do not agree."""


class ArchitectureError(PedkError, ValueError):
    """A network cannot be built for the requested architecture and input size."""


class TrainingDiverged(PedkError, RuntimeError):
    """A non-finite loss or gradient was produced during training."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class DataError(PedkError):
    """Dataset or manifest problem."""


class ManifestMissingFile(DataError, FileNotFoundError):
    pass


class ManifestDigestMismatch(DataError):
    pass


class SplitLeakage(DataError):
    """A source_id appears in more than one split."""


class ConfigError(PedkError, ValueError):
    """Invalid configuration field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class InvariantViolation(PedkError, AssertionError):
    """A result table violates a property that must hold by construction."""
