"""Exception hierarchy shared by all modules."""


class SpantaggerError(Exception):
    """Base class for every error raised by the package."""


class ShapeError(SpantaggerError, ValueError):
    """Tensor extents do not agree for the requested operation."""


class DegenerateNeighborhoodError(SpantaggerError, ValueError):
    """A softmax row has every position masked out."""


class ConfigError(SpantaggerError, ValueError):
    """Invalid configuration value.

    ``key`` names the offending configuration field when known.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class DataError(SpantaggerError, ValueError):
    """Malformed corpus, sidecar or other input data."""

    def __init__(self, message, sentence_id=None, line=None):
        super().__init__(message)
        self.sentence_id = sentence_id
        self.line = line


class NumericError(SpantaggerError, ArithmeticError):
    """Non-finite loss or failed gradient verification."""


class CheckpointError(SpantaggerError, ValueError):
    """Checkpoint cannot be read or does not match the expected layout."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
