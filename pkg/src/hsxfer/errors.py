"""Exception hierarchy and the CLI exit codes they map to."""


class HSXError(Exception):
    exit_code = 1


class ConfigError(HSXError):
    exit_code = 2


class DataError(HSXError):
    exit_code = 3


class ShapeError(DataError):
    """Raised on incompatible tensor or array extents."""


class FormatError(DataError):
    """Malformed binary file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StateError(HSXError):
    exit_code = 2


class TrainingError(HSXError):
    exit_code = 4

    def __init__(self, message, last_finite_step=None):
        super().__init__(message)
        self.last_finite_step = last_finite_step


class NumericError(TrainingError):
    pass


class EvaluationError(HSXError):
    exit_code = 5
