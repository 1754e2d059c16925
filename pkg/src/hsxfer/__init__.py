"""Hyperspectral transfer-learning toolkit on a small numpy autodiff engine."""
from .errors import (ConfigError, DataError, EvaluationError, FormatError, HSXError, NumericError, ShapeError,
                     StateError, TrainingError)

__version__ = "0.1.0"

__all__ = ["HSXError", "ConfigError", "DataError", "ShapeError", "FormatError", "StateError", "TrainingError",
           "NumericError", "EvaluationError", "__version__"]
