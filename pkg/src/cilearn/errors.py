"""Exception hierarchy shared across the package."""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(EngineError):
    """An operand has an incompatible shape or dimension."""


class GraphError(EngineError):
    """Misuse of the differentiation tape (empty tape, spent tape, bad loss)."""


class StateError(EngineError):
    """A layer or model is in the wrong state for the requested operation."""


class DataError(EngineError):
    """A data file is missing, malformed, or inconsistent."""


class ConfigError(EngineError):
    """A configuration file or override is invalid."""


class NotFittedError(StateError):
    """An estimator method requiring a fitted model was called before fit."""
