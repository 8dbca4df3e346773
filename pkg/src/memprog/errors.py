class MemprogError(Exception):
    """Base class for all package errors."""


class ParameterError(MemprogError, ValueError):
    """Invalid numeric parameter (bounds, durations, kernel sizes...)."""


class RangeError(MemprogError, ValueError):
    """A conductance target lies outside the operational range."""


class ConfigError(MemprogError, ValueError):
    """Bad run configuration, including data-generation mismatches."""


class DivergenceError(MemprogError, RuntimeError):
    """Training produced a non-finite loss or weights."""


class PredictorError(MemprogError, RuntimeError):
    """A predictor emitted a non-finite pulse time."""


class StageError(MemprogError, RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
