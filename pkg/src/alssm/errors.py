"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A parameter lies outside its admissible domain."""


class KinkError(ParameterError):
    """Evaluation requested exactly at a non-differentiable point."""


class NumericalError(ArithmeticError):
    """A computation produced a singular or non-finite intermediate."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class DataError(ConfigError):
    """An input data file could not be ingested."""
