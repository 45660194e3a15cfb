class ConfigError(ValueError):
    """Invalid model / training / classifier configuration."""


class ShapeError(ValueError):
    """A tensor does not have the layout an operation expects."""


class DataError(RuntimeError):
    """Unreadable, missing or inconsistent input data."""


class NumericalError(RuntimeError):
    """Training or inference produced non-finite values."""
