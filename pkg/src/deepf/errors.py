"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid network, loss, or run configuration."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class StateError(RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class NonFiniteError(FloatingPointError):
    """A loss or gradient became NaN/inf during training."""
