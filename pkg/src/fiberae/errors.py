"""Exception types shared across the package."""


class FiberaeError(Exception):
    pass


class ConfigurationError(FiberaeError):
    """Invalid physical or run configuration."""


class NumericalDivergenceError(FiberaeError):
    """Non-finite values detected during propagation or training."""
