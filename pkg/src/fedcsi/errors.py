"""Exceptions shared across the package."""


class ConfigError(ValueError):
    """A configuration file or field violates its invariants."""


class IntegrityError(RuntimeError):
    """A stored artifact does not match its recorded hash/shape."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or update."""
