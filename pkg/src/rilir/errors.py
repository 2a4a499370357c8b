"""Shared exception types."""


class RilirError(Exception):
    """Base class for all package errors."""


class ConfigError(RilirError):
    """Invalid configuration value; carries the offending key."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class LifecycleError(RilirError):
    """Environment or component used outside its legal state sequence."""


class AggregationError(RilirError):
    """Run results grouped together do not share a common configuration."""
