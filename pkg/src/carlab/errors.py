"""Shared exception types."""


class CarlabError(Exception):
    """Base class for errors raised by this package."""


class InvalidInput(CarlabError, ValueError):
    """Caller supplied a value outside a documented domain."""


class ConfigError(CarlabError, ValueError):
    """A configuration document is malformed or violates a constraint.

    ``path`` points at the offending key, e.g. ``policies[2].p``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class CorruptLog(CarlabError, RuntimeError):
    """An event log failed an integrity check during replay."""
