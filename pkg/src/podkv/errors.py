"""Exception types raised across the package."""


class InvalidInput(ValueError):
    """An argument violates an operation's preconditions."""


class CacheCorruption(RuntimeError):
    """A KV cache lookup found a missing or inconsistent entry."""


class ConfigMismatch(ValueError):
    """Model and grouping (or other artifacts) disagree on dimensions."""


class FormatError(ValueError):
    """An on-disk artifact is malformed."""
