"""Shared exception types."""


class ScribFormerError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ScribFormerError):
    """Input data violates a documented precondition or invariant."""


class ConfigError(ScribFormerError):
    """Invalid configuration value or unknown configuration key."""


class DatasetError(ScribFormerError):
    """On-disk dataset layout is broken (missing or mismatched files)."""


class CheckpointError(ScribFormerError):
    """Checkpoint is corrupt or does not match the model architecture."""


class NonFiniteLossError(ScribFormerError):
    """Training produced a NaN/Inf loss; carries the component values."""

    def __init__(self, message: str, components: dict | None = None):
        super().__init__(message)
        self.components = components or {}
