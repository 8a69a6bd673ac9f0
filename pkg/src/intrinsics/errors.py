class ConfigError(ValueError):
    """Invalid configuration value or unknown config key."""


class DimensionError(ValueError):
    """Tensor/image shape or channel count violates a contract."""


class ImageIOError(IOError):
    """Unreadable, lossy, or otherwise unusable image file."""


class CheckpointError(RuntimeError):
    """Corrupt or version-incompatible checkpoint."""


class TrainingAbort(RuntimeError):
    """Non-finite loss or gradient encountered during training."""
