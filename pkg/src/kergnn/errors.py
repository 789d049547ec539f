"""Exception types shared across the package."""


class DatasetError(Exception):
    """Raised when dataset files are missing or malformed."""


class ConfigError(ValueError):
    """Raised when a configuration is internally inconsistent."""


class CheckpointError(Exception):
    """Raised when a checkpoint file cannot be read or has the wrong version."""


class TrainingError(RuntimeError):
    """Raised when training diverges (non-finite loss)."""
