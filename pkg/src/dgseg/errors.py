"""Exception types shared across the toolkit."""


class ConfigError(Exception):
    """Invalid or inconsistent experiment configuration."""


class DataError(Exception):
    """Dataset missing, malformed, or violating the expected layout."""


class DivergenceError(Exception):
    """Training produced a non-finite loss value."""


class CheckpointMismatchError(ConfigError):
    """Checkpoint was written under a different network configuration."""
