"""Exception hierarchy for the vthead package."""


class VTError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(VTError):
    """Operand shapes do not agree. The message names both shapes."""


class ConfigError(VTError):
    """Invalid configuration value (synthesis, model or training config)."""


class DegenerateFeatureError(VTError):
    """A feature row has zero norm and cannot be L2-normalized."""


class DivergenceError(VTError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class CacheMismatchError(VTError):
    """A backward pass was given a cache from a different forward call."""


class ShotSamplingError(VTError):
    """A class does not hold enough images for the requested shot count."""


class FormatError(VTError):
    """Base class for binary file format errors."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """File carries an unsupported format version."""


class TruncatedFileError(FormatError):
    """File ends before the declared payload is complete."""


class DimensionError(FormatError):
    """Header dimensions are inconsistent or implausibly large."""
