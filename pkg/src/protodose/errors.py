"""Exception types shared across the package.

Everything derives from ValueError or RuntimeError so callers that do not
care about the distinction can catch the builtin bases.
"""


class GeometryError(ValueError):
    """Degenerate or inconsistent phantom geometry (e.g. slab of non-positive width)."""


class OutOfDomainError(ValueError):
    """Position outside the voxel grid, or energy outside the supported range."""


class SpectrumError(ValueError):
    """Energy spectrum discretisation produced a non-physical (<= 0) node energy."""


class EdgeNotFoundError(ValueError):
    """Depth-dose curve never falls below the requested fraction distal of its peak."""


class ConfigError(ValueError):
    """Invalid configuration value (non-positive step, bad direction norm, ...)."""


class ShapeError(ValueError):
    """Array dimension mismatch between data and a configured layer stack."""


class NumericError(ArithmeticError):
    """Non-finite value encountered where a finite result is required."""


class TrainingError(RuntimeError):
    """Training diverged.  Carries the epoch index at which it happened."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class CheckpointError(ValueError):
    """Malformed model checkpoint (bad magic, version, or truncated tensors)."""


class DatasetFormatError(ValueError):
    """Malformed dataset container (bad version, checksum, or missing tensor)."""
