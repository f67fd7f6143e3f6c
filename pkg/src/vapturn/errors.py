"""Exception hierarchy shared across the package.

Every error raised on purpose by this package derives from VapError so
callers can catch one type at the boundary.  The subtypes split along the
lines the command line tool cares about: bad inputs or configuration
(exit code 1) versus failures while running (exit code 2).
"""


class VapError(Exception):
    """Base class for all errors raised by vapturn."""


class ValidationError(VapError):
    """Malformed input data: files, manifests, annotations, arguments."""


class ConfigError(ValidationError):
    """A configuration object holds values that make no sense together."""


class DimensionError(VapError):
    """An array arrived with a shape the receiving code cannot accept."""


class AudioFormatError(ValidationError):
    """An audio file violates the required container or sample format."""


class CheckpointError(VapError):
    """A checkpoint file is unreadable, corrupt, or from a newer writer."""


class TrainingDivergedError(VapError):
    """Training aborted because the loss became non-finite."""
