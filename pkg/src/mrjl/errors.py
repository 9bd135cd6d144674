"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/usage problems exit 1,
data problems exit 2, numeric faults exit 3.
"""


class MrjlError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(MrjlError):
    """A config value or combination of values is unusable (detected at build time)."""


class DataError(MrjlError):
    """Something is wrong with a dataset or its on-disk layout."""


class IngestionError(DataError):
    """A file could not be read or parsed. Carries the offending path(s)."""

    def __init__(self, message, paths=None):
        super().__init__(message)
        self.paths = list(paths) if paths else []


class DatasetError(DataError):
    """The dataset is structurally unfit for the requested operation."""


class NumericFaultError(MrjlError):
    """A non-finite value appeared during computation."""

    def __init__(self, message, layer=None, step=None, detail=None):
        super().__init__(message)
        self.layer = layer
        self.step = step
        self.detail = detail or {}


class CheckpointError(MrjlError):
    """Base class for checkpoint archive problems."""


class CheckpointIntegrityError(CheckpointError):
    """The archive is corrupt or not a checkpoint at all."""


class CheckpointVersionError(CheckpointError):
    """The archive was written by an incompatible format version."""
