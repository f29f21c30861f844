"""Exception hierarchy.

Every error raised on purpose by revgen derives from :class:`RevgenError`.
Subclasses carry the process exit code the command line uses for them.
"""


class RevgenError(Exception):
    """Root exception for all revgen exceptions"""

    exit_code = 1


class ShapeError(RevgenError, ValueError):
    """Tensor shapes or arguments do not fit the operation"""


class ConfigError(RevgenError):
    """Unknown or invalid configuration key, value or preset"""

    exit_code = 2


class DataError(RevgenError):
    """Malformed dataset file or unusable dataset"""

    exit_code = 3


class NumericalError(RevgenError):
    """Non-finite values, divergence, or an undefined numerical quantity"""

    exit_code = 4


class CheckpointError(RevgenError):
    """Unreadable, corrupt or incompatible checkpoint"""

    exit_code = 5
