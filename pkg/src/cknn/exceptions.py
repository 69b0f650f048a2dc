"""Exception hierarchy shared by every module."""


class CKNNError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(CKNNError, ValueError):
    """Arguments violate an operation's preconditions."""


class ParseError(CKNNError):
    """A dataset file could not be decoded."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at record offset {offset})"
        super().__init__(message)
        self.offset = offset


class BundleError(CKNNError):
    """A model bundle is missing files or is internally inconsistent."""


class BuildError(CKNNError):
    """Feature-bank construction failed."""


class MetricError(CKNNError):
    """A metric is undefined for the given inputs."""


class ConvergenceError(CKNNError):
    """An iterative fit could not recover from a degenerate state."""
