"""Exception hierarchy shared by all modules."""


class SCKNError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(SCKNError, ValueError):
    pass


class SingularMatrixError(SCKNError, ArithmeticError):
    pass


class DataError(SCKNError):
    """Input data is unusable (degenerate patches, too few samples, ...)."""


class StepDegenerateError(SCKNError, ArithmeticError):
    """A sphere step produced the zero vector before projection."""


class ConvergenceError(SCKNError):
    """An iterative solver hit its iteration cap.

    The last iterate is kept on ``result`` so callers may still use it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class FormatError(SCKNError):
    """Malformed file. ``offset`` is the byte offset of the problem, if known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionMismatchError(FormatError):
    pass


class UnsupportedFormatError(FormatError):
    pass
