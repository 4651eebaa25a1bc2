"""Exception types raised across the package."""


class PolarfieldError(Exception):
    """Base class for every error raised by polarfield."""


class LengthMismatch(PolarfieldError, ValueError):
    pass


class InvalidCount(PolarfieldError, ValueError):
    pass


class DimensionMismatch(PolarfieldError, ValueError):
    pass


class BelowHorizon(PolarfieldError, ValueError):
    """A direction lies on or below the surface horizon."""


class EmptySignal(PolarfieldError, ValueError):
    pass


class Underdetermined(PolarfieldError, ValueError):
    """Fewer than three usable samples remain after filtering."""


class ParseError(PolarfieldError, ValueError):
    pass


class MissingFile(PolarfieldError, FileNotFoundError):
    def __init__(self, message, index=None, path=None):
        super().__init__(message)
        self.index = index
        self.path = path


class UnsupportedVersion(PolarfieldError, ValueError):
    pass


class CorruptImage(PolarfieldError, ValueError):
    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class StageError(PolarfieldError, RuntimeError):
    """Wraps an error raised inside a pipeline stage, naming the stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
