"""Exception types shared across the pipeline."""


class GlenoidError(Exception):
    """Base class for all errors raised by this package."""


class MaskFormatError(GlenoidError):
    """Malformed mask header or payload."""


class GeometryError(GlenoidError):
    """A geometric precondition does not hold (degenerate input)."""


class OptimizerError(GeometryError):
    """The circle-fit optimizer did not converge.

    The last iterate is kept on ``last_iterate`` so callers can inspect it.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class StageError(GlenoidError):
    """Failure inside one named pipeline stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.message = message
