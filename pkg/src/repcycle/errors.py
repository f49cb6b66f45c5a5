"""Exception hierarchy shared across the package."""


class RepcycleError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(RepcycleError):
    """A requested configuration cannot be realized."""


class GeometryError(RepcycleError):
    """Degenerate geometry (zero extent, rank-deficient, ...)."""


class InvalidInputError(RepcycleError):
    """Inputs contain NaN/inf or are otherwise unusable."""


class ShapeMismatchError(RepcycleError):
    """Array shapes do not match the model or operation contract."""


class ClippedGeometryError(RepcycleError):
    """Points at or behind the camera near plane."""


class InvalidLabelError(RepcycleError):
    """A part label outside the valid range was encountered."""


class OutOfFrameError(RepcycleError):
    """The rendered body does not intersect the image."""


class SplitError(RepcycleError):
    """Dataset cannot be partitioned as requested."""


class UnpairedAccessError(RepcycleError):
    """Ground truth of an unsupervised record was accessed during training."""


class NoDataError(RepcycleError):
    """A metric was requested before any samples were accumulated."""


class DegenerateAlignmentError(RepcycleError):
    """Point sets too degenerate for a unique Procrustes alignment."""


class DegenerateProjectionError(RepcycleError):
    """Matrix too rank-deficient to project onto the rotation group."""


class TrainingDivergedError(RepcycleError):
    """A loss became NaN/inf; carries a diagnostic dump path."""

    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
