"""Exception types shared across the pipeline."""


class ZeroVectorError(ValueError):
    """Vector magnitude below the 1e-12 floor where angles are undefined."""


class BehindCameraError(ValueError):
    """Point has non-positive depth in the camera frame."""


class DegenerateError(ValueError):
    """Correspondence set cannot constrain a unique pose."""


class NoConvergenceError(RuntimeError):
    """Iterative refinement hit its iteration cap before the gradient tolerance."""


class ConsensusFailureError(RuntimeError):
    """No RANSAC hypothesis reached the required inlier count."""


class DimensionMismatchError(ValueError):
    """Array shape does not match the declared dimensionality."""


class LengthMismatchError(ValueError):
    """Paired sequences have different lengths."""


class TooShortError(ValueError):
    """Sequence shorter than the minimum the operation supports."""


class EmptyDatasetError(ValueError):
    """Operation requires at least one sample."""
