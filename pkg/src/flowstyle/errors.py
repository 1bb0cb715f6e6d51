"""Exception types shared across the library.

Every failure mode the public API promises is represented by a distinct
class so callers can discriminate without string matching.
"""


class FlowStyleError(Exception):
    """Base class for all library-specific errors."""


class ShapeError(FlowStyleError, ValueError):
    """Operand shapes/extents are incompatible with the operation."""


class SingularMatrixError(FlowStyleError, ArithmeticError):
    """Matrix inversion hit a pivot below the singularity floor."""


class NotPSDError(FlowStyleError, ArithmeticError):
    """Matrix has an eigenvalue below the allowed negative tolerance."""


class NumericError(FlowStyleError, ArithmeticError):
    """A numeric computation produced non-finite values or failed to converge."""


class DegenerateScaleError(FlowStyleError, ValueError):
    """A per-channel scale is too close to zero to invert."""


class StateError(FlowStyleError, RuntimeError):
    """Operation applied to an object in the wrong lifecycle state."""


class ImageFormatError(FlowStyleError, ValueError):
    """Image file is malformed, truncated, or uses an unsupported variant."""


class CheckpointError(FlowStyleError, ValueError):
    """Base class for checkpoint file problems."""


class CorruptCheckpointError(CheckpointError):
    """Checkpoint is truncated or carries trailing garbage."""


class MagicMismatchError(CheckpointError):
    """File does not start with the checkpoint magic."""


class VersionMismatchError(CheckpointError):
    """Checkpoint format version is not supported."""


class SizeMismatchError(CheckpointError):
    """Declared parameter block size disagrees with the architecture."""
