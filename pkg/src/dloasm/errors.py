"""Exception types shared across the package."""


class DloError(Exception):
    """Base class for all package errors."""


class ShapeError(DloError):
    """Mismatched grid dimensions."""


class DegenerateTangent(DloError):
    """Tangent chord is too short to normalize."""


class DegenerateInput(DloError):
    """Not enough distinct points for the requested operation."""


class VerticalSegment(DloError):
    """Tangent has no usable horizontal projection."""


class CapacityError(DloError):
    """Bin is too small for the requested pile."""


class WorkspaceError(DloError):
    """Commanded TCP pose lies outside the workspace."""


class NoTopLayer(DloError):
    """Depth scan never accumulated enough contiguous area."""


class NoCandidate(DloError):
    """No mask with a usable skeleton."""


class NoDepthData(DloError):
    """All skeleton pixels lack valid depth."""


class TrackingLost(DloError):
    """Reconstruction produced no usable shape."""


class OffsetTooLarge(DloError):
    """Requested grasp offset exceeds the remaining DLO length."""


class PlanFailure(DloError):
    """Motion planner found no collision-free path."""


class ProtocolError(DloError):
    """Event is invalid for the current state."""


class ConfigError(DloError):
    """Invalid experiment configuration; message carries the field path."""
