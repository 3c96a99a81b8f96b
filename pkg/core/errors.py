"""Exception hierarchy shared by all stages.

Every exception carries the process exit code the CLI reports for it.
"""


class MVSError(Exception):
    """Base class. Uncaught instances mean an internal invariant broke."""

    exit_code = 3


class InvariantViolation(MVSError):
    """An internal invariant was violated."""


class InputError(MVSError, ValueError):
    """Bad input supplied by the user (files, flags, parameters)."""

    exit_code = 2


class ConfigError(InputError):
    """Invalid configuration value."""


class SceneParseError(InputError):
    """A scene text file could not be parsed."""

    def __init__(self, path, line_no: int, message: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class DimensionError(InputError):
    """Array/image dimensions disagree."""


class FormatError(InputError):
    """Binary artifact has the wrong magic or layout."""


class TruncatedFileError(InputError):
    """Binary artifact is shorter than its header claims."""


class PointCloudError(InputError):
    """A point cloud holds an invalid point."""

    def __init__(self, index: int, message: str):
        self.index = index
        super().__init__(f"point {index}: {message}")


class VisibilityError(InputError):
    """A synthetic camera sees the back side of a plane."""


class MetricsUndefinedError(InputError):
    """Metrics cannot be computed for the given inputs."""


class GeometryError(MVSError, ValueError):
    """Camera / plane math failed on its preconditions."""


class DomainError(GeometryError):
    """Argument outside the mathematical domain (depth <= 0, zero vector)."""


class ParallelRayError(GeometryError):
    """Viewing ray is parallel to the plane."""


class DepthOutOfRangeError(GeometryError):
    """Plane depth falls outside the camera's valid depth range."""

    def __init__(self, depth: float, d_min: float, d_max: float):
        self.depth = depth
        super().__init__(f"depth {depth:.6g} outside [{d_min:.6g}, {d_max:.6g}]")


class DegenerateTriangleError(GeometryError):
    """Triangle vertices are collinear or coincident."""


class SingularWarpError(GeometryError):
    """Plane-induced homography is singular."""


class UndefinedEpipoleError(GeometryError):
    """Camera centres coincide, the epipole is undefined."""


class DegenerateNeighborhoodError(GeometryError):
    """Neighbourhood covariance vanishes."""


class DegenerateInputError(GeometryError):
    """No non-degenerate minimal sample exists."""


class PlaneFitRejected(MVSError):
    """RANSAC consensus below the minimum inlier fraction."""

    def __init__(self, fraction: float, required: float):
        self.fraction = fraction
        self.required = required
        super().__init__(f"inlier fraction {fraction:.3f} < {required:.3f}")
