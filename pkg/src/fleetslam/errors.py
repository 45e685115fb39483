"""Exception types shared across the package."""


class FleetSlamError(Exception):
    """Base class for errors raised by this package."""


class DegenerateRotationError(FleetSlamError, ValueError):
    """Rotation logarithm requested at (or within tolerance of) angle pi,
    where the axis is not uniquely defined."""


class DegenerateGeometryError(FleetSlamError, ValueError):
    """Point configuration too degenerate for the requested estimate
    (e.g. collinear correspondences in a rigid alignment)."""


class GraphFormatError(FleetSlamError, ValueError):
    """Malformed pose-graph file. Carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingPoseError(FleetSlamError, KeyError):
    """A trajectory, initial guess, or public-pose set does not cover a
    required pose key."""


class DisconnectedGraphError(FleetSlamError, ValueError):
    """A robot (or pose) is unreachable through odometry and loop closures."""


class ConfigError(FleetSlamError, ValueError):
    """Invalid experiment configuration (maps to CLI exit code 2)."""
