"""Exception types shared across the package."""


class PointfillError(Exception):
    """Base class for errors raised by this package."""


class InsufficientDataError(PointfillError, ValueError):
    """Too few input samples to run the requested estimator."""


class NoPlaneFoundError(PointfillError, RuntimeError):
    """Every RANSAC hypothesis was degenerate; no plane could be fit."""


class DegenerateElevationAxisError(PointfillError, ValueError):
    """Plane normal is parallel to the camera principal axis, so the
    elevation rotation axis is undefined."""


class EmptyObservationError(PointfillError, ValueError):
    """Sensor data contains no usable foreground rays or points."""


class FormatError(PointfillError, ValueError):
    """A file could not be parsed; the message carries position info."""


class GuidanceUnavailableError(PointfillError, RuntimeError):
    """The guidance provider failed or could not be reached."""


class ProtocolError(PointfillError, RuntimeError):
    """A remote guidance response violated the wire protocol."""
