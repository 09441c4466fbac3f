"""Point cloud completion by test-time optimization: a neural SDF and
color field fit to partial sensor data under differentiable volume
rendering, with a text-conditioned score-distillation gradient completing
the unobserved parts."""

from . import (
    evalx,
    fields,
    geometry,
    guidance,
    ingest,
    losses,
    renderer,
    synthetic,
    trainer,
)
from .errors import (
    DegenerateElevationAxisError,
    EmptyObservationError,
    FormatError,
    GuidanceUnavailableError,
    InsufficientDataError,
    NoPlaneFoundError,
    PointfillError,
    ProtocolError,
)

__version__ = "0.1.0"

__all__ = [
    "evalx",
    "fields",
    "geometry",
    "guidance",
    "ingest",
    "losses",
    "renderer",
    "synthetic",
    "trainer",
    "PointfillError",
    "InsufficientDataError",
    "NoPlaneFoundError",
    "DegenerateElevationAxisError",
    "EmptyObservationError",
    "FormatError",
    "GuidanceUnavailableError",
    "ProtocolError",
    "__version__",
]
