"""trajlens: trajectory distance analytics and destination-prediction harness."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    GeoBounds,
    TrackPoint,
    Trajectory,
    euclidean_deg,
    haversine_km,
    parse_plt,
    validate_coordinate,
)
