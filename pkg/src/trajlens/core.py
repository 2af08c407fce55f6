"""Core trajectory types, GeoLife PLT ingestion, and geodesic primitives.

Coordinates are decimal degrees, stored as (lon, lat) pairs everywhere;
timestamps are UTC epoch seconds. All types are immutable values.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .errors import (
    EmptyTrajectory,
    MalformedRow,
    NonFiniteCoordinate,
    OutOfRangeCoordinate,
)

EARTH_RADIUS_KM = 6371.0088

MIN_LON, MAX_LON = -180.0, 180.0
MIN_LAT, MAX_LAT = -90.0, 90.0

# GeoLife PLT files start with six lines of fixed boilerplate.
PLT_HEADER_LINES = 6
_PLT_TIME_FORMAT = "%Y-%m-%d %H:%M:%S"


def validate_coordinate(lon: float, lat: float) -> bool:
    """True iff lon is within [-180, 180] and lat within [-90, 90], inclusive.

    Raises NonFiniteCoordinate for NaN or infinite inputs.
    """
    if not (math.isfinite(lon) and math.isfinite(lat)):
        raise NonFiniteCoordinate(f"non-finite coordinate ({lon}, {lat})")
    return MIN_LON <= lon <= MAX_LON and MIN_LAT <= lat <= MAX_LAT


@dataclass(frozen=True)
class TrackPoint:
    """One GPS fix: longitude, latitude (degrees) and UTC epoch seconds."""

    lon: float
    lat: float
    t: int

    def __post_init__(self) -> None:
        if not validate_coordinate(self.lon, self.lat):
            raise OutOfRangeCoordinate(
                f"coordinate ({self.lon}, {self.lat}) out of range"
            )
        if not math.isfinite(self.t):
            raise NonFiniteCoordinate(f"non-finite timestamp {self.t}")


@dataclass(frozen=True)
class Trajectory:
    """An ordered sequence of at least two track points for one trip."""

    user_id: str
    traj_id: str
    points: tuple[TrackPoint, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(self.points))
        if len(self.points) < 2:
            raise EmptyTrajectory(
                f"trajectory {self.traj_id!r} has {len(self.points)} point(s)"
            )
        for prev, cur in zip(self.points, self.points[1:]):
            if cur.t < prev.t:
                raise MalformedRow(
                    f"trajectory {self.traj_id!r}: timestamps decrease "
                    f"({prev.t} -> {cur.t})"
                )

    def __len__(self) -> int:
        return len(self.points)

    @property
    def t_start(self) -> int:
        return self.points[0].t

    @property
    def t_end(self) -> int:
        return self.points[-1].t

    def duration_s(self) -> int:
        return self.t_end - self.t_start

    def lonlat(self) -> list[tuple[float, float]]:
        return [(p.lon, p.lat) for p in self.points]


@dataclass(frozen=True)
class GeoBounds:
    """Axis-aligned lon/lat box used for region filtering."""

    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def __post_init__(self) -> None:
        if self.min_lon > self.max_lon or self.min_lat > self.max_lat:
            raise ValueError("bounds must satisfy min <= max on both axes")

    def contains(self, lon: float, lat: float) -> bool:
        return (self.min_lon <= lon <= self.max_lon
                and self.min_lat <= lat <= self.max_lat)


def haversine_lonlat(lon1: float, lat1: float, lon2: float, lat2: float) -> float:
    """Great-circle distance in km between two lon/lat pairs (degrees)."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def haversine_km(a: TrackPoint, b: TrackPoint) -> float:
    """Great-circle distance in km between two track points."""
    return haversine_lonlat(a.lon, a.lat, b.lon, b.lat)


def euclidean_deg(a: TrackPoint, b: TrackPoint) -> float:
    """Planar distance in degree units, sqrt(dlon^2 + dlat^2).

    This is the point distance under Hausdorff/DTW/LCSS; haversine is
    reserved for destination-prediction error, so the two unit systems
    never mix.
    """
    return math.hypot(a.lon - b.lon, a.lat - b.lat)


def parse_plt(
    content: bytes | str,
    user_id: str,
    source_name: str = "",
    strict: bool = False,
    drop_log: Optional[list[str]] = None,
) -> Trajectory:
    """Parse one GeoLife PLT file into a Trajectory.

    Layout: six header lines, then CSV rows
    ``lat,lon,0,alt_ft,days_since_1899,date,time``. Altitude and the
    day-number column are discarded; date+time are interpreted as UTC.

    By default bad rows (unparseable, out-of-range, or stepping backwards
    in time) are dropped and optionally recorded in ``drop_log``; with
    ``strict=True`` the first bad row raises MalformedRow or
    OutOfRangeCoordinate. Fewer than two usable rows raises EmptyTrajectory.
    """
    if isinstance(content, bytes):
        text = content.decode("utf-8", errors="replace")
    else:
        text = content

    stem = Path(source_name).stem if source_name else "traj"
    traj_id = f"{user_id}/{stem}"

    points: list[TrackPoint] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if lineno <= PLT_HEADER_LINES:
            continue
        line = line.strip()
        if not line:
            continue
        try:
            fields = line.split(",")
            if len(fields) < 7:
                raise ValueError(f"expected 7 fields, got {len(fields)}")
            lat = float(fields[0])
            lon = float(fields[1])
            stamp = datetime.strptime(
                f"{fields[5].strip()} {fields[6].strip()}", _PLT_TIME_FORMAT
            ).replace(tzinfo=timezone.utc)
            t = int(stamp.timestamp())
        except (ValueError, OverflowError) as exc:
            if strict:
                raise MalformedRow(f"{traj_id} line {lineno}: {exc}") from exc
            if drop_log is not None:
                drop_log.append(f"line {lineno}: malformed row ({exc})")
            continue

        try:
            in_range = validate_coordinate(lon, lat)
        except NonFiniteCoordinate:
            in_range = False
        if not in_range:
            if strict:
                raise OutOfRangeCoordinate(
                    f"{traj_id} line {lineno}: coordinate ({lon}, {lat}) out of range"
                )
            if drop_log is not None:
                drop_log.append(f"line {lineno}: coordinate out of range")
            continue

        if points and t < points[-1].t:
            if strict:
                raise MalformedRow(
                    f"{traj_id} line {lineno}: timestamp decreases"
                )
            if drop_log is not None:
                drop_log.append(f"line {lineno}: timestamp regression")
            continue

        points.append(TrackPoint(lon=lon, lat=lat, t=t))

    if len(points) < 2:
        raise EmptyTrajectory(f"{traj_id}: {len(points)} valid row(s)")
    return Trajectory(user_id=user_id, traj_id=traj_id, points=tuple(points))


def iter_plt_files(root: str | os.PathLike) -> Iterator[tuple[str, Path]]:
    """Yield (user_id, plt_path) under a ``<root>/<user>/Trajectory/*.plt`` layout."""
    root = Path(root)
    for user_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        traj_dir = user_dir / "Trajectory"
        if not traj_dir.is_dir():
            continue
        for plt_path in sorted(traj_dir.glob("*.plt")):
            yield user_dir.name, plt_path


# --- trajectory interchange JSONL ---

def trajectory_to_obj(traj: Trajectory) -> dict:
    return {
        "user_id": traj.user_id,
        "traj_id": traj.traj_id,
        "points": [[p.lon, p.lat, int(p.t)] for p in traj.points],
    }


def trajectory_from_obj(obj: dict) -> Trajectory:
    points = tuple(
        TrackPoint(lon=float(lon), lat=float(lat), t=int(t))
        for lon, lat, t in obj["points"]
    )
    return Trajectory(
        user_id=str(obj["user_id"]), traj_id=str(obj["traj_id"]), points=points
    )


def write_trajectories(path: str | os.PathLike, trajs: Iterable[Trajectory]) -> int:
    """Write one JSON object per line; returns the number of lines written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajs:
            fh.write(json.dumps(trajectory_to_obj(traj), separators=(",", ":")))
            fh.write("\n")
            n += 1
    return n


def read_trajectories(path: str | os.PathLike) -> list[Trajectory]:
    trajs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                trajs.append(trajectory_from_obj(json.loads(line)))
    return trajs


def load_bounds(path: str | os.PathLike) -> GeoBounds:
    """Read a bounds file: JSON with min_lon/min_lat/max_lon/max_lat."""
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    return GeoBounds(
        min_lon=float(obj["min_lon"]),
        min_lat=float(obj["min_lat"]),
        max_lon=float(obj["max_lon"]),
        max_lat=float(obj["max_lat"]),
    )
