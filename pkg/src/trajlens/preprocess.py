"""Trajectory cleaning pipeline and experiment-specific selection.

Stages follow the usual GPS-preprocessing order: noise filtering by implied
speed, greedy radial compression, stay-point detection, density clustering
of stay points, and user filtering. Defaults mirror common preprocessing
library conventions and are all overridable from the CLI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .core import TrackPoint, Trajectory, haversine_km, haversine_lonlat
from .errors import EmptySelection, EmptyTrajectory, TooShort


@dataclass(frozen=True)
class PreprocessConfig:
    max_speed_kmh: float = 500.0
    compress_radius_km: float = 0.2
    stop_radius_km: float = 0.2
    stop_min_minutes: float = 20.0
    dbscan_eps_km: float = 0.5
    dbscan_min_samples: int = 1
    min_trajs_per_user: int = 10

    def __post_init__(self) -> None:
        for name in ("max_speed_kmh", "compress_radius_km", "stop_radius_km",
                     "stop_min_minutes", "dbscan_eps_km"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.dbscan_min_samples < 1:
            raise ValueError("dbscan_min_samples must be >= 1")
        if self.min_trajs_per_user < 1:
            raise ValueError("min_trajs_per_user must be >= 1")


@dataclass(frozen=True)
class StayPoint:
    """Centroid of a dwell: somewhere the user stayed within a small radius."""

    user_id: str
    lon: float
    lat: float
    t_start: int
    t_end: int
    cluster_id: Optional[int] = None

    def duration_s(self) -> int:
        return self.t_end - self.t_start


def filter_noise(traj: Trajectory, max_speed_kmh: float) -> Trajectory:
    """Drop points whose implied speed from the previous kept point is too high.

    The first point is always retained. Zero time deltas count as infinite
    speed unless the displacement is also zero.
    """
    kept = [traj.points[0]]
    for p in traj.points[1:]:
        prev = kept[-1]
        dist_km = haversine_km(prev, p)
        dt_h = (p.t - prev.t) / 3600.0
        if dist_km == 0.0:
            speed = 0.0
        elif dt_h <= 0.0:
            speed = math.inf
        else:
            speed = dist_km / dt_h
        if speed <= max_speed_kmh:
            kept.append(p)
    if len(kept) < 2:
        raise EmptyTrajectory(
            f"{traj.traj_id}: noise filter left {len(kept)} point(s)"
        )
    return replace(traj, points=tuple(kept))


def compress(traj: Trajectory, compress_radius_km: float) -> Trajectory:
    """Greedy radial compression.

    Emits a point, then skips every subsequent point within the radius of
    the last emitted one. The final input point is always part of the
    output, so the result never shrinks below two points and a second pass
    with the same radius is a no-op.
    """
    kept = [traj.points[0]]
    for p in traj.points[1:-1]:
        if haversine_km(kept[-1], p) > compress_radius_km:
            kept.append(p)
    last = traj.points[-1]
    if kept[-1] is not last:
        kept.append(last)
    return replace(traj, points=tuple(kept))


def detect_stay_points(
    traj: Trajectory, stop_radius_km: float, stop_min_minutes: float
) -> list[StayPoint]:
    """Forward scan for dwell regions.

    A maximal run of consecutive points all within ``stop_radius_km`` of the
    run's first point that spans at least ``stop_min_minutes`` yields one
    stay point at the run centroid; the scan resumes past the run, so runs
    never overlap.
    """
    pts = traj.points
    n = len(pts)
    min_span_s = stop_min_minutes * 60.0
    stays: list[StayPoint] = []
    i = 0
    while i < n:
        j = i + 1
        while j < n and haversine_km(pts[i], pts[j]) <= stop_radius_km:
            j += 1
        # run is pts[i:j]
        if pts[j - 1].t - pts[i].t >= min_span_s:
            run = pts[i:j]
            stays.append(StayPoint(
                user_id=traj.user_id,
                lon=sum(p.lon for p in run) / len(run),
                lat=sum(p.lat for p in run) / len(run),
                t_start=run[0].t,
                t_end=run[-1].t,
            ))
            i = j
        else:
            i += 1
    return stays


def cluster_stay_points(
    stays: Sequence[StayPoint], dbscan_eps_km: float, dbscan_min_samples: int
) -> list[StayPoint]:
    """Density-based clustering of stay points on haversine distance.

    Core points are those with at least ``dbscan_min_samples`` neighbours
    within eps (the point itself counts); clusters are the connected
    components of core points, and each border point joins its nearest core
    point's cluster, which makes the labelling independent of input order.
    Noise keeps ``cluster_id=None``. Ids are contiguous from 0 in order of
    first cluster member appearance.
    """
    n = len(stays)
    if n == 0:
        return []
    dist = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            d = haversine_lonlat(stays[i].lon, stays[i].lat,
                                 stays[j].lon, stays[j].lat)
            dist[i][j] = dist[j][i] = d

    neighbours = [
        [j for j in range(n) if dist[i][j] <= dbscan_eps_km] for i in range(n)
    ]
    core = [len(neighbours[i]) >= dbscan_min_samples for i in range(n)]

    # connected components of core points under eps-adjacency
    comp = [-1] * n
    n_comp = 0
    for i in range(n):
        if not core[i] or comp[i] != -1:
            continue
        stack = [i]
        comp[i] = n_comp
        while stack:
            u = stack.pop()
            for v in neighbours[u]:
                if core[v] and comp[v] == -1:
                    comp[v] = n_comp
                    stack.append(v)
        n_comp += 1

    # border points join the component of the nearest core neighbour
    for i in range(n):
        if core[i] or comp[i] != -1:
            continue
        best = None
        for v in neighbours[i]:
            if core[v] and (best is None or dist[i][v] < dist[i][best]):
                best = v
        if best is not None:
            comp[i] = comp[best]

    # contiguous ids by first member appearance
    remap: dict[int, int] = {}
    for i in range(n):
        if comp[i] != -1 and comp[i] not in remap:
            remap[comp[i]] = len(remap)
    return [
        replace(s, cluster_id=remap[comp[i]] if comp[i] != -1 else None)
        for i, s in enumerate(stays)
    ]


def filter_users(
    trajs: Sequence[Trajectory], min_trajs_per_user: int
) -> list[Trajectory]:
    """Keep only trajectories of users contributing enough of them."""
    counts: dict[str, int] = {}
    for t in trajs:
        counts[t.user_id] = counts.get(t.user_id, 0) + 1
    return [t for t in trajs if counts[t.user_id] >= min_trajs_per_user]


def _nearest_rank(sorted_values: Sequence[int], pct: float) -> int:
    """Nearest-rank percentile over a pre-sorted sequence."""
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100.0 * n))
    return sorted_values[min(rank, n) - 1]


def select_medium_length(
    trajs: Sequence[Trajectory], lo_pct: float = 25.0, hi_pct: float = 75.0
) -> list[Trajectory]:
    """Keep trajectories whose point count falls in the percentile band.

    Percentiles are nearest-rank over the point-count distribution; the
    band is inclusive on both ends.
    """
    if not (0 <= lo_pct < hi_pct <= 100):
        raise ValueError("need 0 <= lo_pct < hi_pct <= 100")
    if not trajs:
        raise EmptySelection("no trajectories to select from")
    lengths = sorted(len(t) for t in trajs)
    lo = _nearest_rank(lengths, lo_pct)
    hi = _nearest_rank(lengths, hi_pct)
    kept = [t for t in trajs if lo <= len(t) <= hi]
    if not kept:
        raise EmptySelection(
            f"percentile band [{lo_pct}, {hi_pct}] kept nothing"
        )
    return kept


def truncate_for_prediction(
    traj: Trajectory, window_minutes: float = 15.0, fraction: float = 0.75
) -> tuple[Trajectory, TrackPoint]:
    """Cut the last ``window_minutes`` of a trip and keep its leading fraction.

    Returns (partial, destination) where destination is the final point of
    the full trajectory and partial is the first ceil(fraction * window)
    points of the window, capped so the destination itself stays out of the
    partial whenever fraction < 1. Raises TooShort when the trajectory does
    not span the window or the window holds fewer than 4 points.
    """
    window_s = window_minutes * 60.0
    if traj.duration_s() < window_s:
        raise TooShort(
            f"{traj.traj_id}: spans {traj.duration_s()} s < {window_s:.0f} s"
        )
    cutoff = traj.t_end - window_s
    window = [p for p in traj.points if p.t >= cutoff]
    if len(window) < 4:
        raise TooShort(f"{traj.traj_id}: only {len(window)} points in window")
    destination = traj.points[-1]
    n_keep = math.ceil(fraction * len(window))
    if fraction < 1.0:
        n_keep = min(n_keep, len(window) - 1)
    if n_keep < 2:
        raise TooShort(f"{traj.traj_id}: partial would keep {n_keep} point(s)")
    partial = replace(traj, points=tuple(window[:n_keep]))
    return partial, destination
