"""Classical trajectory distances and the pairwise matrix engine.

All three sequence metrics operate on planar degree-space coordinates
(euclidean point distance), matching the dimensionless matching thresholds
used for LCSS. Cosine distance over embeddings is plugged into the same
matrix engine via precomputed vectors.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import Trajectory
from .errors import EmptyInput, IdMismatch, MissingEmbeddings

METRIC_NAMES = ("hausdorff", "dtw", "lcss", "cosine")


@dataclass(frozen=True)
class MetricParams:
    metric: str
    epsilon: Optional[float] = None

    def __post_init__(self) -> None:
        if self.metric not in METRIC_NAMES:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.metric == "lcss":
            if self.epsilon is None or self.epsilon <= 0:
                raise ValueError("lcss requires epsilon > 0")

    def label(self) -> str:
        if self.metric == "lcss":
            return f"lcss(eps={self.epsilon:g})"
        return self.metric


@dataclass
class DistanceMatrix:
    """Symmetric pairwise distances over an ordered, labelled trajectory set."""

    ids: list[str]
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        n = len(self.ids)
        if self.values.shape != (n, n):
            raise ValueError(f"matrix shape {self.values.shape} != ({n}, {n})")
        if np.any(self.values < 0):
            raise ValueError("distances must be non-negative")
        if not np.allclose(self.values, self.values.T, atol=1e-9):
            raise ValueError("matrix must be symmetric within 1e-9")
        if np.any(np.abs(np.diag(self.values)) > 0):
            raise ValueError("diagonal must be zero")

    @property
    def n(self) -> int:
        return len(self.ids)

    def upper_triangle(self) -> np.ndarray:
        """Strict upper triangle flattened in row-major order."""
        iu = np.triu_indices(self.n, k=1)
        return self.values[iu]


def _coords(traj: Trajectory) -> np.ndarray:
    return np.array([(p.lon, p.lat) for p in traj.points], dtype=float)


def _cross_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n, m) table of planar degree distances."""
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))


def hausdorff(a: Trajectory, b: Trajectory) -> float:
    """Symmetric Hausdorff distance in degrees between the two point sets."""
    pa, pb = _coords(a), _coords(b)
    if pa.size == 0 or pb.size == 0:
        raise EmptyInput("hausdorff needs non-empty trajectories")
    d = _cross_distances(pa, pb)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def dtw(a: Trajectory, b: Trajectory) -> float:
    """Accumulated dynamic-time-warping cost in degrees.

    Classic unconstrained DP over the full cost table with a rolling row;
    accumulation order is fixed (row-major), so results are bit-stable.
    """
    pa, pb = _coords(a), _coords(b)
    if pa.size == 0 or pb.size == 0:
        raise EmptyInput("dtw needs non-empty trajectories")
    cost = _cross_distances(pa, pb)
    n, m = cost.shape
    prev = np.empty(m)
    prev[0] = cost[0, 0]
    for j in range(1, m):
        prev[j] = prev[j - 1] + cost[0, j]
    cur = np.empty(m)
    for i in range(1, n):
        cur[0] = prev[0] + cost[i, 0]
        row = cost[i]
        for j in range(1, m):
            cur[j] = row[j] + min(prev[j], prev[j - 1], cur[j - 1])
        prev, cur = cur, prev
    return float(prev[m - 1])


def lcss_distance(a: Trajectory, b: Trajectory, epsilon: float) -> float:
    """LCSS-based distance in [0, 1]: 1 - L / min(|a|, |b|).

    Points match when their planar degree distance is <= epsilon (disk
    matching, not per-axis boxes).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    pa, pb = _coords(a), _coords(b)
    if pa.size == 0 or pb.size == 0:
        raise EmptyInput("lcss needs non-empty trajectories")
    match = _cross_distances(pa, pb) <= epsilon
    n, m = match.shape
    prev = np.zeros(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row = match[i - 1]
        for j in range(1, m + 1):
            if row[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev, cur = cur, prev
    longest = int(prev[m])
    return 1.0 - longest / min(n, m)


def metric_distance(
    a: Trajectory,
    b: Trajectory,
    params: MetricParams,
    embeddings: Optional[Mapping[str, np.ndarray]] = None,
) -> float:
    if params.metric == "hausdorff":
        return hausdorff(a, b)
    if params.metric == "dtw":
        return dtw(a, b)
    if params.metric == "lcss":
        return lcss_distance(a, b, params.epsilon)
    # cosine over precomputed embedding vectors
    from .embedding import cosine_distance  # local import avoids a cycle

    if embeddings is None:
        raise MissingEmbeddings("cosine metric requires embeddings")
    try:
        u, v = embeddings[a.traj_id], embeddings[b.traj_id]
    except KeyError as exc:
        raise MissingEmbeddings(f"no embedding for {exc.args[0]!r}") from exc
    return cosine_distance(u, v)


def pairwise_matrix(
    trajs: Sequence[Trajectory],
    params: MetricParams,
    embeddings: Optional[Mapping[str, np.ndarray]] = None,
) -> DistanceMatrix:
    """Full symmetric distance matrix over an ordered trajectory set.

    Only the upper triangle is computed and then mirrored, so the result is
    exactly symmetric and independent of evaluation order.
    """
    if len(trajs) < 2:
        raise EmptyInput("need at least two trajectories")
    if params.metric == "cosine" and embeddings is None:
        raise MissingEmbeddings("cosine metric requires embeddings")
    n = len(trajs)
    values = np.zeros((n, n), dtype=float)
    for i in range(n):
        for j in range(i + 1, n):
            d = metric_distance(trajs[i], trajs[j], params, embeddings)
            values[i, j] = values[j, i] = d
    return DistanceMatrix(ids=[t.traj_id for t in trajs], values=values)


def matrix_to_csv(matrix: DistanceMatrix, path: str | os.PathLike) -> None:
    """Write ``id,<id_1>,...`` header then one full-precision row per id."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", *matrix.ids])
        for i, traj_id in enumerate(matrix.ids):
            writer.writerow([traj_id, *(repr(float(v)) for v in matrix.values[i])])


def matrix_from_csv(path: str | os.PathLike) -> DistanceMatrix:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ids = header[1:]
        rows = []
        row_ids = []
        for row in reader:
            row_ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    if row_ids != ids:
        raise IdMismatch("row ids do not match header ids")
    return DistanceMatrix(ids=ids, values=np.array(rows))
