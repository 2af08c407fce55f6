"""T1 evaluation statistics: rank correlation between distance matrices,
agglomerative clustering on precomputed distances, Rand index, and k-NN
agreement.

Everything here is deterministic: ties break lexicographically so repeated
runs and permuted inputs give reproducible answers.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Trajectory
from .errors import ConstantInput, IdMismatch, LengthMismatch, TooFewItems
from .metrics import DistanceMatrix

LINKAGES = ("average", "complete", "single")


@dataclass(frozen=True)
class ClusterParams:
    n_clusters: int = 10
    linkage: str = "average"

    def __post_init__(self) -> None:
        if self.n_clusters < 2:
            raise ValueError("n_clusters must be >= 2")
        if self.linkage not in LINKAGES:
            raise ValueError(f"linkage must be one of {LINKAGES}")


@dataclass(frozen=True)
class EvalParams:
    k: int = 5

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class Partition:
    ids: tuple[str, ...]
    labels: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))
        if len(self.ids) != len(self.labels):
            raise LengthMismatch("ids and labels differ in length")
        present = sorted(set(self.labels))
        if present and present != list(range(len(present))):
            raise ValueError("labels must be contiguous integers from 0")

    @property
    def n_clusters(self) -> int:
        return len(set(self.labels))


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank positions."""
    arr = np.asarray(values, dtype=float)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(len(arr), dtype=float)
    i = 0
    n = len(arr)
    while i < n:
        j = i
        while j + 1 < n and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman's rank correlation: Pearson over average-ranked values."""
    xa, ya = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1 or len(xa) < 3:
        raise LengthMismatch(
            f"need equal-length sequences of >= 3 values, got {xa.shape} / {ya.shape}"
        )
    if np.all(xa == xa[0]) or np.all(ya == ya[0]):
        raise ConstantInput("rank correlation undefined for constant input")
    rx, ry = average_ranks(xa), average_ranks(ya)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float((rx ** 2).sum()) * float((ry ** 2).sum()))
    return float((rx * ry).sum() / denom)


def matrix_correlation(a: DistanceMatrix, b: DistanceMatrix) -> float:
    """Spearman over the strict upper triangles of two aligned matrices."""
    if a.ids != b.ids:
        raise IdMismatch("matrices cover different ids")
    return spearman(a.upper_triangle(), b.upper_triangle())


def correlation_grid(
    matrices: Sequence[DistanceMatrix], names: Sequence[str]
) -> dict:
    """Symmetric Spearman grid in the shape of the published correlation table."""
    k = len(matrices)
    rho = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            rho[i, j] = rho[j, i] = matrix_correlation(matrices[i], matrices[j])
    return {"metrics": list(names), "rho": [[round(v, 6) for v in row]
                                            for row in rho.tolist()]}


def _lance_williams(linkage: str, d_ik: float, d_jk: float,
                    n_i: int, n_j: int) -> float:
    if linkage == "average":
        return (n_i * d_ik + n_j * d_jk) / (n_i + n_j)
    if linkage == "complete":
        return max(d_ik, d_jk)
    return min(d_ik, d_jk)


def _agglomerate(values: np.ndarray, linkage: str,
                 n_clusters: int) -> tuple[list[int], list[float]]:
    """Merge bottom-up; returns (labels, merge heights).

    Clusters live in fixed slots; a merge keeps the lower slot, and distance
    ties go to the lexicographically smallest slot pair, so the procedure is
    deterministic.
    """
    n = values.shape[0]
    d = values.astype(float).copy()
    active = list(range(n))
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    heights: list[float] = []
    while len(active) > n_clusters:
        best = None
        best_pair = None
        for ai in range(len(active)):
            i = active[ai]
            row = d[i]
            for aj in range(ai + 1, len(active)):
                j = active[aj]
                if best is None or row[j] < best:
                    best = row[j]
                    best_pair = (i, j)
        i, j = best_pair
        heights.append(float(best))
        for k in active:
            if k in (i, j):
                continue
            merged = _lance_williams(linkage, d[i, k], d[j, k],
                                     len(members[i]), len(members[j]))
            d[i, k] = d[k, i] = merged
        members[i].extend(members[j])
        del members[j]
        active.remove(j)
    # deterministic labels: clusters ordered by smallest member index
    order = sorted(active, key=lambda c: min(members[c]))
    labels = [0] * n
    for label, c in enumerate(order):
        for m in members[c]:
            labels[m] = label
    return labels, heights


def agglomerative_cluster(matrix: DistanceMatrix,
                          params: ClusterParams) -> Partition:
    """Bottom-up clustering on a precomputed matrix down to n_clusters."""
    if matrix.n < params.n_clusters:
        raise TooFewItems(
            f"{matrix.n} items cannot form {params.n_clusters} clusters"
        )
    labels, _ = _agglomerate(matrix.values, params.linkage, params.n_clusters)
    return Partition(ids=tuple(matrix.ids), labels=tuple(labels))


def rand_index(p: Partition, q: Partition) -> float:
    """Fraction of item pairs on which the two partitions agree."""
    if p.ids != q.ids:
        raise IdMismatch("partitions cover different ids")
    n = len(p.ids)
    if n < 2:
        raise TooFewItems("rand index needs at least two items")
    # contingency-table identity for a (together-together) and the marginals
    from collections import Counter

    def pairs(c):
        return c * (c - 1) // 2

    joint = Counter(zip(p.labels, q.labels))
    a = sum(pairs(c) for c in joint.values())
    same_p = sum(pairs(c) for c in Counter(p.labels).values())
    same_q = sum(pairs(c) for c in Counter(q.labels).values())
    total = pairs(n)
    b = total - same_p - same_q + a
    return (a + b) / total


def knn_sets(matrix: DistanceMatrix, k: int) -> list[set[int]]:
    """k nearest neighbours per row, self excluded, ties broken by id order."""
    n = matrix.n
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    out = []
    idx = np.arange(n)
    for i in range(n):
        order = np.lexsort((idx, matrix.values[i]))
        nearest = [int(j) for j in order if j != i][:k]
        out.append(set(nearest))
    return out


def knn_overlap(a: DistanceMatrix, b: DistanceMatrix,
                params: EvalParams) -> float:
    """Mean per-item overlap of the k-nearest sets under the two matrices."""
    if a.ids != b.ids:
        raise IdMismatch("matrices cover different ids")
    sets_a = knn_sets(a, params.k)
    sets_b = knn_sets(b, params.k)
    return float(np.mean([
        len(sa & sb) / params.k for sa, sb in zip(sets_a, sets_b)
    ]))


# --- exports ---

def partition_to_csv(partition: Partition, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["traj_id", "cluster"])
        for traj_id, label in zip(partition.ids, partition.labels):
            writer.writerow([traj_id, label])


def partition_from_csv(path: str | os.PathLike) -> Partition:
    ids, labels = [], []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            ids.append(row[0])
            labels.append(int(row[1]))
    return Partition(ids=tuple(ids), labels=tuple(labels))


def partition_to_geojson(trajs: Sequence[Trajectory],
                         partition: Partition) -> dict:
    """FeatureCollection of LineStrings carrying a ``cluster`` property."""
    by_id = {t.traj_id: t for t in trajs}
    missing = [i for i in partition.ids if i not in by_id]
    if missing:
        raise IdMismatch(f"no trajectory for ids {missing[:3]}...")
    features = []
    for traj_id, label in zip(partition.ids, partition.labels):
        traj = by_id[traj_id]
        features.append({
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [[p.lon, p.lat] for p in traj.points],
            },
            "properties": {"traj_id": traj_id, "cluster": label},
        })
    return {"type": "FeatureCollection", "features": features}


def write_geojson(obj: dict, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")
