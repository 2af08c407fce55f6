"""Contextless destination prediction harness.

Builds prompt datasets for an externally fine-tuned causal LM, parses its
generated completions back in, and provides a Gaussian-mixture baseline:
a K-component 2-D mixture fit to pooled training-trajectory points, each
training trajectory summarised by its mean responsibility vector, and
prediction by returning the destination of the signature-nearest training
trajectory.
"""

from __future__ import annotations

import json
import math
import os
import random
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    Trajectory,
    haversine_lonlat,
    trajectory_from_obj,
    trajectory_to_obj,
    validate_coordinate,
)
from .embedding import SerializationConfig, serialize_trajectory
from .errors import (
    DegenerateComponent,
    NoValidRecords,
    NonFiniteCoordinate,
    TooFewPoints,
    UnfittedModel,
)

COVARIANCE_FLOOR = 1e-8  # deg^2, keeps EM away from repeated-fix collapse

_NUMBER = r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?"
_PAIR_RE = re.compile(r"\(\s*(" + _NUMBER + r")\s*,\s*(" + _NUMBER + r")\s*\)")


@dataclass(frozen=True)
class SplitConfig:
    ratios: tuple[float, float, float] = (0.80, 0.05, 0.15)
    seed: int = 0

    def __post_init__(self) -> None:
        if any(r < 0 for r in self.ratios):
            raise ValueError("ratios must be non-negative")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError("ratios must sum to 1")


@dataclass(frozen=True)
class PromptRecord:
    id: str
    prompt: str
    destination: tuple[float, float]

    def __post_init__(self) -> None:
        if not validate_coordinate(*self.destination):
            raise ValueError(f"{self.id}: destination out of range")


@dataclass(frozen=True)
class PredictionInstance:
    """One harness instance: a partial trajectory and its true destination."""

    id: str
    partial: Trajectory
    destination: tuple[float, float]


@dataclass(frozen=True)
class PredictionRecord:
    """One evaluated test case: parsed candidates and their errors in km.

    ``candidates[i]`` is None when output i did not parse to a valid
    coordinate; ``errors_km`` is aligned, None for invalid entries.
    """

    id: str
    candidates: tuple[Optional[tuple[float, float]], ...]
    errors_km: tuple[Optional[float], ...]

    def __post_init__(self) -> None:
        if len(self.candidates) != len(self.errors_km):
            raise ValueError("candidates and errors_km must align")
        for e in self.errors_km:
            if e is not None and e < 0:
                raise ValueError("errors must be non-negative")

    def valid_errors(self, k: int) -> list[float]:
        return [e for e in self.errors_km[:k] if e is not None]


def split_dataset(instances: Sequence, cfg: SplitConfig) -> tuple[list, list, list]:
    """Seeded shuffle, then contiguous slices by ratio.

    Train and validation sizes are floored; the remainder goes to test, so
    the three slices always partition the input exactly.
    """
    if len(instances) < 3:
        raise ValueError("need at least 3 instances to split")
    items = list(instances)
    random.Random(cfg.seed).shuffle(items)
    n = len(items)
    n_train = math.floor(cfg.ratios[0] * n)
    n_valid = math.floor(cfg.ratios[1] * n)
    train = items[:n_train]
    valid = items[n_train:n_train + n_valid]
    test = items[n_train + n_valid:]
    return train, valid, test


def format_destination(lon: float, lat: float, cfg: SerializationConfig) -> str:
    return cfg.format_pair(lon, lat)


def build_prompt(
    partial: Trajectory,
    destination: Optional[tuple[float, float]],
    cfg: SerializationConfig,
) -> str:
    """Training prompt with the destination appended, or the test form.

    Training: ``<serialized> => Destination (lon, lat)``
    Test:     ``<serialized> => Destination`` (coordinates withheld)
    """
    base = serialize_trajectory(partial, cfg) + " => Destination"
    if destination is None:
        return base
    return base + " " + format_destination(*destination, cfg)


def parse_completion(text: str) -> Optional[tuple[float, float]]:
    """First ``(number, number)`` pair after the literal "Destination".

    Falls back to scanning from the start when the literal is absent.
    Returns None (invalid) for unparseable text or out-of-range coordinates.
    """
    idx = text.find("Destination")
    search_from = idx + len("Destination") if idx >= 0 else 0
    match = _PAIR_RE.search(text, search_from)
    if not match:
        return None
    lon, lat = float(match.group(1)), float(match.group(2))
    try:
        ok = validate_coordinate(lon, lat)
    except NonFiniteCoordinate:
        return None
    return (lon, lat) if ok else None


# --- Gaussian mixture baseline ---

@dataclass
class GmmModel:
    k: int
    weights: np.ndarray            # (K,)
    means: np.ndarray              # (K, 2) lon/lat
    covariances: np.ndarray        # (K, 2, 2)
    log_likelihoods: list[float] = field(default_factory=list)
    train_ids: list[str] = field(default_factory=list)
    train_signatures: Optional[np.ndarray] = None   # (n_train, K)
    train_destinations: Optional[np.ndarray] = None  # (n_train, 2)

    def validate(self) -> None:
        assert abs(float(self.weights.sum()) - 1.0) < 1e-9
        for cov in self.covariances:
            eigvals = np.linalg.eigvalsh(cov)
            assert np.all(eigvals >= COVARIANCE_FLOOR * (1 - 1e-6))
        if self.train_signatures is not None:
            sums = self.train_signatures.sum(axis=1)
            assert np.allclose(sums, 1.0, atol=1e-9)


def _floor_covariance(cov: np.ndarray) -> np.ndarray:
    cov = (cov + cov.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.maximum(eigvals, COVARIANCE_FLOOR)
    return eigvecs @ np.diag(eigvals) @ eigvecs.T


def _log_prob_matrix(model_weights, means, covs, points) -> np.ndarray:
    """(n, K) joint log densities log w_k + log N(x | mu_k, S_k)."""
    n, k = points.shape[0], means.shape[0]
    out = np.empty((n, k))
    for j in range(k):
        diff = points - means[j]
        chol = np.linalg.cholesky(covs[j])
        solved = np.linalg.solve(chol, diff.T)
        quad = (solved ** 2).sum(axis=0)
        log_det = 2.0 * np.log(np.diag(chol)).sum()
        out[:, j] = (math.log(model_weights[j])
                     - 0.5 * (quad + log_det + 2.0 * math.log(2.0 * math.pi)))
    return out


def _logsumexp_rows(log_probs: np.ndarray) -> np.ndarray:
    peak = log_probs.max(axis=1, keepdims=True)
    return (peak + np.log(np.exp(log_probs - peak).sum(axis=1, keepdims=True))).ravel()


def _kmeanspp_means(points: np.ndarray, k: int,
                    rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    means = np.empty((k, 2))
    means[0] = points[rng.integers(n)]
    d2 = ((points - means[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            means[j] = points[rng.integers(n)]
        else:
            means[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - means[j]) ** 2).sum(axis=1))
    return means


def gmm_fit(
    points: np.ndarray,
    k: int,
    seed: int = 0,
    max_iters: int = 200,
    tol: float = 1e-7,
) -> GmmModel:
    """EM fit of a K-component 2-D Gaussian mixture.

    Means start k-means++ style from the seeded generator; covariances are
    eigenvalue-floored every M step, and the per-iteration log-likelihood
    history is kept on the model (it is non-decreasing up to round-off).
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError(f"points must be (n, 2), got {points.shape}")
    n = points.shape[0]
    if n < k:
        raise TooFewPoints(f"{n} points cannot support {k} components")

    rng = np.random.default_rng(seed)
    means = _kmeanspp_means(points, k, rng)
    base_cov = _floor_covariance(np.cov(points.T, bias=True)
                                 if n > 1 else np.eye(2))
    covs = np.repeat(base_cov[None, :, :], k, axis=0)
    weights = np.full(k, 1.0 / k)

    history: list[float] = []
    for _ in range(max_iters):
        log_joint = _log_prob_matrix(weights, means, covs, points)
        log_norm = _logsumexp_rows(log_joint)
        ll = float(log_norm.sum())
        resp = np.exp(log_joint - log_norm[:, None])

        history.append(ll)
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol:
            break

        mass = resp.sum(axis=0)
        if np.any(mass <= 0) or not np.all(np.isfinite(mass)):
            raise DegenerateComponent("a component lost all mass")
        weights = mass / n
        means = (resp.T @ points) / mass[:, None]
        for j in range(k):
            diff = points - means[j]
            cov = (resp[:, j][:, None] * diff).T @ diff / mass[j]
            covs[j] = _floor_covariance(cov)

    return GmmModel(k=k, weights=weights, means=means, covariances=covs,
                    log_likelihoods=history)


def responsibilities(model: GmmModel, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    log_joint = _log_prob_matrix(model.weights, model.means,
                                 model.covariances, points)
    log_norm = _logsumexp_rows(log_joint)
    return np.exp(log_joint - log_norm[:, None])


def trajectory_signature(model: GmmModel, traj: Trajectory) -> np.ndarray:
    """Mean per-point responsibility vector: a K-simplex summary of a path."""
    pts = np.array([(p.lon, p.lat) for p in traj.points], dtype=float)
    return responsibilities(model, pts).mean(axis=0)


def fit_destination_model(
    train: Sequence[PredictionInstance],
    k: int = 25,
    seed: int = 0,
    max_iters: int = 200,
    tol: float = 1e-7,
) -> GmmModel:
    """Fit the baseline on pooled training partial-trajectory points and
    index every training trajectory by signature and destination."""
    if not train:
        raise TooFewPoints("no training instances")
    pooled = np.array(
        [(p.lon, p.lat) for inst in train for p in inst.partial.points],
        dtype=float,
    )
    model = gmm_fit(pooled, k=k, seed=seed, max_iters=max_iters, tol=tol)
    model.train_ids = [inst.id for inst in train]
    model.train_signatures = np.stack(
        [trajectory_signature(model, inst.partial) for inst in train]
    )
    model.train_destinations = np.array(
        [inst.destination for inst in train], dtype=float
    )
    return model


def gmm_predict(model: GmmModel, partial: Trajectory) -> tuple[float, float]:
    """Destination of the training trajectory nearest in signature space.

    Ties in signature distance go to the smallest training id.
    """
    if model.train_signatures is None or len(model.train_ids) == 0:
        raise UnfittedModel("no training trajectories indexed")
    sig = trajectory_signature(model, partial)
    d2 = ((model.train_signatures - sig) ** 2).sum(axis=1)
    best = min(range(len(model.train_ids)),
               key=lambda i: (d2[i], model.train_ids[i]))
    lon, lat = model.train_destinations[best]
    return float(lon), float(lat)


# --- Error@k / Accuracy@k / Validity@k ---

def build_prediction_records(
    outputs_by_id: dict[str, Sequence[str]],
    truths: dict[str, tuple[float, float]],
) -> list[PredictionRecord]:
    """Parse raw output strings and attach per-candidate haversine errors."""
    records = []
    for rid in sorted(outputs_by_id):
        if rid not in truths:
            continue
        truth = truths[rid]
        candidates = []
        errors = []
        for text in outputs_by_id[rid]:
            parsed = parse_completion(text)
            candidates.append(parsed)
            if parsed is None:
                errors.append(None)
            else:
                errors.append(haversine_lonlat(parsed[0], parsed[1],
                                               truth[0], truth[1]))
        records.append(PredictionRecord(
            id=rid, candidates=tuple(candidates), errors_km=tuple(errors)))
    return records


def error_at_k(records: Sequence[PredictionRecord], k: int,
               mode: str = "min") -> float:
    """Mean over records of the best (default) error among the first k
    valid candidates; ``mode="mean"`` averages them instead.

    Records with no valid candidate among the first k are excluded; if that
    excludes everything, NoValidRecords is raised.
    """
    if mode not in ("min", "mean"):
        raise ValueError("mode must be 'min' or 'mean'")
    per_record = []
    for rec in records:
        errs = rec.valid_errors(k)
        if not errs:
            continue
        per_record.append(min(errs) if mode == "min" else sum(errs) / len(errs))
    if not per_record:
        raise NoValidRecords(f"no record has a valid candidate in its first {k}")
    return float(np.mean(per_record))


def count_excluded(records: Sequence[PredictionRecord], k: int) -> int:
    return sum(1 for rec in records if not rec.valid_errors(k))


def accuracy_at_k(records: Sequence[PredictionRecord], k: int,
                  radius_m: float) -> float:
    """Fraction of records with a valid candidate within radius_m of truth
    among the first k; records with no valid candidate count as misses."""
    if not records:
        raise NoValidRecords("no records")
    radius_km = radius_m / 1000.0
    hits = 0
    for rec in records:
        errs = rec.valid_errors(k)
        if errs and min(errs) <= radius_km:
            hits += 1
    return hits / len(records)


def validity_at_k(raw_outputs: Sequence[Sequence[str]]) -> Optional[float]:
    """Fraction of all generated strings that parse to valid coordinates.

    Pooled across records and candidates; None when there is nothing to
    pool (undefined rather than zero).
    """
    total = 0
    valid = 0
    for outputs in raw_outputs:
        for text in outputs:
            total += 1
            if parse_completion(text) is not None:
                valid += 1
    if total == 0:
        return None
    return valid / total


# --- file formats ---

def instance_to_obj(inst: PredictionInstance, split: str) -> dict:
    obj = trajectory_to_obj(inst.partial)
    return {
        "id": inst.id,
        "split": split,
        "user_id": obj["user_id"],
        "points": obj["points"],
        "destination": [inst.destination[0], inst.destination[1]],
    }


def instance_from_obj(obj: dict) -> tuple[PredictionInstance, str]:
    partial = trajectory_from_obj({
        "user_id": obj["user_id"], "traj_id": obj["id"], "points": obj["points"],
    })
    inst = PredictionInstance(
        id=str(obj["id"]),
        partial=partial,
        destination=(float(obj["destination"][0]), float(obj["destination"][1])),
    )
    return inst, str(obj.get("split", ""))


def write_instances(path: str | os.PathLike,
                    by_split: dict[str, Sequence[PredictionInstance]]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for split in ("train", "valid", "test"):
            for inst in by_split.get(split, ()):
                fh.write(json.dumps(instance_to_obj(inst, split),
                                    separators=(",", ":")) + "\n")
                n += 1
    return n


def read_instances(path: str | os.PathLike) -> dict[str, list[PredictionInstance]]:
    out: dict[str, list[PredictionInstance]] = {"train": [], "valid": [], "test": []}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            inst, split = instance_from_obj(json.loads(line))
            out.setdefault(split, []).append(inst)
    return out


def write_prompts(
    path: str | os.PathLike,
    instances: Sequence[PredictionInstance],
    cfg: SerializationConfig,
    with_completion: bool,
) -> int:
    """Prompt export: train/valid rows carry a completion, test rows do not."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            row = {"id": inst.id,
                   "prompt": build_prompt(inst.partial, None, cfg)}
            if with_completion:
                row["completion"] = " " + format_destination(*inst.destination, cfg)
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
            n += 1
    return n


def write_truths(path: str | os.PathLike,
                 by_split: dict[str, Sequence[PredictionInstance]]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for split in ("train", "valid", "test"):
            for inst in by_split.get(split, ()):
                fh.write(json.dumps(
                    {"id": inst.id, "split": split,
                     "truth": [inst.destination[0], inst.destination[1]]},
                    separators=(",", ":")) + "\n")
                n += 1
    return n


def read_truths(path: str | os.PathLike,
                split: Optional[str] = None) -> dict[str, tuple[float, float]]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if split and obj.get("split") and obj["split"] != split:
                continue
            out[str(obj["id"])] = (float(obj["truth"][0]), float(obj["truth"][1]))
    return out


def read_completions(path: str | os.PathLike) -> dict[str, list[str]]:
    """Completions import: one ``{"id", "outputs": [...]}`` object per line."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out[str(obj["id"])] = [str(s) for s in obj["outputs"]]
    return out


def write_completions(path: str | os.PathLike,
                      outputs_by_id: dict[str, Sequence[str]]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rid in sorted(outputs_by_id):
            fh.write(json.dumps({"id": rid, "outputs": list(outputs_by_id[rid])},
                                separators=(",", ":")) + "\n")
            n += 1
    return n
