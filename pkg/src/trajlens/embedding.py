"""Trajectory serialization, embedding backends, pooling, cosine distance.

Two backends sit behind one descriptor: a deterministic offline reference
backend (hashed character trigrams with signed random projections and a
positional sign modulation) and a remote HTTP backend speaking the
``POST /v1/embed`` protocol. The reference backend exists so the distance
and clustering machinery is testable without any model; it makes no claim
of matching any particular language model's semantics.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import Trajectory
from .errors import (
    DimensionMismatch,
    EmptyInput,
    EmptyText,
    RaggedInput,
    RemoteUnavailable,
    ZeroVector,
)

REFERENCE_DIM = 256
REFERENCE_MODEL_NAME = "trigram-srp-256"
TOKEN_ENV_VAR = "TRAJLENS_EMBED_TOKEN"


@dataclass(frozen=True)
class SerializationConfig:
    prefix: str = "Trajectory: "
    decimals: int = 5
    pair_separator: str = ", "
    trim_zeros: bool = False

    def __post_init__(self) -> None:
        if not 1 <= self.decimals <= 10:
            raise ValueError("decimals must be in [1, 10]")

    def format_value(self, value: float) -> str:
        text = f"{value:.{self.decimals}f}"
        if self.trim_zeros and "." in text:
            text = text.rstrip("0").rstrip(".")
            if text in ("", "-"):
                text = "0"
        return text

    def format_pair(self, lon: float, lat: float) -> str:
        return f"({self.format_value(lon)}, {self.format_value(lat)})"


@dataclass(frozen=True)
class EmbeddingVector:
    traj_id: str
    dim: int
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) != self.dim:
            raise DimensionMismatch(
                f"{self.traj_id!r}: {len(self.values)} values, dim {self.dim}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.traj_id!r}: non-finite embedding values")

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str = "reference"
    endpoint: Optional[str] = None
    model_name: str = REFERENCE_MODEL_NAME
    dim: int = REFERENCE_DIM
    layer: str = "last"

    def __post_init__(self) -> None:
        if self.kind not in ("reference", "remote"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if (self.endpoint is not None) != (self.kind == "remote"):
            raise ValueError("endpoint must be present iff kind == 'remote'")


def serialize_trajectory(traj: Trajectory, cfg: SerializationConfig) -> str:
    """Render a trajectory as ``<prefix>(lon, lat), (lon, lat), ...``.

    Longitude first, rounded half-to-even at cfg.decimals with trailing
    zeros kept (unless trim_zeros is set), so equal trajectories always
    produce byte-identical strings.
    """
    if len(traj.points) == 0:
        raise EmptyInput("cannot serialize an empty trajectory")
    body = cfg.pair_separator.join(
        cfg.format_pair(p.lon, p.lat) for p in traj.points
    )
    return cfg.prefix + body


# --- reference backend ---

def _sign_bits(data: bytes) -> np.ndarray:
    """256 deterministic signs derived from a sha256 digest."""
    digest = hashlib.sha256(data).digest()
    bits = np.unpackbits(np.frombuffer(digest, dtype=np.uint8))
    return bits.astype(np.float64) * 2.0 - 1.0


@lru_cache(maxsize=65536)
def _token_vector(token: str) -> np.ndarray:
    grams = [token[i:i + 3] for i in range(len(token) - 2)] or [token]
    vec = np.zeros(REFERENCE_DIM)
    for gram in grams:
        vec += _sign_bits(b"tri:" + gram.encode("utf-8"))
    return vec


@lru_cache(maxsize=4096)
def _position_modulation(position: int) -> np.ndarray:
    return _sign_bits(f"pos:{position}".encode("ascii"))


def _reference_embed_tokens(text: str) -> np.ndarray:
    tokens = text.split()
    if not tokens:
        raise EmptyText("reference backend needs a non-empty string")
    rows = [
        _token_vector(tok) * _position_modulation(i)
        for i, tok in enumerate(tokens)
    ]
    return np.stack(rows)


# --- remote backend ---

def _auth_headers(token: Optional[str]) -> dict[str, str]:
    token = token if token is not None else os.environ.get(TOKEN_ENV_VAR)
    headers = {"Content-Type": "application/json"}
    if token:
        headers["Authorization"] = f"Bearer {token}"
    return headers


def remote_embed_request(
    endpoint: str,
    texts: Sequence[str],
    pooling: str,
    layer: str = "last",
    token: Optional[str] = None,
    max_retries: int = 3,
    backoff_s: float = 1.0,
    timeout_s: float = 60.0,
) -> dict:
    """POST to ``<endpoint>/v1/embed`` with bounded exponential-backoff retries."""
    import requests

    url = endpoint.rstrip("/") + "/v1/embed"
    payload = {"texts": list(texts), "pooling": pooling, "layer": layer}
    last_error = "no attempt made"
    for attempt in range(max_retries + 1):
        if attempt > 0 and backoff_s > 0:
            time.sleep(backoff_s * (2 ** (attempt - 1)))
        try:
            resp = requests.post(
                url, json=payload, headers=_auth_headers(token), timeout=timeout_s
            )
        except requests.RequestException as exc:
            last_error = str(exc)
            continue
        if resp.status_code == 200:
            return resp.json()
        try:
            last_error = f"HTTP {resp.status_code}: {resp.json().get('error', '')}"
        except (ValueError, AttributeError):
            last_error = f"HTTP {resp.status_code}"
        # client errors will not improve with retries
        if 400 <= resp.status_code < 500:
            break
    raise RemoteUnavailable(f"{url}: {last_error}")


def _remote_embed_tokens(
    text: str, backend: BackendDescriptor, token: Optional[str] = None,
    max_retries: int = 3, backoff_s: float = 1.0,
) -> np.ndarray:
    body = remote_embed_request(
        backend.endpoint, [text], pooling="none", layer=backend.layer,
        token=token, max_retries=max_retries, backoff_s=backoff_s,
    )
    vectors = np.asarray(body["embeddings"][0], dtype=float)
    if vectors.ndim != 2:
        raise DimensionMismatch(
            f"expected per-token vectors, got shape {vectors.shape}"
        )
    _check_dim(vectors.shape[1], backend)
    return vectors


def _check_dim(got: int, backend: BackendDescriptor) -> None:
    if backend.dim and got != backend.dim:
        raise DimensionMismatch(
            f"backend advertises dim {backend.dim}, service returned {got}"
        )


def embed_tokens(
    text: str, backend: BackendDescriptor, **remote_kwargs
) -> np.ndarray:
    """Per-token embedding matrix of shape (n_tokens, dim) for one string."""
    if not text.strip():
        raise EmptyText("cannot embed an empty string")
    if backend.kind == "reference":
        vectors = _reference_embed_tokens(text)
        _check_dim(vectors.shape[1], backend)
        return vectors
    return _remote_embed_tokens(text, backend, **remote_kwargs)


def mean_pool(tokens: Sequence[Sequence[float]], traj_id: str = "") -> EmbeddingVector:
    """Elementwise arithmetic mean of token vectors."""
    rows = [np.asarray(t, dtype=float) for t in tokens]
    if not rows:
        raise EmptyInput("mean_pool needs at least one vector")
    dim = rows[0].shape
    if any(r.shape != dim for r in rows):
        raise RaggedInput("token vectors have unequal lengths")
    pooled = np.mean(np.stack(rows), axis=0)
    return EmbeddingVector(traj_id=traj_id, dim=pooled.shape[0],
                           values=tuple(pooled.tolist()))


def cosine_distance(u, v) -> float:
    """1 - cos(angle) between two vectors; lies in [0, 2]."""
    ua = u.array() if isinstance(u, EmbeddingVector) else np.asarray(u, dtype=float)
    va = v.array() if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=float)
    if ua.shape != va.shape:
        raise DimensionMismatch(f"dims {ua.shape} vs {va.shape}")
    nu, nv = np.linalg.norm(ua), np.linalg.norm(va)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine distance undefined for zero vectors")
    return float(1.0 - np.dot(ua, va) / (nu * nv))


@dataclass
class EmbedResult:
    vectors: list[EmbeddingVector] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)


def embed_corpus(
    trajs: Sequence[Trajectory],
    backend: BackendDescriptor,
    cfg: SerializationConfig,
    batch_size: int = 16,
    token: Optional[str] = None,
    max_retries: int = 3,
    backoff_s: float = 1.0,
    out_path: Optional[str | os.PathLike] = None,
    progress=None,
) -> EmbedResult:
    """Embed every trajectory, collecting per-item failures without aborting.

    Remote texts are sent in batches with server-side mean pooling; a failed
    batch is retried per item so that one bad text costs only itself. When
    ``out_path`` is given, vectors are appended to the JSONL store as they
    arrive, so partial results survive interruption.
    """
    result = EmbedResult()
    out_fh = open(out_path, "w", encoding="utf-8") if out_path else None
    try:
        if backend.kind == "reference":
            for traj in trajs:
                try:
                    vec = mean_pool(
                        embed_tokens(serialize_trajectory(traj, cfg), backend),
                        traj_id=traj.traj_id,
                    )
                except Exception as exc:  # collect, never abort the batch
                    result.failures.append((traj.traj_id, str(exc)))
                    continue
                result.vectors.append(vec)
                if out_fh:
                    out_fh.write(embedding_to_line(vec) + "\n")
                if progress:
                    progress(traj.traj_id)
            return result

        batch: list[Trajectory] = []
        for traj in list(trajs) + [None]:  # None flushes the tail
            if traj is not None:
                batch.append(traj)
                if len(batch) < batch_size:
                    continue
            if not batch:
                continue
            texts = [serialize_trajectory(t, cfg) for t in batch]
            try:
                body = remote_embed_request(
                    backend.endpoint, texts, pooling="mean", layer=backend.layer,
                    token=token, max_retries=max_retries, backoff_s=backoff_s,
                )
                pooled = [np.asarray(e, dtype=float) for e in body["embeddings"]]
                pairs = list(zip(batch, pooled))
            except RemoteUnavailable:
                # isolate the failing text(s)
                pairs = []
                for t, text in zip(batch, texts):
                    try:
                        body = remote_embed_request(
                            backend.endpoint, [text], pooling="mean",
                            layer=backend.layer, token=token,
                            max_retries=max_retries, backoff_s=backoff_s,
                        )
                        pairs.append((t, np.asarray(body["embeddings"][0],
                                                    dtype=float)))
                    except RemoteUnavailable as exc:
                        result.failures.append((t.traj_id, str(exc)))
            for t, arr in pairs:
                try:
                    _check_dim(arr.shape[0], backend)
                    vec = EmbeddingVector(traj_id=t.traj_id, dim=arr.shape[0],
                                          values=tuple(arr.tolist()))
                except Exception as exc:
                    result.failures.append((t.traj_id, str(exc)))
                    continue
                result.vectors.append(vec)
                if out_fh:
                    out_fh.write(embedding_to_line(vec) + "\n")
                if progress:
                    progress(t.traj_id)
            batch = []
        return result
    finally:
        if out_fh:
            out_fh.close()


# --- embedding store JSONL ---

def embedding_to_line(vec: EmbeddingVector) -> str:
    return json.dumps(
        {"traj_id": vec.traj_id, "dim": vec.dim, "values": list(vec.values)},
        separators=(",", ":"),
    )


def write_embeddings(path: str | os.PathLike,
                     vectors: Iterable[EmbeddingVector]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for vec in vectors:
            fh.write(embedding_to_line(vec) + "\n")
            n += 1
    return n


def read_embeddings(path: str | os.PathLike) -> dict[str, EmbeddingVector]:
    out: dict[str, EmbeddingVector] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            vec = EmbeddingVector(traj_id=obj["traj_id"], dim=int(obj["dim"]),
                                  values=tuple(obj["values"]))
            out[vec.traj_id] = vec
    return out


def embeddings_as_arrays(
    store: Mapping[str, EmbeddingVector]
) -> dict[str, np.ndarray]:
    return {k: v.array() for k, v in store.items()}
