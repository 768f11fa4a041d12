"""Chunk embeddings from a pluggable provider, and their aggregation into document vectors.

Two providers exist:

* ``deterministic_local`` -- a signed feature-hashing projection of the chunk's
  bag of words. Each token is hashed (BLAKE2b) to one of ``D`` buckets and to a
  +1/-1 sign taken from a second, independent slice of the digest; counts are
  accumulated and the vector is L2-normalized. Needs no model and is stable
  across machines and Python versions.
* ``remote_http`` -- ``POST {endpoint}/embed`` with ``{"texts": [...]}``,
  answered by ``{"embeddings": [[...], ...]}`` in request order.
"""

from __future__ import annotations

import hashlib
import logging
import os
import tempfile
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

from .textprep import Chunk

log = logging.getLogger(__name__)

LOCAL = "deterministic_local"
REMOTE = "remote_http"
DEFAULT_DIMENSION = {LOCAL: 256, REMOTE: 768}
NORM_TOL = 1e-9


class EmbeddingError(RuntimeError):
    pass


class EmbeddingTransportError(EmbeddingError):
    """Remote call failed after all retries; safe to retry later."""

    retryable = True

    def __init__(self, message: str, chunk_indices: Sequence[int]):
        super().__init__(f"{message} (chunks {list(chunk_indices)})")
        self.chunk_indices = list(chunk_indices)


class EmbeddingDimensionError(EmbeddingError):
    retryable = False


class NoEmbeddableContent(EmbeddingError):
    pass


@dataclass
class EmbeddingVector:
    values: np.ndarray
    normalized: bool = False
    degenerate: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("embedding must be a 1-D vector")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding has non-finite entries")

    @property
    def dimension(self) -> int:
        return int(self.values.size)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def normalize(v: EmbeddingVector | np.ndarray) -> EmbeddingVector:
    values = v.values if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=float)
    n = float(np.linalg.norm(values))
    if n == 0.0:
        return EmbeddingVector(np.zeros_like(values), normalized=False, degenerate=True)
    return EmbeddingVector(values / n, normalized=True)


@dataclass
class EmbeddingProviderConfig:
    kind: str = LOCAL
    dimension: int | None = None
    endpoint_url: str | None = None
    batch_size: int = 16
    cache_dir: str | None = None
    max_workers: int = 1
    timeout: float = 60.0
    attempts: int = 3
    backoff: float = 0.5
    model: str = ""

    def __post_init__(self):
        if self.kind not in DEFAULT_DIMENSION:
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.dimension is None:
            self.dimension = DEFAULT_DIMENSION[self.kind]
        if self.dimension < 2:
            raise ValueError("embedding dimension must be >= 2")
        if self.kind == REMOTE and not self.endpoint_url:
            raise ValueError("remote_http provider needs endpoint_url")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@lru_cache(maxsize=1 << 18)
def _bucket_sign(token: str, dimension: int) -> tuple[int, int]:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16).digest()
    bucket = int.from_bytes(digest[:8], "little") % dimension
    sign = 1 if digest[8] & 1 else -1
    return bucket, sign


def hash_embed(tokens: Sequence[str], dimension: int) -> EmbeddingVector:
    vec = np.zeros(dimension)
    for token, count in Counter(tokens).items():
        bucket, sign = _bucket_sign(token, dimension)
        vec[bucket] += sign * count
    return normalize(vec)


class EmbeddingCache:
    """One ``.npy`` file per content hash; writes are atomic renames so readers never see partial files."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    @staticmethod
    def key(text: str, config: EmbeddingProviderConfig) -> str:
        h = hashlib.sha256()
        h.update(f"{config.kind}|{config.dimension}|{config.model}|".encode())
        h.update(text.encode("utf-8"))
        return h.hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.npy"

    def get(self, key: str) -> np.ndarray | None:
        path = self._path(key)
        if not path.exists():
            return None
        return np.load(path, allow_pickle=False)

    def put(self, key: str, values: np.ndarray) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        with self._lock:
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                np.save(fh, np.asarray(values, dtype=float), allow_pickle=False)
            os.replace(tmp, path)


class HttpEmbeddingClient:
    def __init__(self, config: EmbeddingProviderConfig, client: httpx.Client | None = None):
        self.config = config
        self._base = config.endpoint_url.rstrip("/")
        self._client = client or httpx.Client(timeout=config.timeout)

    def close(self) -> None:
        self._client.close()

    def embed(self, texts: Sequence[str], chunk_indices: Sequence[int] = ()) -> list[list[float]]:
        last_error = "no attempt made"
        for attempt in range(self.config.attempts):
            if attempt:
                time.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(f"{self._base}/embed", json={"texts": list(texts)})
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
                continue
            if resp.status_code != 200:
                last_error = f"HTTP {resp.status_code}"
                continue
            vectors = resp.json().get("embeddings")
            if not isinstance(vectors, list) or len(vectors) != len(texts):
                raise EmbeddingError("embedding response does not match the request length")
            return vectors
        raise EmbeddingTransportError(f"embedding request failed after {self.config.attempts} attempts: {last_error}", chunk_indices)


def _check_dimension(values: np.ndarray, dimension: int) -> None:
    if values.shape != (dimension,):
        raise EmbeddingDimensionError(f"provider returned dimension {values.shape}, expected {dimension}")


def _from_raw(values: np.ndarray) -> EmbeddingVector:
    degenerate = not np.any(values)
    return EmbeddingVector(values, normalized=False, degenerate=degenerate)


def embed_chunks(
    chunks: Sequence[Chunk],
    provider: EmbeddingProviderConfig,
    client: HttpEmbeddingClient | None = None,
) -> list[EmbeddingVector]:
    """One vector per chunk, in chunk order. Empty chunks come back as degenerate zero vectors."""
    dim = provider.dimension
    if provider.kind == LOCAL:
        out = []
        for ch in chunks:
            v = hash_embed(ch.tokens, dim)
            _check_dimension(v.values, dim)
            out.append(v)
        return out

    cache = EmbeddingCache(provider.cache_dir) if provider.cache_dir else None
    results: list[EmbeddingVector | None] = [None] * len(chunks)
    pending: list[int] = []
    for i, ch in enumerate(chunks):
        if ch.token_count == 0:
            results[i] = EmbeddingVector(np.zeros(dim), degenerate=True)
            continue
        if cache is not None:
            hit = cache.get(EmbeddingCache.key(ch.text, provider))
            if hit is not None:
                _check_dimension(hit, dim)
                results[i] = _from_raw(hit)
                continue
        pending.append(i)

    if pending:
        owns_client = client is None
        client = client or HttpEmbeddingClient(provider)
        batches = [pending[j : j + provider.batch_size] for j in range(0, len(pending), provider.batch_size)]

        def run(batch: list[int]) -> list[list[float]]:
            return client.embed([chunks[i].text for i in batch], chunk_indices=batch)

        try:
            with ThreadPoolExecutor(max_workers=max(1, provider.max_workers)) as pool:
                answers = list(pool.map(run, batches))
        finally:
            if owns_client:
                client.close()
        for batch, vectors in zip(batches, answers):
            for i, raw in zip(batch, vectors):
                values = np.asarray(raw, dtype=float)
                _check_dimension(values, dim)
                if cache is not None:
                    cache.put(EmbeddingCache.key(chunks[i].text, provider), values)
                results[i] = _from_raw(values)
    return results  # type: ignore[return-value]


def document_embedding(chunk_vectors: Sequence[EmbeddingVector]) -> EmbeddingVector:
    """Mean of the non-degenerate chunk vectors, L2-normalized."""
    usable = [v for v in chunk_vectors if not v.degenerate]
    if not usable:
        raise NoEmbeddableContent("document has no embeddable content")
    dims = {v.dimension for v in usable}
    if len(dims) != 1:
        raise EmbeddingDimensionError(f"mixed chunk dimensions {sorted(dims)}")
    mean = np.mean(np.stack([v.values for v in usable]), axis=0)
    out = normalize(mean)
    if out.degenerate:
        raise NoEmbeddableContent("document has no embeddable content")
    return out
