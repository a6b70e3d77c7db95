"""Fixed-dimension unit-norm embeddings of canonical flow JSON.

Two embedders share one contract: a remote client speaking the common
embeddings-API wire shape, and a fully offline signed-feature-hash embedder
used everywhere a run must be deterministic without network access.
"""

from __future__ import annotations

import hashlib
import re
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatchError, EmptyBatchError, RemoteUnavailableError

DEFAULT_DIM = 384
_TOKEN_RE = re.compile(r"[0-9A-Za-z]+")


@dataclass(frozen=True)
class FlowEmbedding:
    """Unit-norm float32 vector key; zero-input sentinel is all-zeros and flagged."""

    values: np.ndarray
    dim: int
    is_zero: bool = False

    @staticmethod
    def from_vector(vector: np.ndarray, dim: int) -> "FlowEmbedding":
        if vector.shape != (dim,):
            raise DimensionMismatchError(dim, int(vector.shape[0]))
        v64 = np.asarray(vector, dtype=np.float64)
        if not np.all(np.isfinite(v64)):
            raise ValueError("embedding components must be finite")
        norm = float(np.linalg.norm(v64))
        if norm == 0.0:
            return FlowEmbedding(
                values=np.zeros(dim, dtype=np.float32), dim=dim, is_zero=True
            )
        return FlowEmbedding(
            values=(v64 / norm).astype(np.float32), dim=dim, is_zero=False
        )


def token_hash(token: str, seed: int = 0) -> int:
    """Stable 64-bit token hash: sha256 of "<seed>:<token>", first 8 bytes big-endian.

    The interpreter's builtin hash is salted per process and cannot back a
    persistent index.
    """
    digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def hash_embed(text: str, dim: int, seed: int = 0) -> FlowEmbedding:
    """Signed feature hashing over alphanumeric tokens.

    Each token adds +1 or -1 (sign from the second hash bit) to the bucket
    `token_hash(token) mod dim`; the accumulator is L2-normalized. Text with
    no tokens, or full cancellation, yields the flagged zero sentinel.
    """
    if dim < 2:
        raise ValueError("dim must be at least 2")
    acc = np.zeros(dim, dtype=np.float64)
    for token in _TOKEN_RE.findall(text):
        h = token_hash(token, seed)
        sign = 1.0 if (h >> 1) & 1 == 0 else -1.0
        acc[h % dim] += sign
    return FlowEmbedding.from_vector(acc, dim)


class HashEmbedder:
    """Deterministic offline embedder; safe for concurrent use once built."""

    kind = "hash"

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed

    @property
    def fingerprint(self) -> str:
        return f"hash:dim={self.dim}:seed={self.seed}"

    def embed(self, text: str) -> FlowEmbedding:
        if not text:
            raise ValueError("embed requires non-empty text")
        return hash_embed(text, self.dim, self.seed)

    def embed_batch(self, texts: Sequence[str]) -> list[FlowEmbedding]:
        if not texts:
            raise EmptyBatchError("embed_batch requires a non-empty list")
        return [self.embed(t) for t in texts]


def _default_post(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    import requests

    response = requests.post(url, json=payload, headers=headers, timeout=timeout)
    response.raise_for_status()
    return response.json()


class RemoteEmbedder:
    """Client for a remote embedding service.

    Wire format: POST {"model": name, "input": [text, ...]} and read
    {"data": [{"embedding": [...]}, ...]}. Responses are L2-normalized on
    arrival so stored keys and queries share one convention.
    """

    kind = "remote"

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        dim: int = DEFAULT_DIM,
        batch_size: int = 64,
        api_key: str | None = None,
        retries: int = 3,
        backoff_s: float = 0.5,
        timeout_s: float = 60.0,
        transport: Callable[[str, dict, dict, float], dict] | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.endpoint = endpoint
        self.model_name = model_name
        self.dim = dim
        self.batch_size = batch_size
        self.retries = retries
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        self._headers = {"Content-Type": "application/json"}
        if api_key:
            self._headers["Authorization"] = f"Bearer {api_key}"
        self._post = transport or _default_post
        self._sleep = sleeper

    @property
    def fingerprint(self) -> str:
        return f"remote:model={self.model_name}:dim={self.dim}"

    def _request(self, texts: Sequence[str]) -> list[FlowEmbedding]:
        payload = {"model": self.model_name, "input": list(texts)}
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                body = self._post(self.endpoint, payload, self._headers, self.timeout_s)
                break
            except Exception as exc:  # transport failures are retried uniformly
                last_error = exc
                if attempt + 1 < self.retries:
                    self._sleep(self.backoff_s * (2**attempt))
        else:
            raise RemoteUnavailableError(
                f"embedding service failed after {self.retries} attempts: {last_error}"
            )
        rows = body["data"]
        if len(rows) != len(texts):
            raise RemoteUnavailableError(
                f"service returned {len(rows)} embeddings for {len(texts)} inputs"
            )
        out = []
        for row in rows:
            vector = np.asarray(row["embedding"], dtype=np.float64)
            if vector.shape != (self.dim,):
                raise DimensionMismatchError(self.dim, int(vector.shape[0]))
            out.append(FlowEmbedding.from_vector(vector, self.dim))
        return out

    def embed(self, text: str) -> FlowEmbedding:
        if not text:
            raise ValueError("embed requires non-empty text")
        return self._request([text])[0]

    def embed_batch(self, texts: Sequence[str]) -> list[FlowEmbedding]:
        if not texts:
            raise EmptyBatchError("embed_batch requires a non-empty list")
        out: list[FlowEmbedding] = []
        for start in range(0, len(texts), self.batch_size):
            chunk = texts[start : start + self.batch_size]
            try:
                out.extend(self._request(chunk))
            except RemoteUnavailableError as exc:
                # partial failure aborts the whole batch, naming where it broke
                raise RemoteUnavailableError(
                    f"batch aborted at input {start}: {exc}"
                ) from exc
        return out


class CachingEmbedder:
    """Per-run memo over an inner embedder, keyed by the exact input text.

    Results are deterministic either way; the cache only changes how many
    remote calls a run makes.
    """

    def __init__(self, inner):
        self._inner = inner
        self._cache: dict[str, FlowEmbedding] = {}

    @property
    def kind(self) -> str:
        return self._inner.kind

    @property
    def dim(self) -> int:
        return self._inner.dim

    @property
    def fingerprint(self) -> str:
        return self._inner.fingerprint

    def embed(self, text: str) -> FlowEmbedding:
        hit = self._cache.get(text)
        if hit is None:
            hit = self._inner.embed(text)
            self._cache[text] = hit
        return hit

    def embed_batch(self, texts: Sequence[str]) -> list[FlowEmbedding]:
        if not texts:
            raise EmptyBatchError("embed_batch requires a non-empty list")
        return [self.embed(t) for t in texts]
