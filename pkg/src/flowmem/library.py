"""The persistent experience library: an exact flat cosine index.

Entries are append-only: nothing is ever mutated or removed, so the store
only grows and a replayed run reproduces it bit for bit. Vectors live in one
contiguous float32 block; retrieval is an exact scan (argmax of dot products
over unit-norm keys), which keeps a brute-force check an equality test.

File layout (single file, little-endian):
    magic "FLOWEXPL" | u32 version | u32 dim | u64 count
    u16 fingerprint length | fingerprint bytes (utf-8)
    32-byte sha256 over header fields above plus the payload
    payload: count*dim float32 vectors, then per entry u32 length + JSON
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .embedding import FlowEmbedding
from .errors import (
    ChecksumFailureError,
    DimensionHeaderMismatchError,
    DimensionMismatchError,
    FormatVersionMismatchError,
    ReadOnlyLibraryError,
)
from .labels import ClassLabel, label_from_json, label_to_json
from .rules import RuleText

MAGIC = b"FLOWEXPL"
FORMAT_VERSION = 1
_INITIAL_CAPACITY = 64


@dataclass(frozen=True)
class ExperienceEntry:
    entry_id: int
    key: FlowEmbedding
    rule: RuleText
    predicted: ClassLabel
    actual: ClassLabel
    source_flow_id: int
    created_seq: int

    def metadata_json(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "rule": self.rule.to_json(),
            "predicted": label_to_json(self.predicted),
            "actual": label_to_json(self.actual),
            "source_flow_id": self.source_flow_id,
            "created_seq": self.created_seq,
        }


@dataclass(frozen=True)
class Hit:
    entry: ExperienceEntry
    similarity: float


class NoContext:
    """The empty retrieval outcome: nothing was similar enough to inject."""

    _instance: "NoContext | None" = None

    def __new__(cls) -> "NoContext":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NoContext()"


NO_CONTEXT = NoContext()
RetrievalResult = Hit | NoContext


@dataclass
class LibraryStats:
    per_class_rule_counts: dict[str, int]
    total: int

    def to_json(self) -> dict:
        return {
            "classes": [
                {"class": name, "rules": count}
                for name, count in self.per_class_rule_counts.items()
            ],
            "total": self.total,
        }


def cosine(a: FlowEmbedding, b: FlowEmbedding) -> float:
    """Cosine similarity in float64; a zero-sentinel side pins it to -1."""
    if a.dim != b.dim:
        raise DimensionMismatchError(a.dim, b.dim)
    if a.is_zero or b.is_zero:
        return -1.0
    va = a.values.astype(np.float64)
    vb = b.values.astype(np.float64)
    return float(np.dot(va, vb) / (np.linalg.norm(va) * np.linalg.norm(vb)))


class ExperienceLibrary:
    """Append-only store of (embedding key, rule, error pair) entries."""

    def __init__(self, dim: int, embedder_fingerprint: str = "", read_only: bool = False):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.embedder_fingerprint = embedder_fingerprint
        self.read_only = read_only
        self._vectors = np.zeros((_INITIAL_CAPACITY, dim), dtype=np.float32)
        self._zero_flags = np.zeros(_INITIAL_CAPACITY, dtype=bool)
        self._entries: list[ExperienceEntry] = []
        self._count = 0

    @property
    def size(self) -> int:
        return self._count

    def __len__(self) -> int:
        return self._count

    def entries(self) -> tuple[ExperienceEntry, ...]:
        return tuple(self._entries)

    def entry(self, entry_id: int) -> ExperienceEntry:
        return self._entries[entry_id]

    def vector(self, entry_id: int) -> np.ndarray:
        if entry_id < 0 or entry_id >= self._count:
            raise IndexError(entry_id)
        return self._vectors[entry_id].copy()

    def _grow(self) -> None:
        capacity = self._vectors.shape[0]
        if self._count < capacity:
            return
        new_vectors = np.zeros((capacity * 2, self.dim), dtype=np.float32)
        new_vectors[:capacity] = self._vectors
        new_flags = np.zeros(capacity * 2, dtype=bool)
        new_flags[:capacity] = self._zero_flags
        self._vectors = new_vectors
        self._zero_flags = new_flags

    def insert(
        self,
        key: FlowEmbedding,
        rule: RuleText,
        predicted: ClassLabel,
        actual: ClassLabel,
        source_flow_id: int,
        created_seq: int | None = None,
    ) -> int:
        """Append one entry; existing entries are untouched by construction."""
        if self.read_only:
            raise ReadOnlyLibraryError("library opened read-only")
        if key.dim != self.dim:
            raise DimensionMismatchError(self.dim, key.dim)
        self._grow()
        entry_id = self._count
        entry = ExperienceEntry(
            entry_id=entry_id,
            key=key,
            rule=rule,
            predicted=predicted,
            actual=actual,
            source_flow_id=source_flow_id,
            created_seq=entry_id if created_seq is None else created_seq,
        )
        self._vectors[entry_id] = key.values
        self._zero_flags[entry_id] = key.is_zero
        self._entries.append(entry)
        # count is bumped last so concurrent readers never see a partial row
        self._count = entry_id + 1
        return entry_id

    def retrieve(self, query: FlowEmbedding, tau: float) -> RetrievalResult:
        """Top-1 threshold retrieval: best entry if its similarity >= tau.

        Ties break toward the smallest entry id. A zero-sentinel query can
        never match anything.
        """
        if query.dim != self.dim:
            raise DimensionMismatchError(self.dim, query.dim)
        if not -1.0 <= tau <= 1.0:
            raise ValueError("tau must lie in [-1, 1]")
        n = self._count
        if n == 0 or query.is_zero:
            return NO_CONTEXT
        # einsum reduces every row in the same order, so bitwise-equal keys
        # get bitwise-equal similarities and ties resolve by entry id; the
        # BLAS matvec does not guarantee that for its tail rows
        sims = np.einsum(
            "ij,j->i", self._vectors[:n].astype(np.float64), query.values.astype(np.float64)
        )
        flags = self._zero_flags[:n]
        if flags.any():
            sims[flags] = -1.0
        best = int(np.argmax(sims))
        best_sim = float(sims[best])
        if best_sim >= tau:
            return Hit(entry=self._entries[best], similarity=best_sim)
        return NO_CONTEXT

    def stats(self) -> LibraryStats:
        """Rule counts grouped by the entry's actual (ground-truth) label.

        Off-schema labels keep their literal text; buckets appear in
        first-insertion order so replays render identically.
        """
        counts: dict[str, int] = {}
        display: dict[str, str] = {}
        for entry in self._entries:
            text = entry.actual.display()
            key = text.casefold()
            if key not in counts:
                counts[key] = 0
                display[key] = text
            counts[key] += 1
        return LibraryStats(
            per_class_rule_counts={display[k]: v for k, v in counts.items()},
            total=self._count,
        )

    # --- persistence -------------------------------------------------------

    def _serialize(self) -> bytes:
        vector_bytes = np.ascontiguousarray(self._vectors[: self._count]).tobytes()
        meta_chunks = []
        for entry in self._entries:
            blob = json.dumps(
                entry.metadata_json(), sort_keys=True, separators=(",", ":")
            ).encode("utf-8")
            meta_chunks.append(struct.pack("<I", len(blob)) + blob)
        payload = vector_bytes + b"".join(meta_chunks)
        fp = self.embedder_fingerprint.encode("utf-8")
        head = (
            MAGIC
            + struct.pack("<I", FORMAT_VERSION)
            + struct.pack("<I", self.dim)
            + struct.pack("<Q", self._count)
            + struct.pack("<H", len(fp))
            + fp
        )
        checksum = hashlib.sha256(head + payload).digest()
        return head + checksum + payload

    def save(self, path: str) -> None:
        data = self._serialize()
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)

    def content_digest(self) -> str:
        return hashlib.sha256(self._serialize()).hexdigest()

    @classmethod
    def load(
        cls, path: str, expected_dim: int | None = None, read_only: bool = False
    ) -> "ExperienceLibrary":
        with open(path, "rb") as fh:
            data = fh.read()
        if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
            raise FormatVersionMismatchError("not a library file")
        offset = len(MAGIC)
        (version,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if version != FORMAT_VERSION:
            raise FormatVersionMismatchError(
                f"format version {version} unsupported (expected {FORMAT_VERSION})"
            )
        try:
            (dim,) = struct.unpack_from("<I", data, offset)
            offset += 4
            (count,) = struct.unpack_from("<Q", data, offset)
            offset += 8
            (fp_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            fingerprint = data[offset : offset + fp_len].decode("utf-8")
            offset += fp_len
            stored_checksum = data[offset : offset + 32]
            offset += 32
            if len(stored_checksum) != 32:
                raise ChecksumFailureError("file truncated inside header")
        except struct.error as exc:
            raise ChecksumFailureError(f"file truncated inside header: {exc}") from exc
        head = data[: offset - 32]
        payload = data[offset:]
        if hashlib.sha256(head + payload).digest() != stored_checksum:
            raise ChecksumFailureError("checksum mismatch: file truncated or corrupted")
        if expected_dim is not None and dim != expected_dim:
            raise DimensionHeaderMismatchError(expected_dim, dim)

        vector_bytes = count * dim * 4
        if len(payload) < vector_bytes:
            raise ChecksumFailureError("vector block shorter than header count")
        vectors = np.frombuffer(payload[:vector_bytes], dtype="<f4").reshape(count, dim)

        library = cls(dim=dim, embedder_fingerprint=fingerprint, read_only=False)
        cursor = vector_bytes
        for i in range(count):
            (length,) = struct.unpack_from("<I", payload, cursor)
            cursor += 4
            meta = json.loads(payload[cursor : cursor + length].decode("utf-8"))
            cursor += length
            row = np.array(vectors[i], dtype=np.float32)
            key = FlowEmbedding(
                values=row, dim=dim, is_zero=bool(not row.any())
            )
            library.insert(
                key=key,
                rule=RuleText.from_json(meta["rule"]),
                predicted=label_from_json(meta["predicted"]),
                actual=label_from_json(meta["actual"]),
                source_flow_id=meta["source_flow_id"],
                created_seq=meta["created_seq"],
            )
        library.read_only = read_only
        return library


def file_digest(path: str) -> str:
    """sha256 of a file on disk; used to assert evaluation never writes."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
