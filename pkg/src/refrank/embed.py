"""Fixed-dimension text embeddings and their on-disk store.

Two embedder kinds sit behind one contract: a deterministic signed
feature-hashing embedder (the reference backend, no model downloads), and
a lookup embedder backed by a store file of externally precomputed
vectors. Stores persist as a small binary container with a CRC32 footer
plus a JSONL id sidecar.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimMismatch
from . import textprep

MAGIC = b"RFRK"
FORMAT_VERSION = 1

REFERENCE_HASH = "reference-hash"
EXTERNAL_FILE = "external-file"


class StoreError(DataError):
    pass


class FormatVersionMismatch(StoreError):
    pass


class ChecksumMismatch(StoreError):
    pass


class MissingEmbedding(StoreError):
    """An id requested from an external-file embedder is absent."""


@dataclass(frozen=True)
class EmbedderSpec:
    kind: str = REFERENCE_HASH
    dim: int = 384
    seed: int = 0
    path: str = ""  # store file, external-file kind only

    def __post_init__(self):
        if self.kind not in (REFERENCE_HASH, EXTERNAL_FILE):
            raise DataError(f"unknown embedder kind {self.kind!r}")
        if self.dim < 2:
            raise DataError(f"embedding dim must be >= 2, got {self.dim}")


class HashingEmbedder:
    """Signed feature hashing of tokens into `dim` buckets, L2-normalized.

    Each token hashes (keyed by the seed) to a bucket index and a sign;
    counts accumulate and the result is normalized. Deterministic across
    processes and platforms. Empty token lists embed to the zero vector.
    """

    def __init__(self, dim: int = 384, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._key = struct.pack("<q", seed)
        self._memo: dict[str, tuple[int, float]] = {}

    def _slot(self, token: str) -> tuple[int, float]:
        hit = self._memo.get(token)
        if hit is None:
            digest = hashlib.blake2b(token.encode("utf-8"), key=self._key, digest_size=8).digest()
            h = int.from_bytes(digest, "little")
            hit = (h % self.dim, 1.0 if (h >> 63) & 1 else -1.0)
            self._memo[token] = hit
        return hit

    def embed_tokens(self, tokens: list[str]) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            bucket, sign = self._slot(tok)
            v[bucket] += sign
        norm = float(np.linalg.norm(v))
        if norm > 0.0:
            v /= norm
        return v

    def embed_text(self, text: str) -> np.ndarray:
        return self.embed_tokens(textprep.tokenize(text))


class StoreEmbedder:
    """Embeddings looked up by document/chunk id from a loaded store."""

    def __init__(self, store: "EmbeddingStore"):
        self.store = store
        self.dim = store.dim
        self._row_of = {doc_id: i for i, doc_id in enumerate(store.ids)}

    def lookup(self, doc_id: str) -> np.ndarray:
        row = self._row_of.get(doc_id)
        if row is None:
            raise MissingEmbedding(f"id {doc_id!r} not present in embedding store")
        return self.store.matrix[row].astype(np.float64)

    def has(self, doc_id: str) -> bool:
        return doc_id in self._row_of


def make_embedder(spec: EmbedderSpec):
    if spec.kind == REFERENCE_HASH:
        return HashingEmbedder(dim=spec.dim, seed=spec.seed)
    store = load_store(spec.path)
    if store.dim != spec.dim:
        raise DimMismatch(f"store dim {store.dim} != spec dim {spec.dim}")
    return StoreEmbedder(store)


def embed_text(text: str, spec: EmbedderSpec) -> np.ndarray:
    return make_embedder(spec).embed_text(text)


def embed_chunks(chunk_set: textprep.ChunkSet, spec: EmbedderSpec) -> list[np.ndarray]:
    if not chunk_set.chunks:
        raise DataError("empty chunk set")
    embedder = make_embedder(spec)
    return [embedder.embed_tokens(c) for c in chunk_set.chunks]


@dataclass
class EmbeddingStore:
    dim: int
    ids: list[str]
    matrix: np.ndarray  # (count, dim) float32
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2 or self.matrix.shape != (len(self.ids), self.dim):
            raise DimMismatch(
                f"matrix shape {self.matrix.shape} != ({len(self.ids)}, {self.dim})"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate ids in embedding store")

    def __len__(self) -> int:
        return len(self.ids)


def concat_stores(a: EmbeddingStore, b: EmbeddingStore) -> EmbeddingStore:
    if a.dim != b.dim:
        raise DimMismatch(f"cannot merge stores of dim {a.dim} and {b.dim}")
    return EmbeddingStore(
        dim=a.dim,
        ids=a.ids + b.ids,
        matrix=np.vstack([a.matrix, b.matrix]),
        provenance=dict(a.provenance),
    )


def _sidecar_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    return Path(str(p) + ".ids.jsonl"), Path(str(p) + ".meta.json")


def save_store(store: EmbeddingStore, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = store.matrix.astype("<f4").tobytes()
    header = MAGIC + struct.pack("<HIQ", FORMAT_VERSION, store.dim, len(store.ids))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
    ids_path, meta_path = _sidecar_paths(path)
    with open(ids_path, "w", encoding="utf-8") as fh:
        for row, doc_id in enumerate(store.ids):
            fh.write(json.dumps({"row": row, "id": doc_id}, ensure_ascii=False) + "\n")
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(store.provenance, fh, ensure_ascii=False, sort_keys=True)
        fh.write("\n")


def load_store(path) -> EmbeddingStore:
    path = Path(path)
    if not path.exists():
        raise StoreError(f"store file not found: {path}")
    raw = path.read_bytes()
    head_len = len(MAGIC) + struct.calcsize("<HIQ")
    if len(raw) < head_len + 4:
        raise ChecksumMismatch(f"{path}: file shorter than header+footer")
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatVersionMismatch(f"{path}: bad magic bytes")
    version, dim, count = struct.unpack_from("<HIQ", raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    payload_len = count * dim * 4
    if len(raw) != head_len + payload_len + 4:
        raise ChecksumMismatch(f"{path}: payload truncated or trailing bytes")
    payload = raw[head_len : head_len + payload_len]
    (crc_stored,) = struct.unpack_from("<I", raw, head_len + payload_len)
    if (zlib.crc32(payload) & 0xFFFFFFFF) != crc_stored:
        raise ChecksumMismatch(f"{path}: CRC32 mismatch")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()

    ids_path, meta_path = _sidecar_paths(path)
    if not ids_path.exists():
        raise StoreError(f"id sidecar not found: {ids_path}")
    ids: list[str] = [""] * count
    seen = 0
    with open(ids_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            row = obj["row"]
            if not 0 <= row < count:
                raise StoreError(f"{ids_path}: row {row} out of range for count {count}")
            ids[row] = obj["id"]
            seen += 1
    if seen != count:
        raise StoreError(f"{ids_path}: {seen} id rows for {count} vectors")
    provenance = {}
    if meta_path.exists():
        provenance = json.loads(meta_path.read_text(encoding="utf-8"))
    return EmbeddingStore(dim=dim, ids=ids, matrix=matrix, provenance=provenance)
