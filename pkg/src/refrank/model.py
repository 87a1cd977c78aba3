"""Dual-encoder heads and the encode/score composition.

The query side runs render -> tokenize -> chunk -> embed -> aggregate ->
affine projection; the key side is a single-chunk embed with no heads on
top. Scores are plain dot products. Head parameters initialize so that an
untrained learned-mean model is exactly zero-shot mean pooling.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aggregate import ScorerParams, Strategy, aggregate
from .corpus import Corpus, PaperRecord, TalkRecord
from .embed import (
    FORMAT_VERSION,
    MAGIC,
    ChecksumMismatch,
    FormatVersionMismatch,
    StoreEmbedder,
)
from .errors import DataError, DimMismatch, MissingField
from .textprep import TextPrepConfig, chunk, render_text, tokenize

CHECKPOINT_VERSION = 1


def _padded_identity(rows: int, cols: int) -> np.ndarray:
    mat = np.zeros((rows, cols), dtype=np.float64)
    k = min(rows, cols)
    mat[:k, :k] = np.eye(k)
    return mat


@dataclass
class DualEncoderHeads:
    """Trainable parameters of the query encoder.

    scorer: per-chunk linear scorer, used only by the learned-mean strategy.
    P, p0: affine projection mapping aggregated query vectors (query_dim)
    into key space (key_dim); None when the projection is disabled, which
    requires query_dim == key_dim.
    """

    strategy: Strategy
    query_dim: int
    key_dim: int
    scorer: ScorerParams
    P: np.ndarray | None = None
    p0: np.ndarray | None = None

    @classmethod
    def init(cls, strategy: Strategy, query_dim: int, key_dim: int, projection: bool = True):
        if not projection and query_dim != key_dim:
            raise DimMismatch(
                f"projection disabled but query_dim {query_dim} != key_dim {key_dim}"
            )
        return cls(
            strategy=strategy,
            query_dim=query_dim,
            key_dim=key_dim,
            scorer=ScorerParams.zeros(query_dim),
            P=_padded_identity(key_dim, query_dim) if projection else None,
            p0=np.zeros(key_dim, dtype=np.float64) if projection else None,
        )

    @property
    def projection_enabled(self) -> bool:
        return self.P is not None

    def project(self, a: np.ndarray) -> np.ndarray:
        if self.P is None:
            return a
        return self.P @ a + self.p0

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays, keyed by stable names (insertion order fixed)."""
        params = {}
        if self.strategy == Strategy.LEARNED_MEAN:
            params["scorer.w"] = self.scorer.w
            params["scorer.b"] = self.scorer.b
        if self.P is not None:
            params["P"] = self.P
            params["p0"] = self.p0
        return params

    def copy(self) -> "DualEncoderHeads":
        return DualEncoderHeads(
            strategy=self.strategy,
            query_dim=self.query_dim,
            key_dim=self.key_dim,
            scorer=self.scorer.copy(),
            P=None if self.P is None else self.P.copy(),
            p0=None if self.p0 is None else self.p0.copy(),
        )


def query_chunk_vectors(talk: TalkRecord, prep: TextPrepConfig, embedder) -> np.ndarray:
    """Per-chunk embeddings of a talk, (n_chunks, dim)."""
    if isinstance(embedder, StoreEmbedder):
        rows = []
        while embedder.has(chunk_id(talk.id, len(rows))):
            rows.append(embedder.lookup(chunk_id(talk.id, len(rows))))
        if not rows:
            raise DataError(f"no chunk embeddings stored for talk {talk.id!r}")
        return np.vstack(rows)
    text = render_text(talk, prep.query_template, prep.separator)
    chunks = chunk(tokenize(text), prep.chunk_size, prep.chunk_overlap)
    return np.vstack([embedder.embed_tokens(c) for c in chunks.chunks])


def chunk_id(talk_id: str, index: int) -> str:
    return f"{talk_id}#{index:04d}"


def encode_query(talk: TalkRecord, heads: DualEncoderHeads, prep: TextPrepConfig, embedder) -> np.ndarray:
    mat = query_chunk_vectors(talk, prep, embedder)
    a, _ = aggregate(mat, heads.strategy, heads.scorer)
    return heads.project(a)


def encode_key(paper, prep: TextPrepConfig, embedder) -> np.ndarray:
    """Key pipeline: render key template, embed as a single chunk, no heads."""
    if isinstance(embedder, StoreEmbedder):
        return embedder.lookup(paper.id)
    text = render_text(paper, prep.key_template, prep.separator)
    return embedder.embed_tokens(tokenize(text))


def score(q: np.ndarray, k: np.ndarray) -> float:
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape != k.shape or q.ndim != 1:
        raise DimMismatch(f"score() needs equal-length vectors, got {q.shape} and {k.shape}")
    return float(q @ k)


def score_batch(queries: np.ndarray, keys: np.ndarray) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    K = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    if Q.shape[1] != K.shape[1]:
        raise DimMismatch(f"query dim {Q.shape[1]} != key dim {K.shape[1]}")
    return Q @ K.T


@dataclass
class EncodedCorpus:
    """Frozen embeddings the heads are trained and evaluated over."""

    query_chunks: dict[str, np.ndarray]  # talk_id -> (n_chunks, query_dim)
    paper_ids: list[str]
    key_matrix: np.ndarray  # (n_papers, key_dim) float64
    talk_abstract_keys: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def query_dim(self) -> int:
        first = next(iter(self.query_chunks.values()))
        return first.shape[1]

    @property
    def key_dim(self) -> int:
        return self.key_matrix.shape[1]

    def key_row(self, paper_id: str) -> int:
        return self._key_index[paper_id]

    def __post_init__(self):
        self._key_index = {pid: i for i, pid in enumerate(self.paper_ids)}


def encode_corpus(
    corpus: Corpus,
    prep: TextPrepConfig,
    embedder,
    include_talk_abstracts: bool = False,
) -> EncodedCorpus:
    query_chunks = {
        tid: query_chunk_vectors(talk, prep, embedder) for tid, talk in corpus.talks.items()
    }
    paper_ids = list(corpus.papers)
    key_matrix = np.vstack(
        [encode_key(corpus.papers[pid], prep, embedder) for pid in paper_ids]
    ) if paper_ids else np.zeros((0, embedder.dim))
    abstract_keys = {}
    if include_talk_abstracts:
        for tid, talk in corpus.talks.items():
            if not talk.abstract:
                raise MissingField(f"talk {tid!r} has no abstract (required by the adapt stage)")
            abstract_keys[tid] = encode_key(talk, prep, embedder)
    return EncodedCorpus(
        query_chunks=query_chunks,
        paper_ids=paper_ids,
        key_matrix=key_matrix,
        talk_abstract_keys=abstract_keys,
    )


def save_checkpoint(heads: DualEncoderHeads, path, config_hash: str = "", extra: dict | None = None) -> None:
    """JSON header line, then the parameters flattened into one float32 row
    in the embedding-store numeric container."""
    arrays = heads.parameters()
    shapes = {name: list(arr.shape) for name, arr in arrays.items()}
    header = {
        "format": "refrank-checkpoint",
        "version": CHECKPOINT_VERSION,
        "strategy": heads.strategy.value,
        "query_dim": heads.query_dim,
        "key_dim": heads.key_dim,
        "projection": heads.projection_enabled,
        "param_shapes": shapes,
        "config_hash": config_hash,
    }
    if extra:
        header.update(extra)
    flat = (
        np.concatenate([arr.reshape(-1) for arr in arrays.values()])
        if arrays
        else np.zeros(0, dtype=np.float64)
    )
    payload = flat.astype("<f4").tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(MAGIC + struct.pack("<HIQ", FORMAT_VERSION, max(flat.size, 1), 1 if flat.size else 0))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_checkpoint(path) -> tuple[DualEncoderHeads, dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatVersionMismatch(f"{path}: missing checkpoint header")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatVersionMismatch(f"{path}: bad checkpoint header: {exc}") from exc
    if header.get("format") != "refrank-checkpoint":
        raise FormatVersionMismatch(f"{path}: not a refrank checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatVersionMismatch(f"{path}: checkpoint version {header.get('version')}")
    body = raw[nl + 1 :]
    head_len = len(MAGIC) + struct.calcsize("<HIQ")
    if len(body) < head_len + 4 or body[: len(MAGIC)] != MAGIC:
        raise ChecksumMismatch(f"{path}: corrupt parameter payload")
    _, dim, count = struct.unpack_from("<HIQ", body, len(MAGIC))
    payload_len = dim * count * 4
    if len(body) != head_len + payload_len + 4:
        raise ChecksumMismatch(f"{path}: parameter payload truncated")
    payload = body[head_len : head_len + payload_len]
    (crc_stored,) = struct.unpack_from("<I", body, head_len + payload_len)
    if (zlib.crc32(payload) & 0xFFFFFFFF) != crc_stored:
        raise ChecksumMismatch(f"{path}: CRC32 mismatch in parameter payload")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)

    heads = DualEncoderHeads.init(
        Strategy.parse(header["strategy"]),
        header["query_dim"],
        header["key_dim"],
        projection=header["projection"],
    )
    arrays = heads.parameters()
    expect = {name: tuple(shape) for name, shape in header["param_shapes"].items()}
    if set(expect) != set(arrays) or any(arrays[n].shape != expect[n] for n in arrays):
        raise DataError(f"{path}: parameter layout does not match header")
    offset = 0
    for name, arr in arrays.items():
        size = arr.size
        arr[...] = flat[offset : offset + size].reshape(arr.shape)
        offset += size
    if offset != flat.size:
        raise DataError(f"{path}: payload holds {flat.size} values, layout needs {offset}")
    return heads, header
