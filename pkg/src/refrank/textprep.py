"""Render record fields into query/key texts, tokenize, and chunk.

The reference tokenizer is whitespace+lowercase; embedders carrying their
own tokenizer receive raw text instead. Chunking covers the token sequence
with fixed-size windows, optionally overlapping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DataError, MissingField

KNOWN_FIELDS = ("title", "year", "transcript", "abstract")

DEFAULT_QUERY_TEMPLATE = ("title", "year", "transcript")
DEFAULT_KEY_TEMPLATE = ("abstract", "title", "year")
DEFAULT_SEPARATOR = ". "
DEFAULT_CHUNK_SIZE = 512


class EmptyInput(DataError):
    pass


@dataclass(frozen=True)
class TextPrepConfig:
    query_template: tuple[str, ...] = DEFAULT_QUERY_TEMPLATE
    key_template: tuple[str, ...] = DEFAULT_KEY_TEMPLATE
    separator: str = DEFAULT_SEPARATOR
    chunk_size: int = DEFAULT_CHUNK_SIZE
    chunk_overlap: int = 0


@dataclass
class ChunkSet:
    chunks: list[list[str]]
    chunk_size: int
    overlap: int

    def __len__(self) -> int:
        return len(self.chunks)

    def flatten(self) -> list[str]:
        """Invert chunking: drop the first `overlap` tokens of every chunk after the first."""
        if not self.chunks:
            return []
        out = list(self.chunks[0])
        for c in self.chunks[1:]:
            out.extend(c[self.overlap:])
        return out


def parse_template(spec: str) -> tuple[str, ...]:
    """Parse a template such as "title+year+transcript" into field selectors."""
    fields = tuple(f.strip().lower() for f in spec.replace(",", "+").split("+") if f.strip())
    if not fields:
        raise DataError(f"empty template: {spec!r}")
    for f in fields:
        if f not in KNOWN_FIELDS:
            raise DataError(f"unknown template field {f!r} (choose from {KNOWN_FIELDS})")
    if len(set(fields)) != len(fields):
        raise DataError(f"repeated field in template: {spec!r}")
    return fields


def render_text(record, template: tuple[str, ...], separator: str = DEFAULT_SEPARATOR) -> str:
    """Join the selected record fields in template order; years render as digits."""
    parts = []
    for name in template:
        value = getattr(record, name, None)
        if value is None or value == "":
            raise MissingField(f"record {getattr(record, 'id', '?')!r} has no field {name!r}")
        parts.append(str(value))
    return separator.join(parts)


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def chunk(tokens: list[str], chunk_size: int = DEFAULT_CHUNK_SIZE, overlap: int = 0) -> ChunkSet:
    if not tokens:
        raise EmptyInput("cannot chunk an empty token sequence")
    if chunk_size < 1:
        raise DataError(f"chunk_size must be >= 1, got {chunk_size}")
    if not 0 <= overlap < chunk_size:
        raise DataError(f"overlap must be in [0, chunk_size), got {overlap}")
    stride = chunk_size - overlap
    n = math.ceil(max(len(tokens) - overlap, 1) / stride)
    chunks = [tokens[i * stride : i * stride + chunk_size] for i in range(n)]
    return ChunkSet(chunks=chunks, chunk_size=chunk_size, overlap=overlap)
