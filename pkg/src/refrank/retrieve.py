"""Exact top-k maximum inner-product search with a temporal filter.

The index is a dense matrix scanned in full per query; at corpus scale
(tens of thousands of vectors) this is fast, exact, and trivially
checkable against an argsort oracle. Papers published after the query's
cutoff year are ineligible. Ties break by ascending paper id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimMismatch


class DuplicateId(DataError):
    pass


class EmptyIndex(DataError):
    pass


class EmptyEligibleSet(DataError):
    pass


@dataclass
class RankedList:
    talk_id: str
    items: list[tuple[str, float]]  # (paper_id, score), descending score
    k: int


@dataclass
class PaperIndex:
    ids: list[str]
    years: np.ndarray  # (n,) int
    matrix: np.ndarray  # (n, dim) float64
    id_rank: np.ndarray  # rank of each row's id in ascending id order (tie-break key)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)


def build_index(paper_ids, key_vectors, years) -> PaperIndex:
    ids = list(paper_ids)
    if not ids:
        raise EmptyIndex("cannot build an index over zero papers")
    if len(set(ids)) != len(ids):
        dupes = sorted({pid for pid in ids if ids.count(pid) > 1})
        raise DuplicateId(f"duplicate paper ids: {dupes[:5]}")
    matrix = np.ascontiguousarray(key_vectors, dtype=np.float64)
    years_arr = np.asarray(years, dtype=np.int64)
    if matrix.ndim != 2 or matrix.shape[0] != len(ids) or years_arr.shape != (len(ids),):
        raise DimMismatch(
            f"misaligned index inputs: {len(ids)} ids, matrix {matrix.shape}, years {years_arr.shape}"
        )
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    id_rank = np.empty(len(ids), dtype=np.int64)
    for rank, row in enumerate(order):
        id_rank[row] = rank
    return PaperIndex(ids=ids, years=years_arr, matrix=matrix, id_rank=id_rank)


def search(
    index: PaperIndex,
    query: np.ndarray,
    k: int,
    cutoff_year: int | None = None,
    strict: bool = False,
    talk_id: str = "",
) -> RankedList:
    """Top-k highest dot products among temporally eligible papers."""
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (index.dim,):
        raise DimMismatch(f"query shape {q.shape} != index dim {index.dim}")
    if cutoff_year is None:
        eligible = np.arange(len(index))
    else:
        mask = index.years < cutoff_year if strict else index.years <= cutoff_year
        eligible = np.nonzero(mask)[0]
        if eligible.size == 0:
            raise EmptyEligibleSet(f"no papers published {'before' if strict else 'at or before'} {cutoff_year}")
    scores = index.matrix[eligible] @ q
    # primary key: score descending; secondary: paper id ascending
    order = np.lexsort((index.id_rank[eligible], -scores))
    top = order[: min(k, eligible.size)]
    items = [(index.ids[eligible[i]], float(scores[i])) for i in top]
    return RankedList(talk_id=talk_id, items=items, k=k)


def batch_search(index: PaperIndex, queries, k: int, strict: bool = False) -> list[RankedList]:
    """queries: iterable of (talk_id, query vector, cutoff_year or None)."""
    return [
        search(index, q, k, cutoff_year=cutoff, strict=strict, talk_id=tid)
        for tid, q, cutoff in queries
    ]
