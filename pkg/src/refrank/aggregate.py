"""Collapse per-chunk embeddings into one query vector.

Four strategies: keep the first chunk, arithmetic mean, element-wise max,
and a softmax-weighted mean whose per-chunk scores come from a learned
linear scorer. The learned strategy has exact analytic gradients so the
training loop never needs autodiff.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DataError, DimMismatch


class Strategy(str, Enum):
    TRUNCATION = "truncation"
    MEAN = "mean"
    MAX = "max"
    LEARNED_MEAN = "learned_mean"

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise DataError(
                f"unknown aggregation {name!r} (choose from {[s.value for s in cls]})"
            ) from None


class EmptyChunkList(DataError):
    pass


class MissingParams(DataError):
    pass


@dataclass
class ScorerParams:
    """Linear per-chunk scorer. The shared bias b never moves the softmax
    weights (shift invariance); it is kept for parameter-layout fidelity."""

    w: np.ndarray  # (dim,)
    b: np.ndarray  # scalar, shape ()

    @classmethod
    def zeros(cls, dim: int) -> "ScorerParams":
        return cls(w=np.zeros(dim, dtype=np.float64), b=np.zeros((), dtype=np.float64))

    def copy(self) -> "ScorerParams":
        return ScorerParams(w=self.w.copy(), b=self.b.copy())


def _as_matrix(chunk_vectors) -> np.ndarray:
    mat = np.asarray(chunk_vectors, dtype=np.float64)
    if mat.ndim != 2:
        raise DimMismatch(f"expected a list of equal-length vectors, got shape {mat.shape}")
    return mat


def chunk_weights(chunk_vectors, params: ScorerParams) -> np.ndarray:
    """Softmax over per-chunk scores w . c_j + b, max-subtracted for stability."""
    mat = _as_matrix(chunk_vectors)
    if params.w.shape != (mat.shape[1],):
        raise DimMismatch(f"scorer w has dim {params.w.shape[0]}, chunks have dim {mat.shape[1]}")
    z = mat @ params.w + float(params.b)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def aggregate(chunk_vectors, strategy: Strategy, params: ScorerParams | None = None):
    """Return (aggregated vector, chunk weights or None)."""
    if len(chunk_vectors) == 0:
        raise EmptyChunkList("no chunk vectors to aggregate")
    mat = _as_matrix(chunk_vectors)
    if strategy == Strategy.TRUNCATION:
        return mat[0].copy(), None
    if strategy == Strategy.MEAN:
        return mat.mean(axis=0), None
    if strategy == Strategy.MAX:
        return mat.max(axis=0), None
    if strategy == Strategy.LEARNED_MEAN:
        if params is None:
            raise MissingParams("learned_mean aggregation requires ScorerParams")
        alpha = chunk_weights(mat, params)
        return alpha @ mat, alpha
    raise DataError(f"unhandled strategy {strategy!r}")


def aggregate_backward(chunk_vectors, params: ScorerParams, upstream_grad) -> tuple[np.ndarray, float]:
    """Gradients of the softmax-weighted mean w.r.t. (w, b).

    upstream_grad is dL/d(aggregated vector). Chunk vectors are constants
    (frozen backbone). grad_b is analytically zero; it is computed, not
    hard-coded, so the finite-difference harness exercises the real chain.
    """
    mat = _as_matrix(chunk_vectors)
    u = np.asarray(upstream_grad, dtype=np.float64)
    if u.shape != (mat.shape[1],):
        raise DimMismatch(f"upstream grad dim {u.shape} != chunk dim {mat.shape[1]}")
    alpha = chunk_weights(mat, params)
    proj = mat @ u  # u . c_j per chunk
    mean_proj = float(alpha @ proj)
    dz = alpha * (proj - mean_proj)
    grad_w = mat.T @ dz
    grad_b = float(dz.sum())
    return grad_w, grad_b
