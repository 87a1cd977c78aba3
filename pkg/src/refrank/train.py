"""Contrastive training of the dual-encoder heads.

Batches share their positives as in-batch candidates: every cited paper of
every talk in the batch is a candidate, labeled positive for each talk
that cites it (shared positives stay positive, everything else is a
negative). The main stage minimizes a summed sigmoid binary loss over the
whole label matrix; the domain-adaptation stage pairs each talk with its
own abstract under a softmax loss. Backbones are frozen, so only the
chunk scorer and the query-side projection receive gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .aggregate import Strategy, aggregate, aggregate_backward
from .corpus import Corpus
from .errors import DataError, NumericError, ShapeMismatch
from .model import DualEncoderHeads, EncodedCorpus
from . import evaluation, retrieve


class TalkWithoutPositives(DataError):
    pass


class NonFiniteLoss(NumericError):
    pass


class NonFiniteScore(NumericError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 24
    grad_accumulation: int = 3
    lr_head: float = 2e-4
    weight_decay: float = 0.01
    adam_eps: float = 1e-8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    max_epochs: int = 100
    early_stop_patience: int = 4
    early_stop_metric: str = "dev_loss"  # or "dev_map10"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.grad_accumulation < 1 or self.max_epochs < 1:
            raise DataError("batch_size, grad_accumulation, max_epochs must be positive")
        if self.early_stop_patience < 1:
            raise DataError("early_stop_patience must be >= 1")
        if self.lr_head <= 0:
            raise DataError("lr_head must be positive")
        if self.early_stop_metric not in ("dev_loss", "dev_map10"):
            raise DataError(f"unknown early_stop_metric {self.early_stop_metric!r}")


@dataclass
class TrainingBatch:
    talk_ids: list[str]
    positives: list[list[str]]  # aligned with talk_ids
    candidate_ids: list[str]  # deduplicated, first-appearance order
    chunk_mats: list[np.ndarray]  # per talk, (n_chunks, query_dim)
    key_mat: np.ndarray  # (n_candidates, key_dim)

    def __len__(self) -> int:
        return len(self.talk_ids)


@dataclass
class HeadGrads:
    w: np.ndarray
    b: np.ndarray  # shape ()
    P: np.ndarray | None
    p0: np.ndarray | None

    @classmethod
    def zeros_like(cls, heads: DualEncoderHeads) -> "HeadGrads":
        return cls(
            w=np.zeros_like(heads.scorer.w),
            b=np.zeros_like(heads.scorer.b),
            P=None if heads.P is None else np.zeros_like(heads.P),
            p0=None if heads.p0 is None else np.zeros_like(heads.p0),
        )

    def add_(self, other: "HeadGrads") -> None:
        self.w += other.w
        self.b += other.b
        if self.P is not None:
            self.P += other.P
            self.p0 += other.p0

    def named(self) -> dict[str, np.ndarray]:
        out = {"scorer.w": self.w, "scorer.b": self.b}
        if self.P is not None:
            out["P"] = self.P
            out["p0"] = self.p0
        return out


def build_batch(
    talk_ids: list[str], citations: dict[str, set[str]], encoded: EncodedCorpus
) -> tuple[TrainingBatch, np.ndarray]:
    """Assemble a batch and its label matrix.

    Candidates are the union of the batch talks' positives; label (i, j)
    is 1 whenever candidate j is cited by talk i, even if j entered the
    batch through another talk.
    """
    positives = []
    candidate_ids: list[str] = []
    seen = set()
    for tid in talk_ids:
        pos = sorted(citations.get(tid, ()))
        if not pos:
            raise TalkWithoutPositives(f"talk {tid!r} has no positives")
        positives.append(pos)
        for pid in pos:
            if pid not in seen:
                seen.add(pid)
                candidate_ids.append(pid)
    labels = np.zeros((len(talk_ids), len(candidate_ids)), dtype=np.float64)
    for i, tid in enumerate(talk_ids):
        cited = citations[tid]
        for j, pid in enumerate(candidate_ids):
            if pid in cited:
                labels[i, j] = 1.0
    key_rows = [encoded.key_row(pid) for pid in candidate_ids]
    batch = TrainingBatch(
        talk_ids=list(talk_ids),
        positives=positives,
        candidate_ids=candidate_ids,
        chunk_mats=[encoded.query_chunks[tid] for tid in talk_ids],
        key_mat=encoded.key_matrix[key_rows],
    )
    return batch, labels


def build_da_batch(talk_ids: list[str], encoded: EncodedCorpus) -> tuple[TrainingBatch, np.ndarray]:
    """Square domain-adaptation batch: candidate j is talk j's own abstract."""
    if not encoded.talk_abstract_keys:
        raise DataError("encoded corpus has no talk-abstract keys; encode with include_talk_abstracts")
    key_mat = np.vstack([encoded.talk_abstract_keys[tid] for tid in talk_ids])
    batch = TrainingBatch(
        talk_ids=list(talk_ids),
        positives=[[tid] for tid in talk_ids],
        candidate_ids=list(talk_ids),
        chunk_mats=[encoded.query_chunks[tid] for tid in talk_ids],
        key_mat=key_mat,
    )
    gold = np.arange(len(talk_ids))
    return batch, gold


def forward_batch(heads: DualEncoderHeads, batch: TrainingBatch):
    """Aggregate and project every talk; returns (A, Q, scores)."""
    agg = [aggregate(mat, heads.strategy, heads.scorer)[0] for mat in batch.chunk_mats]
    A = np.vstack(agg)
    Q = A @ heads.P.T + heads.p0 if heads.P is not None else A
    scores = Q @ batch.key_mat.T
    if not np.all(np.isfinite(scores)):
        raise NonFiniteScore("non-finite entries in the score matrix")
    return A, Q, scores


def _backward_from_dscores(dS: np.ndarray, heads: DualEncoderHeads, batch: TrainingBatch, A: np.ndarray) -> HeadGrads:
    grads = HeadGrads.zeros_like(heads)
    dQ = dS @ batch.key_mat  # (B, key_dim)
    if heads.P is not None:
        grads.P = dQ.T @ A
        grads.p0 = dQ.sum(axis=0)
        dA = dQ @ heads.P
    else:
        dA = dQ
    if heads.strategy == Strategy.LEARNED_MEAN:
        for mat, u in zip(batch.chunk_mats, dA):
            gw, gb = aggregate_backward(mat, heads.scorer, u)
            grads.w += gw
            grads.b += gb
    return grads


def _check_scores(scores, labels_or_gold, square: bool):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ShapeMismatch(f"score matrix must be 2-D, got shape {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise NonFiniteScore("non-finite entries in the score matrix")
    if square and scores.shape[0] != scores.shape[1]:
        raise ShapeMismatch(f"domain-adaptation batch must be square, got {scores.shape}")
    return scores


def bce_loss(scores: np.ndarray, labels: np.ndarray) -> float:
    """Summed binary cross-entropy over every (talk, candidate) pair.

    Stable formulation: max(s, 0) - s*y + log(1 + exp(-|s|)); no overflow
    for |s| up to 1e3 and beyond.
    """
    scores = _check_scores(scores, labels, square=False)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != scores.shape:
        raise ShapeMismatch(f"labels shape {labels.shape} != scores shape {scores.shape}")
    per = np.maximum(scores, 0.0) - scores * labels + np.log1p(np.exp(-np.abs(scores)))
    return float(per.sum())


def bce_loss_and_grads(
    scores: np.ndarray,
    labels: np.ndarray,
    heads: DualEncoderHeads,
    batch: TrainingBatch,
) -> tuple[float, HeadGrads]:
    loss = bce_loss(scores, labels)
    A, _, _ = forward_batch(heads, batch)
    sig = 1.0 / (1.0 + np.exp(-np.asarray(scores, dtype=np.float64)))
    dS = sig - np.asarray(labels, dtype=np.float64)  # dL/ds = sigma(s) - y, exactly
    return loss, _backward_from_dscores(dS, heads, batch, A)


def softmax_da_loss(scores: np.ndarray, gold: np.ndarray) -> float:
    """Per-row softmax negative log-likelihood of the gold column, summed."""
    scores = _check_scores(scores, gold, square=True)
    gold = np.asarray(gold)
    if gold.shape != (scores.shape[0],):
        raise ShapeMismatch(f"gold permutation length {gold.shape} != rows {scores.shape[0]}")
    row_max = scores.max(axis=1, keepdims=True)
    lse = np.log(np.exp(scores - row_max).sum(axis=1)) + row_max[:, 0]
    picked = scores[np.arange(scores.shape[0]), gold]
    return float((lse - picked).sum())


def softmax_da_loss_and_grads(
    scores: np.ndarray,
    gold: np.ndarray,
    heads: DualEncoderHeads,
    batch: TrainingBatch,
) -> tuple[float, HeadGrads]:
    loss = softmax_da_loss(scores, gold)
    scores = np.asarray(scores, dtype=np.float64)
    row_max = scores.max(axis=1, keepdims=True)
    e = np.exp(scores - row_max)
    dS = e / e.sum(axis=1, keepdims=True)
    dS[np.arange(scores.shape[0]), np.asarray(gold)] -= 1.0
    A, _, _ = forward_batch(heads, batch)
    return loss, _backward_from_dscores(dS, heads, batch, A)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_heads(cls, heads: DualEncoderHeads) -> "OptimizerState":
        params = heads.parameters()
        return cls(
            m={name: np.zeros_like(arr) for name, arr in params.items()},
            v={name: np.zeros_like(arr) for name, arr in params.items()},
            step=0,
        )


def adam_step(
    heads: DualEncoderHeads,
    grads: HeadGrads,
    state: OptimizerState,
    config: TrainConfig,
) -> tuple[DualEncoderHeads, OptimizerState]:
    """One Adam update with bias correction and decoupled weight decay
    (p <- p - lr*wd*p applied before the moment update). In place."""
    params = heads.parameters()
    named_grads = grads.named()
    state.step += 1
    t = state.step
    b1, b2 = config.adam_beta1, config.adam_beta2
    for name, p in params.items():
        g = named_grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if config.weight_decay:
            p -= config.lr_head * config.weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= config.lr_head * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return heads, state


def _batched(ids: list[str], size: int) -> list[list[str]]:
    return [ids[i : i + size] for i in range(0, len(ids), size)]


def _epoch_batches(talk_ids, citations, encoded, config, stage, rng=None):
    order = list(talk_ids)
    if rng is not None:
        order = [order[i] for i in rng.permutation(len(order))]
    out = []
    for group in _batched(order, config.batch_size):
        if stage == "adapt":
            out.append(build_da_batch(group, encoded))
        else:
            out.append(build_batch(group, citations, encoded))
    return out


def _loss_and_grads(heads, batch, target, stage):
    _, _, scores = forward_batch(heads, batch)
    if stage == "adapt":
        return softmax_da_loss_and_grads(scores, target, heads, batch)
    return bce_loss_and_grads(scores, target, heads, batch)


def _dev_map10(heads, encoded, corpus, dev_ids, k=10):
    index = retrieve.build_index(
        encoded.paper_ids,
        encoded.key_matrix,
        [corpus.papers[pid].year for pid in encoded.paper_ids],
    )
    rankings, golds = [], []
    for tid in dev_ids:
        a, _ = aggregate(encoded.query_chunks[tid], heads.strategy, heads.scorer)
        q = heads.project(a)
        ranked = retrieve.search(index, q, k, cutoff_year=corpus.talks[tid].year)
        rankings.append([pid for pid, _ in ranked.items])
        golds.append(corpus.citations.get(tid, set()))
    return evaluation.map_at_k(rankings, golds, k)


def train(
    corpus: Corpus,
    encoded: EncodedCorpus,
    config: TrainConfig,
    stage: str = "main",
    init_heads: DualEncoderHeads | None = None,
    strategy: Strategy = Strategy.LEARNED_MEAN,
    projection: bool = True,
) -> tuple[DualEncoderHeads, list[dict]]:
    """Epoch loop with gradient accumulation and early stopping.

    Returns the best checkpoint (by the configured dev metric) and the
    per-epoch metrics log.
    """
    if stage not in ("main", "adapt"):
        raise DataError(f"unknown training stage {stage!r}")
    train_ids = corpus.split_talk_ids("train")
    dev_ids = corpus.split_talk_ids("dev")
    if not train_ids or not dev_ids:
        raise DataError("train and dev splits must both be nonempty")
    if stage == "main":
        for tid in train_ids + dev_ids:
            if not corpus.citations.get(tid):
                raise TalkWithoutPositives(f"talk {tid!r} has no positives")

    if init_heads is not None:
        heads = init_heads.copy()
    else:
        heads = DualEncoderHeads.init(
            strategy, encoded.query_dim, encoded.key_dim, projection=projection
        )
    state = OptimizerState.for_heads(heads)
    rng = np.random.default_rng(config.seed)

    dev_batches = _epoch_batches(dev_ids, corpus.citations, encoded, config, stage)
    dev_pairs = sum(len(b) * len(b.candidate_ids) for b, _ in dev_batches)

    def dev_loss_value(h):
        total = 0.0
        for batch, target in dev_batches:
            _, _, scores = forward_batch(h, batch)
            total += softmax_da_loss(scores, target) if stage == "adapt" else bce_loss(scores, target)
        return total / max(dev_pairs, 1)

    history: list[dict] = []
    best_heads = heads.copy()
    best_value = None
    best_epoch = 0
    bad_epochs = 0

    for epoch in range(1, config.max_epochs + 1):
        batches = _epoch_batches(train_ids, corpus.citations, encoded, config, stage, rng=rng)
        epoch_loss = 0.0
        epoch_pairs = 0
        acc = HeadGrads.zeros_like(heads)
        acc_count = 0
        for batch, target in batches:
            loss, grads = _loss_and_grads(heads, batch, target, stage)
            if not math.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, batch of talks {batch.talk_ids[:3]}..."
                )
            epoch_loss += loss
            epoch_pairs += len(batch) * len(batch.candidate_ids)
            acc.add_(grads)
            acc_count += 1
            if acc_count == config.grad_accumulation:
                adam_step(heads, acc, state, config)
                acc = HeadGrads.zeros_like(heads)
                acc_count = 0
        if acc_count:
            adam_step(heads, acc, state, config)

        dev_loss = dev_loss_value(heads)
        dev_map10 = _dev_map10(heads, encoded, corpus, dev_ids)
        entry = {
            "epoch": epoch,
            "train_loss": epoch_loss / max(epoch_pairs, 1),
            "dev_loss": dev_loss,
            "dev_map10": dev_map10,
        }
        history.append(entry)

        value = dev_loss if config.early_stop_metric == "dev_loss" else -dev_map10
        if best_value is None or value < best_value:
            best_value = value
            best_heads = heads.copy()
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.early_stop_patience:
                break

    for entry in history:
        entry["best_epoch"] = best_epoch
    return best_heads, history


def finite_diff_check(
    heads: DualEncoderHeads,
    batch: TrainingBatch,
    target: np.ndarray,
    loss_kind: str = "bce",
    h: float = 1e-3,
) -> float:
    """Max over parameters of |analytic - numeric| / max(1e-8, |numeric|),
    numeric via central differences on the full loss."""
    if loss_kind not in ("bce", "da"):
        raise DataError(f"unknown loss kind {loss_kind!r}")

    def loss_of(hd):
        _, _, scores = forward_batch(hd, batch)
        return softmax_da_loss(scores, target) if loss_kind == "da" else bce_loss(scores, target)

    _, grads = (
        softmax_da_loss_and_grads(forward_batch(heads, batch)[2], target, heads, batch)
        if loss_kind == "da"
        else bce_loss_and_grads(forward_batch(heads, batch)[2], target, heads, batch)
    )
    analytic = grads.named()
    params = heads.parameters()
    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        ana = analytic[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss_of(heads)
            flat[idx] = orig - h
            down = loss_of(heads)
            flat[idx] = orig
            numeric = (up - down) / (2.0 * h)
            rel = abs(ana[idx] - numeric) / max(1e-8, abs(numeric))
            worst = max(worst, rel)
    return worst
