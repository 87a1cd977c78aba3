"""Seeded synthetic corpus generator.

Talks plant per-paper signature tokens in their transcripts: each gold
paper contributes a burst of its signature tokens plus a few citation-cue
words, so lexical-overlap embeddings carry a real retrieval signal. In
late-signal mode every burst lands after the first `chunk_size` tokens,
which provably starves the truncation strategy. All draws flow from one
seed; the same parameters always produce byte-identical corpora.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, PaperRecord, TalkRecord
from .errors import DataError

CUE_WORDS = (
    "cite", "cited", "citation", "reference", "references", "prior",
    "related", "work", "approach", "method", "building", "extends",
)

_SIGNATURE_RE = re.compile(r"^sig\d{4}[a-z]$")

_SYLLABLES = (
    "ba be bi bo bu da de di do du fa fe fi fo fu ga ge go gu ha he hi ho "
    "ka ke ki ko ku la le li lo lu ma me mi mo mu na ne ni no nu pa pe pi "
    "po pu ra re ri ro ru sa se so su ta te ti to tu va ve vi vo wa we wi "
    "ya yo za zo"
).split()


def is_signature_token(token: str) -> bool:
    return _SIGNATURE_RE.match(token) is not None


@dataclass(frozen=True)
class SynthConfig:
    n_talks: int = 200
    n_papers: int = 1000
    seed: int = 7
    late_signal: bool = False
    chunk_size: int = 512
    min_refs: int = 5
    max_refs: int = 40
    filler_vocab: int = 5000
    sig_tokens_per_paper: int = 8
    paper_year_range: tuple[int, int] = (2000, 2020)
    talk_year_range: tuple[int, int] = (2015, 2022)
    train_frac: float = 0.70
    dev_frac: float = 0.15

    def __post_init__(self):
        if self.n_talks < 1 or self.n_papers < 1:
            raise DataError("n_talks and n_papers must be >= 1")
        if not 1 <= self.min_refs <= self.max_refs:
            raise DataError("need 1 <= min_refs <= max_refs")
        if self.max_refs > self.n_papers:
            raise DataError("max_refs cannot exceed n_papers")


def _make_vocab(rng: np.random.Generator, size: int) -> list[str]:
    words: list[str] = []
    seen = set(CUE_WORDS)
    while len(words) < size:
        n_syll = int(rng.integers(2, 5))
        word = "".join(_SYLLABLES[int(i)] for i in rng.integers(0, len(_SYLLABLES), n_syll))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def _sample_words(rng, vocab, n) -> list[str]:
    return [vocab[int(i)] for i in rng.integers(0, len(vocab), n)]


def generate(config: SynthConfig) -> Corpus:
    rng = np.random.default_rng(config.seed)
    vocab = _make_vocab(rng, config.filler_vocab)

    papers: dict[str, PaperRecord] = {}
    signatures: dict[str, list[str]] = {}
    y0, y1 = config.paper_year_range
    for i in range(config.n_papers):
        pid = f"p{i:04d}"
        sig = [f"sig{i:04d}{chr(ord('a') + j)}" for j in range(config.sig_tokens_per_paper)]
        signatures[pid] = sig
        year = int(rng.integers(y0, y1 + 1))
        abstract_tokens = sig * 3 + _sample_words(rng, vocab, 60)
        rng.shuffle(abstract_tokens)
        papers[pid] = PaperRecord(
            id=pid,
            title=" ".join(_sample_words(rng, vocab, 5)),
            abstract=" ".join(abstract_tokens),
            year=year,
            authors=(f"author{int(rng.integers(0, 97)):02d}",),
        )

    paper_years = {pid: p.year for pid, p in papers.items()}
    all_paper_ids = list(papers)
    earliest_paper_year = min(paper_years.values())

    talks: dict[str, TalkRecord] = {}
    citations: dict[str, set[str]] = {}
    t0, t1 = config.talk_year_range
    for i in range(config.n_talks):
        tid = f"t{i:04d}"
        # keep every talk's gold set temporally reachable
        year = max(int(rng.integers(t0, t1 + 1)), earliest_paper_year)
        eligible = [pid for pid in all_paper_ids if paper_years[pid] <= year]
        n_refs = int(rng.integers(config.min_refs, config.max_refs + 1))
        n_refs = min(n_refs, len(eligible))
        gold = [eligible[int(j)] for j in rng.choice(len(eligible), size=n_refs, replace=False)]
        citations[tid] = set(gold)

        title_words = _sample_words(rng, vocab, 5)
        intro_len = config.chunk_size if config.late_signal else int(rng.integers(120, 300))
        tokens = _sample_words(rng, vocab, intro_len)
        body_order = list(gold)
        rng.shuffle(body_order)
        for pid in body_order:
            burst = list(signatures[pid]) * 2
            burst += [CUE_WORDS[int(j)] for j in rng.integers(0, len(CUE_WORDS), 3)]
            burst += _sample_words(rng, vocab, 6)
            rng.shuffle(burst)
            tokens.extend(burst)
            tokens.extend(_sample_words(rng, vocab, 8))
        tokens.extend(_sample_words(rng, vocab, 100))

        summary = list(title_words)
        for pid in body_order[: min(6, len(body_order))]:
            summary.extend(signatures[pid][:3])
        summary += [CUE_WORDS[int(j)] for j in rng.integers(0, len(CUE_WORDS), 4)]
        summary += _sample_words(rng, vocab, 40)
        rng.shuffle(summary)

        talks[tid] = TalkRecord(
            id=tid,
            title=" ".join(title_words),
            year=year,
            transcript=" ".join(tokens),
            source_url=f"https://example.org/talks/{tid}",
            abstract=" ".join(summary),
        )

    # chronological partition: earliest years train, latest test
    ordered = sorted(talks, key=lambda tid: (talks[tid].year, tid))
    n_train = max(1, int(round(config.train_frac * len(ordered))))
    n_dev = max(1, int(round(config.dev_frac * len(ordered))))
    n_train = min(n_train, len(ordered) - 2) if len(ordered) >= 3 else n_train
    splits: dict[str, str] = {}
    for rank, tid in enumerate(ordered):
        if rank < n_train:
            splits[tid] = "train"
        elif rank < n_train + n_dev:
            splits[tid] = "dev"
        else:
            splits[tid] = "test"
    if len(ordered) >= 3 and "test" not in splits.values():
        splits[ordered[-1]] = "test"

    return Corpus(talks=talks, papers=papers, citations=citations, splits=splits)
