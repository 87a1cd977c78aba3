"""Load, validate, and summarize a talk/paper citation corpus.

On-disk layout is four JSONL files: talks, papers, citation links, and
split assignments. Records are validated on load; the loaded collections
are immutable views safe for concurrent reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError

SPLITS = ("train", "dev", "test")

YEAR_MIN = 1900
YEAR_MAX = 2100


class CorpusError(DataError):
    pass


class MalformedRecord(CorpusError):
    def __init__(self, path, line_no, field_name, reason):
        super().__init__(f"{path}:{line_no}: field {field_name!r}: {reason}")
        self.path = str(path)
        self.line_no = line_no
        self.field = field_name


class DuplicateId(CorpusError):
    pass


class DanglingReference(CorpusError):
    def __init__(self, ref_id, context=""):
        msg = f"reference to unknown id {ref_id!r}"
        super().__init__(f"{msg} ({context})" if context else msg)
        self.ref_id = ref_id


class IncompleteSplits(CorpusError):
    """A talk has no split assignment (splits must partition the talks)."""


class EmptySplit(CorpusError):
    pass


@dataclass(frozen=True)
class TalkRecord:
    id: str
    title: str
    year: int
    transcript: str
    source_url: str = ""
    abstract: str = ""  # optional; required only by the domain-adaptation stage


@dataclass(frozen=True)
class PaperRecord:
    id: str
    title: str
    abstract: str
    year: int
    authors: tuple[str, ...] = ()


@dataclass(frozen=True)
class SplitStats:
    talk_count: int
    paper_count: int
    mean_refs_per_talk: float
    mean_words_per_transcript: float
    mean_words_per_abstract: float


@dataclass(frozen=True)
class CorpusStats:
    per_split: dict[str, SplitStats]
    total: SplitStats

    def as_dict(self) -> dict:
        out = {name: vars(stats) for name, stats in self.per_split.items()}
        out["total"] = vars(self.total)
        return out


@dataclass
class Corpus:
    """Loaded collections. Treat as read-only after construction."""

    talks: dict[str, TalkRecord]
    papers: dict[str, PaperRecord]
    citations: dict[str, set[str]]
    splits: dict[str, str] = field(default_factory=dict)

    def split_talk_ids(self, which: str) -> list[str]:
        return [tid for tid in self.talks if self.splits.get(tid) == which]


def _jsonl_records(path):
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(path, line_no, "<line>", f"invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise MalformedRecord(path, line_no, "<line>", "record is not an object")
            yield line_no, obj


def _require(obj, path, line_no, name, typ):
    if name not in obj or obj[name] is None:
        raise MalformedRecord(path, line_no, name, "missing mandatory field")
    value = obj[name]
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise MalformedRecord(path, line_no, name, f"expected integer, got {type(value).__name__}")
    elif not isinstance(value, typ):
        raise MalformedRecord(path, line_no, name, f"expected {typ.__name__}, got {type(value).__name__}")
    return value


def _check_year(year, path, line_no):
    if not (YEAR_MIN <= year <= YEAR_MAX):
        raise MalformedRecord(path, line_no, "year", f"year {year} outside [{YEAR_MIN}, {YEAR_MAX}]")
    return year


def load_talks(path) -> dict[str, TalkRecord]:
    talks: dict[str, TalkRecord] = {}
    for line_no, obj in _jsonl_records(path):
        tid = _require(obj, path, line_no, "id", str)
        if not tid:
            raise MalformedRecord(path, line_no, "id", "empty id")
        if tid in talks:
            raise DuplicateId(f"duplicate talk id {tid!r} at {path}:{line_no}")
        transcript = _require(obj, path, line_no, "transcript", str)
        if not transcript.strip():
            raise MalformedRecord(path, line_no, "transcript", "empty transcript")
        talks[tid] = TalkRecord(
            id=tid,
            title=_require(obj, path, line_no, "title", str),
            year=_check_year(_require(obj, path, line_no, "year", int), path, line_no),
            transcript=transcript,
            source_url=obj.get("source_url") or "",
            abstract=obj.get("abstract") or "",
        )
    return talks


def load_papers(path) -> dict[str, PaperRecord]:
    papers: dict[str, PaperRecord] = {}
    for line_no, obj in _jsonl_records(path):
        pid = _require(obj, path, line_no, "id", str)
        if not pid:
            raise MalformedRecord(path, line_no, "id", "empty id")
        if pid in papers:
            raise DuplicateId(f"duplicate paper id {pid!r} at {path}:{line_no}")
        abstract = _require(obj, path, line_no, "abstract", str)
        if not abstract.strip():
            raise MalformedRecord(path, line_no, "abstract", "empty abstract")
        authors = obj.get("authors") or []
        if not isinstance(authors, list) or any(not isinstance(a, str) for a in authors):
            raise MalformedRecord(path, line_no, "authors", "expected list of strings")
        papers[pid] = PaperRecord(
            id=pid,
            title=_require(obj, path, line_no, "title", str),
            abstract=abstract,
            year=_check_year(_require(obj, path, line_no, "year", int), path, line_no),
            authors=tuple(authors),
        )
    return papers


def load_citations(path, talks, papers) -> dict[str, set[str]]:
    citations: dict[str, set[str]] = {}
    for line_no, obj in _jsonl_records(path):
        tid = _require(obj, path, line_no, "talk_id", str)
        if tid not in talks:
            raise DanglingReference(tid, f"{path}:{line_no}: citation for unknown talk")
        if tid in citations:
            raise DuplicateId(f"duplicate citation record for talk {tid!r} at {path}:{line_no}")
        pids = _require(obj, path, line_no, "paper_ids", list)
        if not pids:
            raise MalformedRecord(path, line_no, "paper_ids", "empty citation set")
        for pid in pids:
            if pid not in papers:
                raise DanglingReference(pid, f"{path}:{line_no}: cited by talk {tid!r}")
        citations[tid] = set(pids)
    return citations


def load_splits(path, talks) -> dict[str, str]:
    splits: dict[str, str] = {}
    for line_no, obj in _jsonl_records(path):
        tid = _require(obj, path, line_no, "talk_id", str)
        if tid not in talks:
            raise DanglingReference(tid, f"{path}:{line_no}: split for unknown talk")
        if tid in splits:
            raise DuplicateId(f"talk {tid!r} assigned to more than one split at {path}:{line_no}")
        which = _require(obj, path, line_no, "split", str)
        if which not in SPLITS:
            raise MalformedRecord(path, line_no, "split", f"unknown split {which!r}")
        splits[tid] = which
    missing = [tid for tid in talks if tid not in splits]
    if missing:
        raise IncompleteSplits(f"{len(missing)} talks without split assignment, first: {missing[0]!r}")
    return splits


def load_corpus(talks_path, papers_path, citations_path, splits_path) -> Corpus:
    talks = load_talks(talks_path)
    papers = load_papers(papers_path)
    citations = load_citations(citations_path, talks, papers)
    splits = load_splits(splits_path, talks)
    return Corpus(talks=talks, papers=papers, citations=citations, splits=splits)


def load_corpus_dir(directory) -> Corpus:
    d = Path(directory)
    return load_corpus(
        d / "talks.jsonl", d / "papers.jsonl", d / "citations.jsonl", d / "splits.jsonl"
    )


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def save_corpus(corpus: Corpus, directory) -> None:
    """Write the normalized JSONL copy; load_corpus of the result is identity."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "talks.jsonl", "w", encoding="utf-8") as fh:
        for t in corpus.talks.values():
            rec = {"id": t.id, "title": t.title, "year": t.year, "transcript": t.transcript}
            if t.source_url:
                rec["source_url"] = t.source_url
            if t.abstract:
                rec["abstract"] = t.abstract
            fh.write(_dump(rec) + "\n")
    with open(d / "papers.jsonl", "w", encoding="utf-8") as fh:
        for p in corpus.papers.values():
            rec = {"id": p.id, "title": p.title, "abstract": p.abstract, "year": p.year}
            if p.authors:
                rec["authors"] = list(p.authors)
            fh.write(_dump(rec) + "\n")
    with open(d / "citations.jsonl", "w", encoding="utf-8") as fh:
        for tid, pids in corpus.citations.items():
            fh.write(_dump({"talk_id": tid, "paper_ids": sorted(pids)}) + "\n")
    with open(d / "splits.jsonl", "w", encoding="utf-8") as fh:
        for tid, which in corpus.splits.items():
            fh.write(_dump({"talk_id": tid, "split": which}) + "\n")


def word_count(text: str) -> int:
    # Table-style statistics split words at whitespace
    return len(text.split())


def _split_stats(corpus: Corpus, talk_ids: list[str], paper_ids: list[str]) -> SplitStats:
    refs = [len(corpus.citations.get(tid, ())) for tid in talk_ids]
    words_t = [word_count(corpus.talks[tid].transcript) for tid in talk_ids]
    words_a = [word_count(corpus.papers[pid].abstract) for pid in paper_ids]
    return SplitStats(
        talk_count=len(talk_ids),
        paper_count=len(paper_ids),
        mean_refs_per_talk=sum(refs) / len(talk_ids) if talk_ids else 0.0,
        mean_words_per_transcript=sum(words_t) / len(words_t) if words_t else 0.0,
        mean_words_per_abstract=sum(words_a) / len(words_a) if words_a else 0.0,
    )


def compute_stats(corpus: Corpus) -> CorpusStats:
    if not corpus.talks:
        raise EmptySplit("corpus has no talks")
    per_split = {}
    for which in SPLITS:
        talk_ids = corpus.split_talk_ids(which)
        if not talk_ids:
            continue
        cited = sorted({pid for tid in talk_ids for pid in corpus.citations.get(tid, ())})
        per_split[which] = _split_stats(corpus, talk_ids, cited)
    total = _split_stats(corpus, list(corpus.talks), list(corpus.papers))
    return CorpusStats(per_split=per_split, total=total)


def filter_split(corpus: Corpus, which: str) -> Corpus:
    """View with only the talks of one split; the paper collection is unchanged."""
    if which not in SPLITS:
        raise CorpusError(f"unknown split {which!r}")
    talk_ids = corpus.split_talk_ids(which)
    if not talk_ids:
        raise EmptySplit(f"split {which!r} has no talks")
    talks = {tid: corpus.talks[tid] for tid in talk_ids}
    citations = {tid: set(corpus.citations[tid]) for tid in talk_ids if tid in corpus.citations}
    splits = {tid: which for tid in talk_ids}
    return Corpus(talks=talks, papers=corpus.papers, citations=citations, splits=splits)
