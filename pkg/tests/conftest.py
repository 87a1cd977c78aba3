import json

import pytest

from refrank.corpus import Corpus, PaperRecord, TalkRecord


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


@pytest.fixture
def tiny_corpus_files(tmp_path):
    """Two talks, three papers, valid links, all splits covered."""
    talks = [
        {"id": "t1", "title": "Talk One", "year": 2021, "transcript": "alpha beta gamma delta"},
        {"id": "t2", "title": "Talk Two", "year": 2022, "transcript": "epsilon zeta eta", "source_url": "http://x"},
    ]
    papers = [
        {"id": "a", "title": "Paper A", "abstract": "alpha beta", "year": 2019},
        {"id": "b", "title": "Paper B", "abstract": "gamma delta", "year": 2020, "authors": ["X Y"]},
        {"id": "c", "title": "Paper C", "abstract": "epsilon zeta", "year": 2021},
    ]
    citations = [
        {"talk_id": "t1", "paper_ids": ["a", "b"]},
        {"talk_id": "t2", "paper_ids": ["c"]},
    ]
    splits = [
        {"talk_id": "t1", "split": "train"},
        {"talk_id": "t2", "split": "test"},
    ]
    paths = {
        "talks": write_jsonl(tmp_path / "talks.jsonl", talks),
        "papers": write_jsonl(tmp_path / "papers.jsonl", papers),
        "citations": write_jsonl(tmp_path / "citations.jsonl", citations),
        "splits": write_jsonl(tmp_path / "splits.jsonl", splits),
    }
    return tmp_path, paths


def make_corpus(n_talks=4, n_papers=6, refs=((0, 1), (1, 2), (2, 3), (3, 4))):
    """Small in-memory corpus with one split of each kind."""
    papers = {
        f"p{j}": PaperRecord(id=f"p{j}", title=f"paper {j}", abstract=f"topic{j} words here", year=2000 + j)
        for j in range(n_papers)
    }
    talks = {}
    citations = {}
    splits = {}
    split_cycle = ["train", "train", "dev", "test"]
    for i in range(n_talks):
        tid = f"t{i}"
        talks[tid] = TalkRecord(
            id=tid,
            title=f"talk {i}",
            year=2015 + i,
            transcript=f"talk {i} mentions topic{i} and topic{i + 1}",
            abstract=f"summary of talk {i} topic{i}",
        )
        citations[tid] = {f"p{j}" for j in refs[i % len(refs)]}
        splits[tid] = split_cycle[i % len(split_cycle)]
    return Corpus(talks=talks, papers=papers, citations=citations, splits=splits)
