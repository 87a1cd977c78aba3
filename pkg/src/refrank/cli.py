"""Command-line pipeline: ingest -> embed -> train/adapt -> retrieve -> eval.

Each subcommand writes a manifest.json (config snapshot, version,
timestamp, input checksums) into its output directory before any other
artifact. Exit codes: 0 success, 2 usage, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .aggregate import Strategy, aggregate
from .config import RunConfig, load_run_config
from .corpus import Corpus, compute_stats, filter_split, load_corpus, load_corpus_dir, save_corpus
from .embed import EmbeddingStore, HashingEmbedder, StoreEmbedder, load_store, make_embedder, save_store
from .errors import DataError, NumericError, RefrankError
from .evaluation import evaluate_run, frequency_baseline
from .model import (
    DualEncoderHeads,
    chunk_id,
    encode_key,
    load_checkpoint,
    query_chunk_vectors,
    save_checkpoint,
)
from .retrieve import RankedList, build_index, search
from .synth import SynthConfig, generate
from .textprep import TextPrepConfig
from .train import TrainingBatch, TrainConfig, build_batch, finite_diff_check, train
from . import model as model_mod
from . import synth as synth_mod

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir, command: str, config_snapshot: dict, inputs: list) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "config": config_snapshot,
        "input_checksums": {str(p): _sha256(p) for p in inputs if Path(p).is_file()},
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- subcommands


def cmd_ingest(args) -> int:
    corpus = load_corpus(args.talks, args.papers, args.citations, args.splits)
    write_manifest(
        args.out, "ingest", {"talks": args.talks, "papers": args.papers},
        [args.talks, args.papers, args.citations, args.splits],
    )
    save_corpus(corpus, args.out)
    stats = compute_stats(corpus)
    _write_json(Path(args.out) / "stats.json", stats.as_dict())
    print(
        f"ingested {len(corpus.talks)} talks, {len(corpus.papers)} papers "
        f"({stats.total.mean_refs_per_talk:.1f} refs/talk)"
    )
    return EXIT_OK


def _embed_texts(embedder, token_lists, workers: int):
    if workers > 1 and len(token_lists) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(embedder.embed_tokens, token_lists))
    return [embedder.embed_tokens(toks) for toks in token_lists]


def cmd_embed(args) -> int:
    cfg = load_run_config(args.config)
    corpus_dir = args.corpus or cfg.corpus_dir
    if not corpus_dir:
        raise DataError("no corpus directory (use --corpus or [paths] corpus_dir)")
    corpus = load_corpus_dir(corpus_dir)
    out = Path(args.out or cfg.embeddings_dir or (Path(corpus_dir) / "embeddings"))
    inputs = [Path(corpus_dir) / n for n in ("talks.jsonl", "papers.jsonl")]
    write_manifest(out, "embed", cfg.snapshot(), inputs)

    embedder = make_embedder(cfg.embedder)
    if isinstance(embedder, StoreEmbedder):
        raise DataError("embed writes stores; configure the reference-hash embedder")
    workers = args.workers or (os.cpu_count() or 1)
    prep = cfg.prep
    provenance = {
        "embedder": {"kind": cfg.embedder.kind, "dim": cfg.embedder.dim, "seed": cfg.embedder.seed},
        "chunk_size": prep.chunk_size,
        "chunk_overlap": prep.chunk_overlap,
    }

    from .textprep import chunk, render_text, tokenize

    chunk_ids: list[str] = []
    chunk_tokens: list[list[str]] = []
    for tid, talk in corpus.talks.items():
        text = render_text(talk, prep.query_template, prep.separator)
        cs = chunk(tokenize(text), prep.chunk_size, prep.chunk_overlap)
        for i, toks in enumerate(cs.chunks):
            chunk_ids.append(chunk_id(tid, i))
            chunk_tokens.append(toks)
    vectors = _embed_texts(embedder, chunk_tokens, workers)
    save_store(
        EmbeddingStore(
            dim=embedder.dim,
            ids=chunk_ids,
            matrix=np.vstack(vectors),
            provenance={**provenance, "template": "+".join(prep.query_template), "side": "query"},
        ),
        out / "query_chunks.rfrk",
    )

    paper_ids = list(corpus.papers)
    key_tokens = [
        tokenize(render_text(corpus.papers[pid], prep.key_template, prep.separator))
        for pid in paper_ids
    ]
    key_vectors = _embed_texts(embedder, key_tokens, workers)
    save_store(
        EmbeddingStore(
            dim=embedder.dim,
            ids=paper_ids,
            matrix=np.vstack(key_vectors),
            provenance={**provenance, "template": "+".join(prep.key_template), "side": "key"},
        ),
        out / "keys.rfrk",
    )

    if all(t.abstract for t in corpus.talks.values()):
        abs_tokens = [
            tokenize(render_text(t, prep.key_template, prep.separator))
            for t in corpus.talks.values()
        ]
        abs_vectors = _embed_texts(embedder, abs_tokens, workers)
        save_store(
            EmbeddingStore(
                dim=embedder.dim,
                ids=list(corpus.talks),
                matrix=np.vstack(abs_vectors),
                provenance={**provenance, "template": "+".join(prep.key_template), "side": "talk-abstract"},
            ),
            out / "talk_abstracts.rfrk",
        )

    print(f"embedded {len(chunk_ids)} query chunks and {len(paper_ids)} keys into {out}")
    return EXIT_OK


def _load_encoded(corpus: Corpus, embeddings_dir) -> model_mod.EncodedCorpus:
    d = Path(embeddings_dir)
    chunks_store = load_store(d / "query_chunks.rfrk")
    keys_store = load_store(d / "keys.rfrk")
    by_talk: dict[str, list[np.ndarray]] = {}
    for row_id, row in zip(chunks_store.ids, chunks_store.matrix):
        tid, _, idx = row_id.rpartition("#")
        by_talk.setdefault(tid, []).append(row.astype(np.float64))
    query_chunks = {}
    for tid in corpus.talks:
        if tid not in by_talk:
            raise DataError(f"no chunk embeddings stored for talk {tid!r}")
        query_chunks[tid] = np.vstack(by_talk[tid])
    key_emb = StoreEmbedder(keys_store)
    key_matrix = np.vstack([key_emb.lookup(pid) for pid in corpus.papers]) if corpus.papers else np.zeros((0, keys_store.dim))
    abstract_keys = {}
    abs_path = d / "talk_abstracts.rfrk"
    if abs_path.exists():
        abs_emb = StoreEmbedder(load_store(abs_path))
        abstract_keys = {tid: abs_emb.lookup(tid) for tid in corpus.talks if abs_emb.has(tid)}
    return model_mod.EncodedCorpus(
        query_chunks=query_chunks,
        paper_ids=list(corpus.papers),
        key_matrix=key_matrix,
        talk_abstract_keys=abstract_keys,
    )


def _run_training(args, stage: str) -> int:
    cfg = load_run_config(args.config)
    corpus_dir = args.corpus or cfg.corpus_dir
    embeddings_dir = args.embeddings or cfg.embeddings_dir
    out = Path(args.out or cfg.out_dir or "runs")
    if not corpus_dir or not embeddings_dir:
        raise DataError("training needs --corpus and --embeddings (or [paths] entries)")
    corpus = load_corpus_dir(corpus_dir)
    encoded = _load_encoded(corpus, embeddings_dir)
    if stage == "adapt":
        missing = [tid for tid in corpus.talks if tid not in encoded.talk_abstract_keys]
        if missing:
            from .errors import MissingField

            raise MissingField(
                f"adapt stage needs talk abstracts; {len(missing)} talks lack them (first: {missing[0]!r})"
            )
    write_manifest(out, f"train:{stage}", cfg.snapshot(), [])

    init_heads = None
    if args.init:
        init_heads, _ = load_checkpoint(args.init)
    heads, history = train(
        corpus,
        encoded,
        cfg.train,
        stage=stage,
        init_heads=init_heads,
        strategy=cfg.aggregation,
        projection=cfg.projection_enabled(),
    )
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = ckpt_dir / f"{stage}.ckpt"
    save_checkpoint(heads, ckpt_path, config_hash=cfg.config_hash(), extra={"stage": stage})
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    last = history[-1]
    print(
        f"stage {stage}: {len(history)} epochs, best epoch {last['best_epoch']}, "
        f"final dev_loss {last['dev_loss']:.6f}, dev_map10 {last['dev_map10']:.4f} -> {ckpt_path}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    return _run_training(args, args.stage)


def cmd_adapt(args) -> int:
    return _run_training(args, "adapt")


def _query_records(queries_path, corpus: Corpus | None):
    if corpus is not None and not queries_path:
        return list(corpus.talks.values())
    from .corpus import load_talks

    return list(load_talks(queries_path).values())


def cmd_retrieve(args) -> int:
    cfg = load_run_config(args.config)
    index_dir = Path(args.index)
    corpus_dir = args.corpus or cfg.corpus_dir
    if not corpus_dir:
        raise DataError("retrieve needs --corpus (or [paths] corpus_dir) for paper years")
    corpus = load_corpus_dir(corpus_dir)
    keys_store = load_store(index_dir / "keys.rfrk")
    years = []
    for pid in keys_store.ids:
        paper = corpus.papers.get(pid)
        if paper is None:
            raise DataError(f"paper {pid!r} in key store but not in corpus")
        years.append(paper.year)
    index = build_index(keys_store.ids, keys_store.matrix.astype(np.float64), years)

    heads = None
    if args.checkpoint:
        heads, _ = load_checkpoint(args.checkpoint)
    else:
        heads = DualEncoderHeads.init(
            cfg.aggregation, keys_store.dim, keys_store.dim, projection=cfg.projection_enabled()
        )

    chunks_emb = StoreEmbedder(load_store(index_dir / "query_chunks.rfrk"))
    if args.queries:
        talks = _query_records(args.queries, None)
    elif args.split:
        talks = [corpus.talks[tid] for tid in filter_split(corpus, args.split).talks]
    else:
        talks = list(corpus.talks.values())

    temporal = args.temporal or cfg.temporal
    out_path = Path(args.out)
    write_manifest(out_path.parent if out_path.suffix else out_path, "retrieve", cfg.snapshot(), [])
    results = []
    for talk in talks:
        vecs = query_chunk_vectors(talk, cfg.prep, chunks_emb)
        a, _ = aggregate(vecs, heads.strategy, heads.scorer)
        q = heads.project(a)
        cutoff = None if temporal == "off" else talk.year
        ranked = search(index, q, args.k, cutoff_year=cutoff, strict=(temporal == "strict"), talk_id=talk.id)
        results.append(ranked)
    with open(out_path, "w", encoding="utf-8") as fh:
        for ranked in results:
            fh.write(
                json.dumps(
                    {
                        "talk_id": ranked.talk_id,
                        "ranking": [{"paper_id": pid, "score": s} for pid, s in ranked.items],
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    print(f"retrieved top-{args.k} for {len(results)} talks -> {out_path}")
    return EXIT_OK


def _load_results(path) -> dict[str, list[tuple[str, float]]]:
    results = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            results[obj["talk_id"]] = [(r["paper_id"], r.get("score", 0.0)) for r in obj["ranking"]]
    if not results:
        from .evaluation import EmptyRun

        raise EmptyRun(f"no results in {path}")
    return results


def _load_citation_judgments(path) -> dict[str, set[str]]:
    judgments = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            judgments[obj["talk_id"]] = set(obj["paper_ids"])
    return judgments


def cmd_eval(args) -> int:
    results = _load_results(args.results)
    judgments = _load_citation_judgments(args.citations)
    ks = tuple(int(k) for k in args.ks.split(","))
    if args.filter_gold_by_year:
        if not args.corpus:
            raise DataError("--filter-gold-by-year needs --corpus for publication years")
        corpus = load_corpus_dir(args.corpus)
        filtered = {}
        for tid, gold in judgments.items():
            talk = corpus.talks.get(tid)
            if talk is None:
                continue
            filtered[tid] = {pid for pid in gold if corpus.papers[pid].year <= talk.year}
        judgments = filtered
    report = evaluate_run(results, judgments, ks=ks, keep_per_query=False)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "query_count": report.query_count,
        "metrics_percent": report.as_percentages(),
    }
    _write_json(out_path, payload)
    print(f"evaluated {report.query_count} queries:")
    for name, value in report.as_percentages(2).items():
        print(f"  {name:10s} {value:6.2f}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    corpus = load_corpus_dir(args.corpus)
    train_view = filter_split(corpus, "train")
    ranked_all = frequency_baseline(train_view.citations, k=None)
    years = {pid: corpus.papers[pid].year for pid in ranked_all}
    target = filter_split(corpus, args.split)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for tid, talk in target.talks.items():
            eligible = [pid for pid in ranked_all if years[pid] <= talk.year][: args.k]
            fh.write(
                json.dumps(
                    {
                        "talk_id": tid,
                        "ranking": [{"paper_id": pid, "score": 0.0} for pid in eligible],
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    print(f"frequency baseline (top {args.k}) for {len(target.talks)} {args.split} talks -> {out_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    dim = args.dim
    n_talks = args.talks
    chunk_mats = [
        0.5 * rng.standard_normal((int(rng.integers(2, args.max_chunks + 1)), dim))
        for _ in range(n_talks)
    ]
    heads = DualEncoderHeads.init(Strategy.LEARNED_MEAN, dim, dim, projection=True)
    heads.scorer.w[:] = 0.5 * rng.standard_normal(dim)
    heads.scorer.b[...] = rng.standard_normal()
    heads.P[:] = np.eye(dim) + 0.3 * rng.standard_normal((dim, dim))
    heads.p0[:] = 0.3 * rng.standard_normal(dim)

    worst = 0.0
    for kind in ("bce", "da"):
        n_cand = n_talks if kind == "da" else n_talks * 2
        key_mat = 0.5 * rng.standard_normal((n_cand, dim))
        batch = TrainingBatch(
            talk_ids=[f"t{i}" for i in range(n_talks)],
            positives=[[f"p{i}"] for i in range(n_talks)],
            candidate_ids=[f"p{j}" for j in range(n_cand)],
            chunk_mats=chunk_mats,
            key_mat=key_mat,
        )
        if kind == "da":
            target = np.arange(n_talks)
        else:
            target = (rng.random((n_talks, n_cand)) < 0.4).astype(np.float64)
        err = finite_diff_check(heads, batch, target, loss_kind=kind, h=args.h)
        print(f"gradcheck {kind}: max relative error {err:.3e}")
        worst = max(worst, err)
    if worst >= args.tolerance:
        raise NumericError(f"gradient check failed: {worst:.3e} >= {args.tolerance:.1e}")
    print(f"gradcheck passed at tolerance {args.tolerance:.1e}")
    return EXIT_OK


def cmd_synth(args) -> int:
    config = SynthConfig(
        n_talks=args.talks,
        n_papers=args.papers,
        seed=args.seed,
        late_signal=args.late_signal,
        chunk_size=args.chunk_size,
        min_refs=args.min_refs,
        max_refs=args.max_refs,
    )
    corpus = generate(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out)
    counts = {w: sum(1 for s in corpus.splits.values() if s == w) for w in ("train", "dev", "test")}
    print(
        f"synthetic corpus: {len(corpus.talks)} talks, {len(corpus.papers)} papers, "
        f"splits {counts} -> {out}"
    )
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refrank",
        description="Rank papers by citation relevance to long talk transcripts.",
    )
    parser.add_argument("--version", action="version", version=f"refrank {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus and write a normalized copy plus stats")
    p.add_argument("--talks", required=True)
    p.add_argument("--papers", required=True)
    p.add_argument("--citations", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", help="embed query chunks and keys into binary stores")
    p.add_argument("--config")
    p.add_argument("--corpus", help="normalized corpus directory")
    p.add_argument("--out", help="embeddings directory")
    p.add_argument("--workers", type=int, default=0, help="thread count (default: all cores)")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train heads (main contrastive stage by default)")
    p.add_argument("--config")
    p.add_argument("--stage", choices=("main", "adapt"), default="main")
    p.add_argument("--init", help="checkpoint to initialize from")
    p.add_argument("--corpus")
    p.add_argument("--embeddings")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="domain-adaptation stage (talk vs own abstract)")
    p.add_argument("--config")
    p.add_argument("--init")
    p.add_argument("--corpus")
    p.add_argument("--embeddings")
    p.add_argument("--out")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("retrieve", help="top-k search over the key index")
    p.add_argument("--index", required=True, help="embeddings directory (keys + query chunks)")
    p.add_argument("--queries", help="talks JSONL; defaults to corpus talks")
    p.add_argument("--split", choices=("train", "dev", "test"))
    p.add_argument("--corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--config")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--temporal", choices=("inclusive", "strict", "off"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="score a results file against gold citations")
    p.add_argument("--results", required=True)
    p.add_argument("--citations", required=True)
    p.add_argument("--ks", default="10,20,50,100,200")
    p.add_argument("--corpus")
    p.add_argument("--filter-gold-by-year", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="most-frequently-cited baseline from the train split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--k", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--talks", type=int, default=3)
    p.add_argument("--max-chunks", type=int, default=8)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a seeded synthetic corpus")
    p.add_argument("--talks", type=int, default=200)
    p.add_argument("--papers", type=int, default=1000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--late-signal", action="store_true")
    p.add_argument("--chunk-size", type=int, default=512)
    p.add_argument("--min-refs", type=int, default=5)
    p.add_argument("--max-refs", type=int, default=40)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RefrankError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())
