"""Run configuration: a flat key = value file with sections.

Every default matches the head-training regime the package ships with, so
an empty (or absent) config file is a complete, runnable configuration.
Values wrapped in double quotes keep their whitespace (needed for the
separator). See README for the full key reference.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .aggregate import Strategy
from .embed import EmbedderSpec
from .errors import DataError
from .textprep import TextPrepConfig, parse_template
from .train import TrainConfig

TEMPORAL_MODES = ("inclusive", "strict", "off")
PROJECTION_MODES = ("on", "off", "auto")


@dataclass(frozen=True)
class RunConfig:
    corpus_dir: str = ""
    embeddings_dir: str = ""
    out_dir: str = ""
    prep: TextPrepConfig = field(default_factory=TextPrepConfig)
    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)
    aggregation: Strategy = Strategy.LEARNED_MEAN
    projection: str = "on"
    train: TrainConfig = field(default_factory=TrainConfig)
    retrieval_k: int = 50
    temporal: str = "inclusive"
    eval_ks: tuple[int, ...] = (10, 20, 50, 100, 200)
    filter_gold_by_year: bool = False
    seed: int = 13

    def projection_enabled(self) -> bool:
        if self.projection == "auto":
            return True  # dims may differ across embedders; keep the affine map
        return self.projection == "on"

    def snapshot(self) -> dict:
        snap = asdict(self)
        snap["aggregation"] = self.aggregation.value
        return snap

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.snapshot(), sort_keys=True).encode("utf-8")
        ).hexdigest()[:16]


def _unquote(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value[0] == '"' and value[-1] == '"':
        return value[1:-1]
    return value


def _parse_bool(value: str) -> bool:
    low = value.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise DataError(f"expected a boolean, got {value!r}")


def _parse_int_list(value: str) -> tuple[int, ...]:
    try:
        return tuple(int(v.strip()) for v in value.split(",") if v.strip())
    except ValueError as exc:
        raise DataError(f"expected comma-separated integers, got {value!r}") from exc


def load_run_config(path=None) -> RunConfig:
    """Load the config file; a missing path yields pure defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise DataError(f"cannot parse config {path}: {exc}") from exc

    def get(section, key, default=None):
        if parser.has_option(section, key):
            return _unquote(parser.get(section, key))
        return default

    paths = {
        "corpus_dir": get("paths", "corpus_dir", cfg.corpus_dir),
        "embeddings_dir": get("paths", "embeddings_dir", cfg.embeddings_dir),
        "out_dir": get("paths", "out_dir", cfg.out_dir),
    }

    prep = cfg.prep
    if parser.has_section("textprep"):
        prep = TextPrepConfig(
            query_template=parse_template(get("textprep", "query_template", "+".join(prep.query_template))),
            key_template=parse_template(get("textprep", "key_template", "+".join(prep.key_template))),
            separator=get("textprep", "separator", prep.separator),
            chunk_size=int(get("textprep", "chunk_size", prep.chunk_size)),
            chunk_overlap=int(get("textprep", "chunk_overlap", prep.chunk_overlap)),
        )

    emb = cfg.embedder
    if parser.has_section("embedder"):
        emb = EmbedderSpec(
            kind=get("embedder", "kind", emb.kind),
            dim=int(get("embedder", "dim", emb.dim)),
            seed=int(get("embedder", "seed", emb.seed)),
            path=get("embedder", "path", emb.path),
        )

    aggregation = Strategy.parse(get("model", "aggregation", cfg.aggregation.value))
    projection = get("model", "projection", cfg.projection)
    if projection not in PROJECTION_MODES:
        raise DataError(f"projection must be one of {PROJECTION_MODES}, got {projection!r}")

    run_seed = int(get("run", "seed", cfg.seed))
    base = cfg.train
    tr = TrainConfig(
        batch_size=int(get("train", "batch_size", base.batch_size)),
        grad_accumulation=int(get("train", "grad_accumulation", base.grad_accumulation)),
        lr_head=float(get("train", "lr_head", base.lr_head)),
        weight_decay=float(get("train", "weight_decay", base.weight_decay)),
        adam_eps=float(get("train", "adam_eps", base.adam_eps)),
        adam_beta1=float(get("train", "adam_beta1", base.adam_beta1)),
        adam_beta2=float(get("train", "adam_beta2", base.adam_beta2)),
        max_epochs=int(get("train", "max_epochs", base.max_epochs)),
        early_stop_patience=int(get("train", "early_stop_patience", base.early_stop_patience)),
        early_stop_metric=get("train", "early_stop_metric", base.early_stop_metric),
        seed=int(get("train", "seed", run_seed)),
    )

    temporal = get("retrieval", "temporal", cfg.temporal)
    if temporal not in TEMPORAL_MODES:
        raise DataError(f"temporal must be one of {TEMPORAL_MODES}, got {temporal!r}")
    retrieval_k = int(get("retrieval", "k", cfg.retrieval_k))

    eval_ks = _parse_int_list(get("eval", "ks", ",".join(str(k) for k in cfg.eval_ks)))
    filter_gold = _parse_bool(get("eval", "filter_gold_by_year", str(cfg.filter_gold_by_year)))

    return RunConfig(
        **paths,
        prep=prep,
        embedder=emb,
        aggregation=aggregation,
        projection=projection,
        train=tr,
        retrieval_k=retrieval_k,
        temporal=temporal,
        eval_ks=eval_ks,
        filter_gold_by_year=filter_gold,
        seed=run_seed,
    )
