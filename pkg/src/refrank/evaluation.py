"""Ranking metrics against gold citation sets, plus the frequency baseline.

All metrics are fractions in [0, 1]; reports and the CLI render them as
percentages. Averaging is macro (per query, then mean).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DataError

DEFAULT_KS = (10, 20, 50, 100, 200)


class EmptyGold(DataError):
    pass


class MissingJudgment(DataError):
    pass


class EmptyRun(DataError):
    pass


@dataclass
class MetricsReport:
    query_count: int
    values: dict[str, float]  # macro means, fractions in [0, 1]
    per_query: dict[str, dict[str, float]] = field(default_factory=dict)

    def as_percentages(self, ndigits: int | None = None) -> dict[str, float]:
        out = {name: 100.0 * v for name, v in self.values.items()}
        if ndigits is not None:
            out = {name: round(v, ndigits) for name, v in out.items()}
        return out


def _ranked_ids(ranking) -> list[str]:
    # accepts a plain id list or a list of (id, score) pairs
    return [item[0] if isinstance(item, tuple) else item for item in ranking]


def _hits(ranking_ids: list[str], gold: set[str], k: int) -> int:
    return sum(1 for pid in ranking_ids[:k] if pid in gold)


def precision_at_k(ranking, gold: set[str], k: int) -> float:
    """|top-k intersect gold| / k; the denominator stays k even when fewer
    results were returned."""
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if not gold:
        raise EmptyGold("empty gold set")
    return _hits(_ranked_ids(ranking), gold, k) / k


def recall_at_k(ranking, gold: set[str], k: int) -> float:
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if not gold:
        raise EmptyGold("empty gold set")
    return _hits(_ranked_ids(ranking), gold, k) / len(gold)


def average_precision_at_k(ranking, gold: set[str], k: int) -> float:
    """AP@k with denominator min(k, |gold|), so a perfect prefix scores 1."""
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if not gold:
        raise EmptyGold("empty gold set")
    ids = _ranked_ids(ranking)
    hits = 0
    total = 0.0
    for i, pid in enumerate(ids[:k], start=1):
        if pid in gold:
            hits += 1
            total += hits / i
    return total / min(k, len(gold))


def map_at_k(rankings, golds, k: int) -> float:
    if len(rankings) != len(golds):
        raise DataError(f"{len(rankings)} rankings vs {len(golds)} gold sets")
    if not rankings:
        raise EmptyRun("no rankings to evaluate")
    return sum(average_precision_at_k(r, g, k) for r, g in zip(rankings, golds)) / len(rankings)


def r_precision(ranking, gold: set[str]) -> float:
    """Precision at a cutoff equal to the query's own gold-set size."""
    if not gold:
        raise EmptyGold("empty gold set")
    return precision_at_k(ranking, gold, len(gold))


def frequency_baseline(citations: dict[str, set[str]], k: int | None = None) -> list[str]:
    """Papers ranked by citation count (descending), ties by ascending id.

    The full list is returned when k is None; callers serving queries
    apply their temporal filter first and then cut to k.
    """
    counts: dict[str, int] = {}
    for pids in citations.values():
        for pid in pids:
            counts[pid] = counts.get(pid, 0) + 1
    ranked = sorted(counts, key=lambda pid: (-counts[pid], pid))
    return ranked if k is None else ranked[:k]


def evaluate_run(
    results: dict[str, list],
    judgments: dict[str, set[str]],
    ks=DEFAULT_KS,
    keep_per_query: bool = True,
) -> MetricsReport:
    """Macro-averaged Precision (R-precision), P@k, R@k, MAP@k for each k.

    results: talk_id -> ranking (ids or (id, score) pairs).
    judgments: talk_id -> gold paper-id set.
    """
    if not results:
        raise EmptyRun("results are empty")
    ks = sorted(set(int(k) for k in ks))
    if any(k < 1 for k in ks):
        raise DataError("cutoffs must be >= 1")
    metric_names = ["Precision"]
    for k in ks:
        metric_names.append(f"P@{k}")
    for k in ks:
        metric_names.append(f"R@{k}")
    for k in ks:
        metric_names.append(f"MAP@{k}")

    per_query: dict[str, dict[str, float]] = {}
    for tid, ranking in results.items():
        gold = judgments.get(tid)
        if not gold:
            raise MissingJudgment(f"no gold judgments for talk {tid!r}")
        row = {"Precision": r_precision(ranking, gold)}
        for k in ks:
            row[f"P@{k}"] = precision_at_k(ranking, gold, k)
            row[f"R@{k}"] = recall_at_k(ranking, gold, k)
            row[f"MAP@{k}"] = average_precision_at_k(ranking, gold, k)
        per_query[tid] = row

    n = len(per_query)
    values = {name: sum(row[name] for row in per_query.values()) / n for name in metric_names}
    return MetricsReport(
        query_count=n,
        values=values,
        per_query=per_query if keep_per_query else {},
    )
