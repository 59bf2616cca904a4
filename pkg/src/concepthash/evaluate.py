"""Retrieval quality metrics over packed codes and label tables.

Two items are relevant to each other iff their label sets intersect.  Metric
aggregation deliberately uses plain sequential arithmetic (not pairwise
reductions) so results are reproducible to the bit and match a textbook
reference implementation exactly.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datastore import LabelTable, PackedCodeSet
from .hamming import radius_histogram, rank_topn


def relevant(a: frozenset, b: frozenset) -> bool:
    """True iff the two label sets share at least one label."""
    if not a or not b:
        raise ValueError("label sets must be non-empty")
    return not frozenset(a).isdisjoint(b)


def average_precision(rel: Sequence[bool]) -> float:
    """Average precision of an ordered relevance sequence; 0.0 if none relevant."""
    if len(rel) < 1:
        raise ValueError("relevance sequence must be non-empty")
    hits = 0
    total = 0.0
    for i, flag in enumerate(rel, 1):
        if flag:
            hits += 1
            total += hits / i
    return total / hits if hits else 0.0


@dataclass(frozen=True)
class RetrievalReport:
    map: float
    map_n: int
    p_at_n: tuple[tuple[int, float], ...]
    pr_curve: tuple[tuple[int, float, float], ...]
    queries_without_relevant: int


def _check_pair(codes: PackedCodeSet, labels: LabelTable, what: str) -> None:
    if codes.n != labels.n:
        raise ValueError(
            f"{what}: {codes.n} codes but {labels.n} label rows"
        )


def _map_queries(fn, count: int, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(count)))
    return [fn(i) for i in range(count)]


def map_at_n(
    queries: PackedCodeSet,
    query_labels: LabelTable,
    db: PackedCodeSet,
    db_labels: LabelTable,
    top_n: int,
    threads: int = 1,
) -> float:
    """Mean average precision over the top_n Hamming-ranked results per query."""
    _check_pair(queries, query_labels, "queries")
    _check_pair(db, db_labels, "database")
    if queries.code_bits != db.code_bits:
        raise ValueError("query and database code lengths differ")
    if not 1 <= top_n <= db.n:
        raise ValueError(f"top_n {top_n} out of range for a database of {db.n}")

    def one(i: int) -> float:
        order = rank_topn(queries.words[i], db, top_n)
        own = query_labels.labels[i]
        return average_precision([relevant(own, db_labels.labels[j]) for j in order])

    scores = _map_queries(one, queries.n, threads)
    return sum(scores) / len(scores)


def precision_at_n_curve(
    queries: PackedCodeSet,
    query_labels: LabelTable,
    db: PackedCodeSet,
    db_labels: LabelTable,
    points: Sequence[int],
    threads: int = 1,
) -> list[tuple[int, float]]:
    """Mean precision within the top N results, for each N in points."""
    _check_pair(queries, query_labels, "queries")
    _check_pair(db, db_labels, "database")
    if queries.code_bits != db.code_bits:
        raise ValueError("query and database code lengths differ")
    points = [int(p) for p in points]
    if not points:
        raise ValueError("need at least one curve point")
    for p in points:
        if not 1 <= p <= db.n:
            raise ValueError(f"curve point {p} out of range for a database of {db.n}")
    depth = max(points)

    def one(i: int) -> np.ndarray:
        order = rank_topn(queries.words[i], db, depth)
        own = query_labels.labels[i]
        flags = np.array([relevant(own, db_labels.labels[j]) for j in order])
        return np.cumsum(flags)

    prefix_hits = _map_queries(one, queries.n, threads)
    curve = []
    for p in points:
        per_query = [hits[p - 1] / p for hits in prefix_hits]
        curve.append((p, sum(per_query) / len(per_query)))
    return curve


def pr_curve_hamming(
    queries: PackedCodeSet,
    query_labels: LabelTable,
    db: PackedCodeSet,
    db_labels: LabelTable,
    macro: bool = False,
    threads: int = 1,
) -> tuple[list[tuple[int, float, float]], int]:
    """Precision/recall while sweeping the Hamming radius from 0 to code_bits.

    Micro-pooled by default: counts are summed over queries before the
    ratios.  Radii where nothing is retrieved report precision 1.0.  Queries
    with no relevant database item cannot contribute recall; they are counted
    and returned alongside the curve.
    """
    _check_pair(queries, query_labels, "queries")
    _check_pair(db, db_labels, "database")
    if queries.code_bits != db.code_bits:
        raise ValueError("query and database code lengths differ")
    k = db.code_bits

    def one(i: int):
        own = query_labels.labels[i]
        flags = np.array([relevant(own, lab) for lab in db_labels.labels])
        retrieved, rel_retrieved = radius_histogram(queries.words[i], db, flags)
        return np.cumsum(retrieved), np.cumsum(rel_retrieved), int(flags.sum())

    per_query = _map_queries(one, queries.n, threads)
    skipped = sum(1 for _, _, total in per_query if total == 0)

    curve = []
    if macro:
        for r in range(k + 1):
            precisions = [
                (rel[r] / ret[r]) if ret[r] else 1.0 for ret, rel, _ in per_query
            ]
            recalls = [
                rel[r] / total for _, rel, total in per_query if total > 0
            ]
            precision = sum(precisions) / len(precisions)
            recall = sum(recalls) / len(recalls) if recalls else 0.0
            curve.append((r, precision, recall))
        return curve, skipped

    total_relevant = sum(total for _, _, total in per_query)
    for r in range(k + 1):
        retrieved = sum(int(ret[r]) for ret, _, _ in per_query)
        rel_retrieved = sum(int(rel[r]) for _, rel, _ in per_query)
        precision = (rel_retrieved / retrieved) if retrieved else 1.0
        recall = (rel_retrieved / total_relevant) if total_relevant else 0.0
        curve.append((r, precision, recall))
    return curve, skipped


def evaluate_retrieval(
    queries: PackedCodeSet,
    query_labels: LabelTable,
    db: PackedCodeSet,
    db_labels: LabelTable,
    top_n: int,
    p_at_n_points: Sequence[int],
    macro_pr: bool = False,
    threads: int = 1,
) -> RetrievalReport:
    """Run all three metrics and bundle them into one report."""
    curve, skipped = pr_curve_hamming(
        queries, query_labels, db, db_labels, macro=macro_pr, threads=threads
    )
    return RetrievalReport(
        map=map_at_n(queries, query_labels, db, db_labels, top_n, threads=threads),
        map_n=top_n,
        p_at_n=tuple(
            precision_at_n_curve(
                queries, query_labels, db, db_labels, p_at_n_points, threads=threads
            )
        ),
        pr_curve=tuple(curve),
        queries_without_relevant=skipped,
    )


def write_report_csvs(report: RetrievalReport, out_dir) -> None:
    """Emit map.csv, p_at_n.csv and pr.csv (headers, 9 significant digits)."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "map.csv"), "w", encoding="utf-8") as f:
        f.write("map,map_n\n")
        f.write(f"{report.map:.9g},{report.map_n}\n")
    with open(os.path.join(out_dir, "p_at_n.csv"), "w", encoding="utf-8") as f:
        f.write("n,precision\n")
        for n, precision in report.p_at_n:
            f.write(f"{n},{precision:.9g}\n")
    with open(os.path.join(out_dir, "pr.csv"), "w", encoding="utf-8") as f:
        f.write("radius,precision,recall\n")
        for radius, precision, recall in report.pr_curve:
            f.write(f"{radius},{precision:.9g},{recall:.9g}\n")
