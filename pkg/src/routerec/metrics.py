"""Route-overlap metrics and bucketed evaluation.

Precision/recall/F1 compare the sets of intermediate locations (endpoints
are shared by construction and excluded); edit distance compares the
intermediate sequences.  Failed searches count separately and score zero
overlap with the full actual-intermediate count as edit distance, so
aggregates are always defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .data import Dataset, bucket, make_query
from .prefix_cost import HistoryBank
from .search import SearchBudgetError, Searcher, SearchConfig, UnreachableError

BUCKET_ORDER = ("short", "medium", "long")


class MetricsError(ValueError):
    """Routes being compared do not share endpoints."""


def _intermediates(route) -> tuple:
    if len(route) < 2:
        raise MetricsError(f"a route needs source and destination (got {len(route)} locations)")
    return tuple(route[1:-1])


def _check_endpoints(actual, predicted) -> None:
    if actual[0] != predicted[0] or actual[-1] != predicted[-1]:
        raise MetricsError(
            f"endpoint mismatch: actual {actual[0]}->{actual[-1]}, "
            f"predicted {predicted[0]}->{predicted[-1]}")


def prf(actual, predicted) -> tuple[float, float, float]:
    """Precision, recall, F1 over intermediate location sets."""
    _check_endpoints(actual, predicted)
    a = set(_intermediates(actual))
    p = set(_intermediates(predicted))
    if not a and not p:
        return 1.0, 1.0, 1.0
    overlap = len(a & p)
    precision = overlap / len(p) if p else 0.0
    recall = overlap / len(a) if a else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def edit_distance(actual, predicted) -> int:
    """Minimum insert/delete/substitute operations between intermediate sequences."""
    _check_endpoints(actual, predicted)
    a = _intermediates(actual)
    b = _intermediates(predicted)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j - 1] + (x != y), prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[len(b)]


@dataclass
class QueryResult:
    user: int
    bucket: str
    precision: float
    recall: float
    f1: float
    edt: float
    failed: bool


@dataclass
class BucketStats:
    bucket: str
    n_queries: int
    n_failed: int
    precision: float
    recall: float
    f1: float
    edt: float


@dataclass
class Report:
    buckets: list[BucketStats] = field(default_factory=list)
    per_query: list[QueryResult] = field(default_factory=list)

    def _mean(self, attr: str) -> float:
        if not self.per_query:
            return 0.0
        return sum(getattr(r, attr) for r in self.per_query) / len(self.per_query)

    @property
    def mean_precision(self) -> float:
        return self._mean("precision")

    @property
    def mean_recall(self) -> float:
        return self._mean("recall")

    @property
    def mean_f1(self) -> float:
        return self._mean("f1")

    @property
    def mean_edt(self) -> float:
        return self._mean("edt")

    def bucket_f1(self, name: str) -> float | None:
        for b in self.buckets:
            if b.bucket == name:
                return b.f1
        return None


def aggregate(results: list[QueryResult]) -> Report:
    buckets = []
    for name in BUCKET_ORDER:
        rows = [r for r in results if r.bucket == name]
        if not rows:
            continue
        n = len(rows)
        buckets.append(BucketStats(
            bucket=name,
            n_queries=n,
            n_failed=sum(r.failed for r in rows),
            precision=sum(r.precision for r in rows) / n,
            recall=sum(r.recall for r in rows) / n,
            f1=sum(r.f1 for r in rows) / n,
            edt=sum(r.edt for r in rows) / n,
        ))
    return Report(buckets=buckets, per_query=results)


def evaluate_queries(tagged_queries, run_route) -> Report:
    """Score (query, actual_route, bucket) triples against a route producer.

    ``run_route`` maps a query to a predicted route; raising
    SearchBudgetError/UnreachableError marks the query failed.
    """
    results = []
    for q, actual, name in tagged_queries:
        try:
            predicted = run_route(q)
        except (SearchBudgetError, UnreachableError):
            results.append(QueryResult(q.user, name, 0.0, 0.0, 0.0,
                                       float(len(_intermediates(actual))), True))
            continue
        p, r, f1 = prf(actual, predicted)
        results.append(QueryResult(q.user, name, p, r, f1,
                                   float(edit_distance(actual, predicted)), False))
    return aggregate(results)


def split_queries(dataset: Dataset, split: str):
    """Bucket-eligible (query, hidden route, bucket) triples from a split."""
    tagged = []
    for t in dataset.for_split(split):
        name = bucket(t)
        if name == "excluded":
            continue
        q, hidden = make_query(t)
        tagged.append((q, hidden, name))
    return tagged


def evaluate(model, net, dataset: Dataset, scfg: SearchConfig,
             bank: HistoryBank | None = None, split: str = "test") -> Report:
    """Search every eligible query of a split and aggregate per bucket."""
    if bank is None:
        bank = HistoryBank(model.cfg.history_cap)
        bank.refresh(model, net, dataset)
    searcher = Searcher(model, net, bank, scfg)
    return evaluate_queries(split_queries(dataset, split),
                            lambda q: searcher.run(q)[0])


def write_report_csv(report: Report, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("bucket,n_queries,n_failed,precision,recall,f1,edt\n")
        for b in report.buckets:
            f.write(f"{b.bucket},{b.n_queries},{b.n_failed},"
                    f"{b.precision:.6f},{b.recall:.6f},{b.f1:.6f},{b.edt:.6f}\n")
