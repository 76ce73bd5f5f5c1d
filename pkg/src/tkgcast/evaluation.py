"""Filtered ranking metrics for future-fact queries.

A query's rank counts how many competitor entities score at least as high as
the true object, after removing every other entity known to be a valid
answer (the filter set). Ties are pessimistic: an equal-scored competitor is
counted as ranked ahead of the truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .reasoner import multi_step_reason, queries_from_quadruples

HITS_LEVELS = (1, 3, 10)


def filtered_rank(scores, truth, filter_ids=()):
    """Pessimistic filtered rank of `truth` in a score vector.

    rank = 1 + |{o' not filtered, o' != truth : score(o') >= score(truth)}|.
    With an empty filter set this is the raw rank.
    """
    scores = np.asarray(scores)
    if not 0 <= truth < scores.shape[0]:
        raise ValueError(f"truth id {truth} outside score vector of {scores.shape[0]}")
    live = np.ones(scores.shape[0], dtype=bool)
    for e in filter_ids:
        live[e] = False
    live[truth] = False
    return 1 + int(np.count_nonzero(scores[live] >= scores[truth]))


def rank_in_ordering(ordering, truth, filter_ids=()):
    """Rank of `truth` in an explicit best-first ordering, filter removed."""
    drop = set(filter_ids) - {truth}
    rank = 0
    for e in ordering:
        if int(e) in drop:
            continue
        rank += 1
        if int(e) == truth:
            return rank
    raise ValueError(f"truth id {truth} missing from ordering")


@dataclass
class MetricReport:
    mrr: float
    hits: dict  # level -> fraction
    count: int
    per_timestamp: dict = field(default_factory=dict)  # t -> {mrr, hits_k, count}

    def as_dict(self):
        out = {
            "mrr": self.mrr,
            "count": self.count,
            "per_timestamp": {
                str(t): dict(stats) for t, stats in sorted(self.per_timestamp.items())
            },
        }
        for level, value in self.hits.items():
            out[f"hits{level}"] = value
        return out

    def to_json(self):
        return json.dumps(self.as_dict(), sort_keys=True, indent=2) + "\n"


def _summarize(ranks):
    arr = np.asarray(ranks, dtype=np.float64)
    stats = {"mrr": float(np.mean(1.0 / arr)), "count": int(arr.size)}
    for level in HITS_LEVELS:
        stats[f"hits{level}"] = float(np.mean(arr <= level))
    return stats


def evaluate(ranks, timestamps=None):
    """MRR and Hits@{1,3,10} over integer ranks, optionally split by time."""
    if len(ranks) == 0:
        raise ValueError("no ranks to evaluate")
    if timestamps is not None and len(timestamps) != len(ranks):
        raise ValueError("timestamps must parallel ranks")
    overall = _summarize(ranks)
    per_ts = {}
    if timestamps is not None:
        buckets = {}
        for r, t in zip(ranks, timestamps):
            buckets.setdefault(t, []).append(r)
        per_ts = {t: _summarize(bucket) for t, bucket in buckets.items()}
    return MetricReport(
        mrr=overall["mrr"],
        hits={level: overall[f"hits{level}"] for level in HITS_LEVELS},
        count=overall["count"],
        per_timestamp=per_ts,
    )


def build_filter_index(quadruples, num_relations, mode="time-aware"):
    """Known-answer sets for both query directions over the given facts.

    time-aware: (s, r, t) -> {o} filters only same-timestamp answers.
    static: (s, r) -> {o} filters answers seen at any time.
    """
    if mode not in ("time-aware", "static"):
        raise ValueError(f"unknown filter mode {mode!r}")
    index = {}
    for q in quadruples:
        for s, r, o in ((q.subject, q.relation, q.object),
                        (q.object, q.relation + num_relations, q.subject)):
            key = (s, r, q.timestamp) if mode == "time-aware" else (s, r)
            index.setdefault(key, set()).add(o)
    return index


def filter_ids_for(index, query, mode="time-aware"):
    key = (query.subject, query.relation, query.target) if mode == "time-aware" \
        else (query.subject, query.relation)
    return index.get(key, set())


def frequency_orderings(vocab, queries, num_entities):
    """Count-based baseline: objects by descending history count, ties by id."""
    return [
        np.argsort(-vocab.count_vector(q.subject, q.relation, num_entities), kind="stable")
        for q in queries
    ]


def evaluate_frequency_baseline(history, queries, num_entities, filter_index=None,
                                filter_mode="time-aware"):
    """Metrics for the frozen-history frequency baseline on the same queries."""
    vocab = history.replay_vocabulary()
    orderings = frequency_orderings(vocab, queries, num_entities)
    ranks = [
        rank_in_ordering(
            ordering, q.truth,
            filter_ids_for(filter_index, q, filter_mode) if filter_index else (),
        )
        for ordering, q in zip(orderings, queries)
    ]
    return evaluate(ranks, [q.target for q in queries])


def run_evaluation(model, history, test_quadruples, num_relations, *,
                   filter_quadruples=None, filter_mode="time-aware",
                   feedback="predicted", score_mode="combined",
                   top_k=10, binarize=False):
    """End-to-end evaluation of future queries built from test quadruples.

    Returns (report, answers, ranks). `filter_quadruples` defaults to the
    test facts themselves; pass the union of all splits for the standard
    protocol. Observed feedback reveals each test snapshot after its own
    timestamp has been scored.
    """
    if not test_quadruples:
        raise ValueError("no test quadruples to evaluate")
    queries = queries_from_quadruples(test_quadruples, num_relations)
    observed_future = None
    if feedback == "observed":
        observed_future = {}
        for q in test_quadruples:
            observed_future.setdefault(q.timestamp, []).append(
                (q.subject, q.relation, q.object)
            )
    answers = multi_step_reason(
        model, history, queries, top_k=top_k, feedback=feedback,
        score_mode=score_mode, binarize=binarize, observed_future=observed_future,
    )
    source = filter_quadruples if filter_quadruples is not None else test_quadruples
    index = build_filter_index(source, num_relations, filter_mode)
    ranks = [
        filtered_rank(ans.scores, q.truth, filter_ids_for(index, q, filter_mode))
        for ans, q in zip(answers, queries)
    ]
    report = evaluate(ranks, [q.target for q in queries])
    return report, answers, ranks
