"""Multi-step forecasting: predict future graphs, answer future queries.

Queries ask for the object of (subject, relation, ?) at a future timestamp.
Subject queries are expressed through inverse relation ids, so one code path
serves both directions. For targets more than one step ahead, the horizon is
walked one timestamp at a time: each intermediate step scores candidate
facts, keeps the best per subject, and feeds the resulting predicted graph
back into the history before moving on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .data import GraphHistory, SnapshotGraph
from .scoring import (
    repetitive_distribution,
    score_vector,
    structural_score,
    structural_scores_all,
    temporal_distribution,
)

log = logging.getLogger(__name__)

FEEDBACK_MODES = ("predicted", "observed", "none")
SCORE_MODES = ("structural", "repetitive", "combined")


class Query(NamedTuple):
    subject: int
    relation: int
    target: int
    truth: int = -1  # ground-truth object id, -1 when unknown


@dataclass
class RankedAnswer:
    query: Query
    scores: np.ndarray  # (|E|,) ranking signal
    ordering: np.ndarray  # entity ids, best first, score ties broken by lower id

    def top(self, n=20):
        return self.ordering[:n].tolist()


def queries_from_quadruples(quadruples, num_relations):
    """Object query plus inverse-relation subject query per quadruple."""
    out = []
    for q in quadruples:
        out.append(Query(q.subject, q.relation, q.timestamp, q.object))
        out.append(Query(q.object, q.relation + num_relations, q.timestamp, q.subject))
    return out


def _ordering(scores):
    return np.argsort(-scores, kind="stable")


def _count_matrix(vocab, keys, num_entities, binarize):
    counts = np.stack([vocab.count_vector(s, r, num_entities) for s, r in keys])
    return np.minimum(counts, 1.0) if binarize else counts


def generate_candidate_quadruples(model, hist, window, states, presents, subjects, t_prime):
    """One candidate fact per historical pair: the most probable relation.

    Pairs whose shared events all fall outside the window carry no sequence
    to encode and are skipped. Returns [(s, r, o)], possibly empty.
    """
    pair_set = set()
    for s in subjects:
        for o in hist.candidate_pairs(s, t_prime):
            pair_set.add((s, o))
    encoded = model.pair_embeddings(window, states, sorted(pair_set))
    live = sorted(encoded)
    if not live:
        log.info("no scorable candidate pairs at t=%d", t_prime)
        return []
    ids = sorted({e for pair in live for e in pair})
    z = model.temporal_entity_embeddings(states, presents, ids)
    pos = {e: i for i, e in enumerate(ids)}
    z_s = ad.gather_rows(z, np.array([pos[s] for s, _ in live], dtype=np.int64))
    z_o = ad.gather_rows(z, np.array([pos[o] for _, o in live], dtype=np.int64))
    z_so = ad.concat([encoded[pair] for pair in live], axis=0)
    dist = temporal_distribution(z_s, z_so, z_o, model.temporal_project).value
    best = np.argmax(dist, axis=1)  # ties resolve to the lowest relation id
    return [(s, int(r), o) for (s, o), r in zip(live, best)]


def canonical_event(s, r, o, num_relations):
    """Raw orientation of a candidate fact; inverse-relation picks flip."""
    if r >= num_relations:
        return (o, r - num_relations, s)
    return (s, r, o)


def select_top_candidates(candidates, scores, top_k):
    """Keep each subject's top-k candidates; ties prefer lower object ids."""
    by_subject = {}
    for idx, (s, _, o) in enumerate(candidates):
        by_subject.setdefault(s, []).append((-scores[idx], o, idx))
    kept = []
    for s in sorted(by_subject):
        ranked = sorted(by_subject[s])
        kept.extend(candidates[idx] for *_, idx in ranked[:top_k])
    return kept


def step_predict(model, hist, vocab, window, states, presents, subjects, t_prime,
                 *, top_k=10, binarize=False):
    """Predict G(t'): keep each subject's top-k candidate facts.

    Candidates are ranked by structural + vocabulary score; ties prefer the
    lower object id. Returns the predicted snapshot, or None when no subject
    has scorable candidates.
    """
    candidates = generate_candidate_quadruples(
        model, hist, window, states, presents, subjects, t_prime
    )
    if not candidates:
        return None
    final = model.final_state(states)
    subs = np.array([c[0] for c in candidates], dtype=np.int64)
    rels = np.array([c[1] for c in candidates], dtype=np.int64)
    objs = np.array([c[2] for c in candidates], dtype=np.int64)
    x_s = ad.gather_rows(final.entities, subs)
    x_r = ad.gather_rows(final.relations, rels)
    x_o = ad.gather_rows(final.entities, objs)
    i_s = structural_score(x_s, x_r, x_o).value
    counts = _count_matrix(vocab, zip(subs, rels), model.num_entities, binarize)
    rep = repetitive_distribution(
        ad.gather_rows(model.prefs.entity, subs),
        ad.gather_rows(model.prefs.relation, rels),
        counts,
        model.prefs.project,
    ).value
    i_h = rep[np.arange(len(candidates)), objs]
    kept = select_top_candidates(candidates, i_s + i_h, top_k)
    # two subjects can pick the same pair from opposite directions; the
    # canonical orientation dedupes them before inverse augmentation
    events = sorted({canonical_event(s, r, o, model.num_relations) for s, r, o in kept})
    return SnapshotGraph.from_events(t_prime, events, model.num_relations, predicted=True)


def _answer_queries(model, states, vocab, due, binarize, score_mode):
    final = model.final_state(states)
    subs = np.array([q.subject for q in due], dtype=np.int64)
    rels = np.array([q.relation for q in due], dtype=np.int64)
    x_s = ad.gather_rows(final.entities, subs)
    x_r = ad.gather_rows(final.relations, rels)
    structural = structural_scores_all(x_s, x_r, final.entities)
    counts = _count_matrix(vocab, zip(subs, rels), model.num_entities, binarize)
    repetitive = repetitive_distribution(
        ad.gather_rows(model.prefs.entity, subs),
        ad.gather_rows(model.prefs.relation, rels),
        counts,
        model.prefs.project,
    )
    scores = score_vector((structural, repetitive), score_mode).value
    return [
        RankedAnswer(query=q, scores=scores[i].copy(), ordering=_ordering(scores[i]))
        for i, q in enumerate(due)
    ]


def multi_step_reason(model, history, queries, *, top_k=10, feedback="predicted",
                      score_mode="combined", binarize=False, observed_future=None):
    """Answer queries at one or more future timestamps.

    `history` holds the observed snapshots; it is not mutated. Targets are
    processed in ascending order so intermediate predicted (or observed,
    depending on `feedback`) graphs are in place before later targets are
    scored. Answers come back in query order.
    """
    if feedback not in FEEDBACK_MODES:
        raise ValueError(f"unknown feedback mode {feedback!r}")
    if score_mode not in SCORE_MODES:
        raise ValueError(f"unknown score mode {score_mode!r}")
    if feedback == "observed" and observed_future is None:
        raise ValueError("observed feedback requires observed_future events")
    if not queries:
        return []

    hist = GraphHistory(snapshots=list(history.snapshots))
    last = hist.latest_timestamp
    if last is None:
        raise ValueError("cannot reason over an empty history")
    horizon = sorted({q.target for q in queries})
    if horizon[0] <= last:
        raise ValueError(
            f"query target {horizon[0]} is not after the last observed timestamp {last}"
        )
    vocab = hist.replay_vocabulary()

    answers = {}
    with ad.no_grad():
        for t_prime in range(last + 1, horizon[-1] + 1):
            due = [(i, q) for i, q in enumerate(queries) if q.target == t_prime]
            later = [q for q in queries if q.target > t_prime]
            predict_here = bool(later) and feedback == "predicted"
            if due or predict_here:
                window = hist.window_before(t_prime, model.window)
                states, presents = model.roll_window(window)
            if due:
                ranked = _answer_queries(
                    model, states, vocab, [q for _, q in due], binarize, score_mode
                )
                for (i, _), ans in zip(due, ranked):
                    answers[i] = ans
            if not later:
                break
            if feedback == "observed":
                events = observed_future.get(t_prime, [])
                if events:
                    snap = SnapshotGraph.from_events(t_prime, events, model.num_relations)
                    hist.append(snap)
                    vocab.update(snap)
            elif predict_here:
                snap = step_predict(
                    model, hist, vocab, window, states, presents,
                    sorted({q.subject for q in later}), t_prime,
                    top_k=top_k, binarize=binarize,
                )
                if snap is not None:
                    hist.append(snap)
                    vocab.update(snap)
    return [answers[i] for i in range(len(queries))]


def write_predictions(answers, path, ranks=None, top_n=20):
    """Tab-separated answer lines: subject relation target rank top-n ids.

    `ranks` is an optional per-answer list; -1 marks an unknown rank (no
    ground truth). The id list is comma-joined, best first.
    """
    with open(path, "w") as fh:
        for i, ans in enumerate(answers):
            rank = -1 if ranks is None else ranks[i]
            ids = ",".join(str(e) for e in ans.top(top_n))
            fh.write(
                f"{ans.query.subject}\t{ans.query.relation}\t{ans.query.target}"
                f"\t{rank}\t{ids}\n"
            )
