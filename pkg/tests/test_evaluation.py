"""Ranking and metric checks against hand cases and a scan-based reference."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tkgcast import evaluation as ev
from tkgcast.data import GraphHistory, Quadruple
from tkgcast.model import HipModel
from tkgcast.reasoner import Query
from tkgcast.structural import SipConfig


def oracle_rank(scores, truth, filter_ids):
    blocked = set(filter_ids) - {truth}
    ahead = 0
    for o, sc in enumerate(scores):
        if o == truth or o in blocked:
            continue
        if sc >= scores[truth]:
            ahead += 1
    return 1 + ahead


# ---------------------------------------------------------------------------
# filtered_rank


def test_rank_strictly_best_is_one():
    assert ev.filtered_rank([0.1, 0.9, 0.3], truth=1) == 1


def test_rank_all_equal_is_pessimistic():
    assert ev.filtered_rank([0.5] * 5, truth=2) == 5


def test_rank_equal_competitor_counts_ahead():
    assert ev.filtered_rank([0.9, 0.9, 0.1], truth=1) == 2


def test_filter_removes_competitors():
    scores = [0.9, 0.8, 0.7, 0.1]
    assert ev.filtered_rank(scores, truth=2) == 3
    assert ev.filtered_rank(scores, truth=2, filter_ids={0, 1}) == 1


def test_filter_containing_truth_is_harmless():
    scores = [0.9, 0.8, 0.7]
    assert ev.filtered_rank(scores, truth=1, filter_ids={1}) == 2


def test_rank_rejects_out_of_range_truth():
    with pytest.raises(ValueError, match="outside"):
        ev.filtered_rank([0.1, 0.2], truth=5)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_rank_matches_scan_reference(data):
    n = data.draw(st.integers(2, 12))
    scores = data.draw(
        st.lists(st.sampled_from([0.0, 0.25, 0.5, 1.0]), min_size=n, max_size=n)
    )
    truth = data.draw(st.integers(0, n - 1))
    filt = data.draw(st.sets(st.integers(0, n - 1), max_size=n - 1))
    assert ev.filtered_rank(scores, truth, filt) == oracle_rank(scores, truth, filt)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_growing_filter_never_worsens_rank(data):
    n = data.draw(st.integers(2, 10))
    rng = np.random.default_rng(data.draw(st.integers(0, 1000)))
    scores = rng.random(n)
    truth = data.draw(st.integers(0, n - 1))
    small = data.draw(st.sets(st.integers(0, n - 1), max_size=3))
    extra = data.draw(st.sets(st.integers(0, n - 1), max_size=3))
    assert ev.filtered_rank(scores, truth, small | extra) <= ev.filtered_rank(
        scores, truth, small
    )


# ---------------------------------------------------------------------------
# explicit orderings


def test_rank_in_ordering_basic_and_filtered():
    ordering = [4, 2, 0, 1, 3]
    assert ev.rank_in_ordering(ordering, truth=0) == 3
    assert ev.rank_in_ordering(ordering, truth=0, filter_ids={4, 2}) == 1
    assert ev.rank_in_ordering(ordering, truth=0, filter_ids={0, 4}) == 2


def test_rank_in_ordering_missing_truth():
    with pytest.raises(ValueError, match="missing"):
        ev.rank_in_ordering([1, 2], truth=7)


# ---------------------------------------------------------------------------
# metric aggregation


def test_evaluate_hand_values():
    report = ev.evaluate([1, 2, 10])
    np.testing.assert_allclose(report.mrr, (1 + 0.5 + 0.1) / 3)
    assert report.hits[1] == pytest.approx(1 / 3)
    assert report.hits[3] == pytest.approx(2 / 3)
    assert report.hits[10] == 1.0
    assert report.count == 3


def test_evaluate_per_timestamp_buckets():
    report = ev.evaluate([1, 4, 2, 1], timestamps=[7, 7, 8, 8])
    assert set(report.per_timestamp) == {7, 8}
    np.testing.assert_allclose(report.per_timestamp[7]["mrr"], (1 + 0.25) / 2)
    np.testing.assert_allclose(report.per_timestamp[8]["mrr"], (0.5 + 1) / 2)
    assert report.per_timestamp[8]["count"] == 2


def test_evaluate_rejects_empty_and_mismatch():
    with pytest.raises(ValueError, match="no ranks"):
        ev.evaluate([])
    with pytest.raises(ValueError, match="parallel"):
        ev.evaluate([1, 2], timestamps=[3])


def test_report_json_is_deterministic():
    a = ev.evaluate([1, 3, 5, 2], timestamps=[1, 1, 2, 2]).to_json()
    b = ev.evaluate([1, 3, 5, 2], timestamps=[1, 1, 2, 2]).to_json()
    assert a == b
    assert a.encode() == b.encode()
    assert '"mrr"' in a and '"hits10"' in a


# ---------------------------------------------------------------------------
# filter construction


def test_filter_index_covers_both_directions():
    quads = [Quadruple(0, 1, 2, 5), Quadruple(3, 1, 2, 6)]
    idx = ev.build_filter_index(quads, num_relations=4)
    assert idx[(0, 1, 5)] == {2}
    assert idx[(2, 5, 5)] == {0}  # inverse: relation 1 + 4
    assert idx[(2, 5, 6)] == {3}
    assert (0, 1, 6) not in idx


def test_static_filter_merges_timestamps():
    quads = [Quadruple(0, 1, 2, 5), Quadruple(0, 1, 4, 6)]
    idx = ev.build_filter_index(quads, num_relations=4, mode="static")
    assert idx[(0, 1)] == {2, 4}
    with pytest.raises(ValueError, match="filter mode"):
        ev.build_filter_index(quads, num_relations=4, mode="sometimes")


def test_filter_ids_for_query_lookup():
    quads = [Quadruple(0, 1, 2, 5)]
    idx = ev.build_filter_index(quads, num_relations=4)
    assert ev.filter_ids_for(idx, Query(0, 1, 5, 2)) == {2}
    assert ev.filter_ids_for(idx, Query(0, 1, 9, 2)) == set()
    static = ev.build_filter_index(quads, num_relations=4, mode="static")
    assert ev.filter_ids_for(static, Query(0, 1, 9, 2), mode="static") == {2}


# ---------------------------------------------------------------------------
# frequency baseline


def test_frequency_orderings_sorted_by_count_then_id():
    hist = GraphHistory.from_quadruples(
        [Quadruple(0, 0, 2, 0), Quadruple(0, 0, 2, 1), Quadruple(0, 0, 1, 1)],
        num_relations=1,
    )
    vocab = hist.replay_vocabulary()
    orderings = ev.frequency_orderings(vocab, [Query(0, 0, 9, 1)], num_entities=4)
    assert orderings[0].tolist() == [2, 1, 0, 3]


def test_frequency_orderings_empty_history_identity():
    hist = GraphHistory.from_quadruples([Quadruple(0, 0, 1, 0)], num_relations=1)
    vocab = hist.replay_vocabulary()
    orderings = ev.frequency_orderings(vocab, [Query(3, 1, 9, 0)], num_entities=4)
    assert orderings[0].tolist() == [0, 1, 2, 3]


def test_frequency_baseline_report():
    quads = [Quadruple(0, 0, 2, t) for t in range(3)] + [Quadruple(0, 0, 1, 2)]
    hist = GraphHistory.from_quadruples(quads, num_relations=1)
    queries = [Query(0, 0, 5, 2), Query(0, 0, 5, 1)]
    report = ev.evaluate_frequency_baseline(hist, queries, num_entities=4)
    # entity 2 counted 3 times, entity 1 once: ranks 1 and 2
    np.testing.assert_allclose(report.mrr, (1 + 0.5) / 2)
    filtered = ev.evaluate_frequency_baseline(
        hist, queries, num_entities=4,
        filter_index={(0, 0, 5): {1, 2}}, filter_mode="time-aware",
    )
    assert filtered.mrr == 1.0  # each truth filters the other answer away


# ---------------------------------------------------------------------------
# end-to-end wrapper


def test_run_evaluation_integration():
    train = [
        Quadruple(0, 0, 1, 0), Quadruple(2, 1, 3, 0),
        Quadruple(0, 0, 1, 1), Quadruple(1, 1, 4, 1),
    ]
    test = [Quadruple(0, 0, 1, 2), Quadruple(2, 1, 3, 3)]
    hist = GraphHistory.from_quadruples(train, num_relations=2)
    rng = np.random.default_rng(0)
    model = HipModel.build(5, 2, SipConfig(dim=6, channels=2, layers=1), 3, rng)
    report, answers, ranks = ev.run_evaluation(
        model, hist, test, num_relations=2, filter_quadruples=train + test,
    )
    assert report.count == 4  # two directions per test fact
    assert len(answers) == len(ranks) == 4
    assert all(1 <= r <= 5 for r in ranks)
    assert set(report.per_timestamp) == {2, 3}

    observed, _, _ = ev.run_evaluation(
        model, hist, test, num_relations=2, feedback="observed",
    )
    assert observed.count == 4

    with pytest.raises(ValueError, match="no test quadruples"):
        ev.run_evaluation(model, hist, [], num_relations=2)
