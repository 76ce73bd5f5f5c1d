"""Temporal knowledge graph storage: datasets, snapshots, history counts.

Datasets are directories of plain-text quadruple files (`train.txt`,
`valid.txt`, `test.txt`, `stat.txt`). One event per line, tab separated:
``subject_id relation_id object_id timestamp`` with an optional ignored fifth
column. `stat.txt` holds ``num_entities num_relations``.

Every edge is stored together with its inverse: a raw event (s, r, o) also
produces (o, r + num_relations, s), so subject queries reduce to object
queries over inverse relation ids. Raw timestamps are normalized to 0-based
contiguous ordinals by dividing out the dataset's time gap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)


class DataFormatError(ValueError):
    pass


class Quadruple(NamedTuple):
    subject: int
    relation: int
    object: int
    timestamp: int


@dataclass
class SnapshotGraph:
    """All edges of one timestamp, inverse-augmented, indexed by subject."""

    timestamp: int
    edges: list  # [(s, r, o)] with each raw edge immediately followed by its inverse
    adjacency: dict  # s -> [(r, o)] in edge order
    predicted: bool = False

    @classmethod
    def from_events(cls, timestamp, events, num_relations, predicted=False):
        """Build from raw (s, r, o) triples, preserving their order."""
        edges = []
        adjacency = {}
        for s, r, o in events:
            for es, er, eo in ((s, r, o), (o, r + num_relations, s)):
                edges.append((es, er, eo))
                adjacency.setdefault(es, []).append((er, eo))
        return cls(timestamp=timestamp, edges=edges, adjacency=adjacency, predicted=predicted)

    def entities(self):
        return self.adjacency.keys()


@dataclass
class DatasetBundle:
    num_entities: int
    num_relations: int
    train: list
    valid: list
    test: list
    time_gap: int = 1
    time_unit: str = "step"

    def splits(self):
        return {"train": self.train, "valid": self.valid, "test": self.test}


def _parse_quadruple_file(path: Path):
    """Raw integer rows from one split file; line numbers for diagnostics."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) < 4:
                raise DataFormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                s, r, o, t = (int(parts[i]) for i in range(4))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-integer field in {parts[:4]}")
            rows.append((s, r, o, t))
    if not rows:
        log.warning("empty split file %s", path)
    return rows


def load_dataset(directory) -> DatasetBundle:
    """Load a dataset directory; validate ids, normalize timestamps.

    `valid.txt` is optional (some benchmarks ship without a validation
    split). Split ordering max(train) < min(valid) < min(test) is enforced
    on the raw timestamps.
    """
    directory = Path(directory)
    stat_path = directory / "stat.txt"
    if not stat_path.exists():
        raise DataFormatError(f"missing stat file {stat_path}")
    stat_parts = stat_path.read_text().split()
    if len(stat_parts) < 2:
        raise DataFormatError(f"{stat_path}: expected 'num_entities num_relations'")
    num_entities, num_relations = int(stat_parts[0]), int(stat_parts[1])

    raw = {}
    for split in ("train", "valid", "test"):
        path = directory / f"{split}.txt"
        if not path.exists():
            if split == "valid":
                raw[split] = []
                continue
            raise DataFormatError(f"missing split file {path}")
        raw[split] = _parse_quadruple_file(path)

    for split, rows in raw.items():
        for s, r, o, t in rows:
            if not (0 <= s < num_entities and 0 <= o < num_entities):
                raise DataFormatError(f"{split}: entity id out of range in ({s},{r},{o},{t})")
            if not (0 <= r < num_relations):
                raise DataFormatError(f"{split}: relation id out of range in ({s},{r},{o},{t})")

    if raw["train"] and raw["valid"]:
        if max(t for *_, t in raw["train"]) >= min(t for *_, t in raw["valid"]):
            raise DataFormatError("split ordering violated: train timestamps overlap valid")
    before_test = raw["valid"] or raw["train"]
    if before_test and raw["test"]:
        if max(t for *_, t in before_test) >= min(t for *_, t in raw["test"]):
            raise DataFormatError("split ordering violated: earlier timestamps overlap test")

    all_ts = sorted({t for rows in raw.values() for *_, t in rows})
    if all_ts:
        base = all_ts[0]
        gap = 0
        for t in all_ts[1:]:
            gap = math.gcd(gap, t - base)
        gap = gap or 1
    else:
        base, gap = 0, 1

    def normalize(rows):
        return [Quadruple(s, r, o, (t - base) // gap) for s, r, o, t in rows]

    return DatasetBundle(
        num_entities=num_entities,
        num_relations=num_relations,
        train=normalize(raw["train"]),
        valid=normalize(raw["valid"]),
        test=normalize(raw["test"]),
        time_gap=gap,
    )


def build_snapshots(quadruples, num_relations, predicted=False):
    """One inverse-augmented snapshot per distinct timestamp, ascending.

    File order of events within a timestamp is preserved (the temporal
    module's pair sequences depend on it).
    """
    by_ts = {}
    for q in quadruples:
        by_ts.setdefault(q.timestamp, []).append((q.subject, q.relation, q.object))
    return [
        SnapshotGraph.from_events(t, by_ts[t], num_relations, predicted=predicted)
        for t in sorted(by_ts)
    ]


class HistoryVocabulary:
    """Running (subject, relation) -> object occurrence counts over past graphs.

    The count for (s, r, o) after replaying snapshots up to time t equals the
    number of timestamps t' <= t at which (s, r, o) was present, i.e. the sum
    of the per-timestamp multi-hot indicator vectors.
    """

    def __init__(self):
        self.counts: dict = {}  # (s, r) -> {o: count}
        self.last_updated: int | None = None

    def update(self, snapshot: SnapshotGraph):
        if self.last_updated is not None and snapshot.timestamp <= self.last_updated:
            raise ValueError(
                f"out-of-order vocabulary update: snapshot {snapshot.timestamp} "
                f"after {self.last_updated}"
            )
        # presence is per timestamp: a fact listed twice in one graph counts once
        for s, r, o in set(snapshot.edges):
            bucket = self.counts.setdefault((s, r), {})
            bucket[o] = bucket.get(o, 0) + 1
        self.last_updated = snapshot.timestamp

    def count_vector(self, s, r, num_entities):
        """Dense length-|E| vector of historical object counts for (s, r)."""
        vec = np.zeros(num_entities)
        for o, c in self.counts.get((s, r), {}).items():
            vec[o] = c
        return vec

    def copy(self):
        dup = HistoryVocabulary()
        dup.counts = {key: dict(bucket) for key, bucket in self.counts.items()}
        dup.last_updated = self.last_updated
        return dup


@dataclass
class GraphHistory:
    """Ordered snapshot sequence (observed + predicted) with history queries."""

    snapshots: list = field(default_factory=list)
    _pair_sets: dict = field(default_factory=dict, repr=False)
    _pair_cursor: int = 0

    @classmethod
    def from_quadruples(cls, quadruples, num_relations):
        return cls(snapshots=build_snapshots(quadruples, num_relations))

    def append(self, snapshot: SnapshotGraph):
        if self.snapshots and snapshot.timestamp <= self.snapshots[-1].timestamp:
            raise ValueError(
                f"snapshot {snapshot.timestamp} not after {self.snapshots[-1].timestamp}"
            )
        self.snapshots.append(snapshot)

    @property
    def latest_timestamp(self):
        return self.snapshots[-1].timestamp if self.snapshots else None

    def window_before(self, t, m):
        """The <= m most recent snapshots strictly before time t."""
        earlier = [g for g in self.snapshots if g.timestamp < t]
        return earlier[-m:]

    def candidate_pairs(self, s, up_to_t):
        """Entities that had any event with s strictly before `up_to_t`.

        Inverse augmentation makes this direction-complete: (x, r, s, t') also
        stores (s, r+R, x, t'), so scanning s's adjacency suffices. The index
        is advanced incrementally because callers sweep time forward.
        """
        target = 0
        while target < len(self.snapshots) and self.snapshots[target].timestamp < up_to_t:
            target += 1
        if target < self._pair_cursor:
            self._pair_sets = {}
            self._pair_cursor = 0
        while self._pair_cursor < target:
            snap = self.snapshots[self._pair_cursor]
            for subj, pairs in snap.adjacency.items():
                bucket = self._pair_sets.setdefault(subj, set())
                for _, o in pairs:
                    bucket.add(o)
            self._pair_cursor += 1
        return set(self._pair_sets.get(s, ()))

    def replay_vocabulary(self, up_to_t=None):
        """Vocabulary over snapshots strictly before `up_to_t` (all, if None)."""
        vocab = HistoryVocabulary()
        for snap in self.snapshots:
            if up_to_t is not None and snap.timestamp >= up_to_t:
                break
            vocab.update(snap)
        return vocab
