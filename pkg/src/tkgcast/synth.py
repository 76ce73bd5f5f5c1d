"""Synthetic temporal knowledge graphs with known regularities.

Two generators: a fully deterministic pattern set (strict repetitions plus
period-2 alternations) whose optimal rankings can be worked out by hand, and
a seeded noisy variant for comparative runs. Both write standard dataset
directories (train/valid/test/stat.txt) loadable by the data module.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

REPETITION_FACTS = 14  # (s, r, o) present at every timestamp
ALTERNATING_PAIRS = (  # subject, relation, (even-step object, odd-step object)
    (14, 0, (16, 17)),
    (15, 1, (18, 19)),
)


@dataclass
class SynthSpec:
    num_entities: int
    num_relations: int
    timestamps: int
    train_end: int  # last training timestamp, inclusive
    valid_end: int  # last validation timestamp, inclusive


PATTERN_SPEC = SynthSpec(
    num_entities=20, num_relations=4, timestamps=30, train_end=25, valid_end=26
)

COMPARATIVE_SPEC = SynthSpec(
    num_entities=24, num_relations=4, timestamps=36, train_end=31, valid_end=32
)


def pattern_events():
    """The deterministic pattern set: (s, r, o, t) rows in file order.

    Fourteen facts repeat at every step; two subject/relation pairs swap
    between an even-step and an odd-step object. Count-based ranking gets
    every repetition right but trails on alternations at odd horizons.
    """
    rows = []
    for t in range(PATTERN_SPEC.timestamps):
        for i in range(REPETITION_FACTS):
            rows.append((i, i % PATTERN_SPEC.num_relations, (i + 7) % REPETITION_FACTS, t))
        for subject, relation, objects in ALTERNATING_PAIRS:
            rows.append((subject, relation, objects[t % 2], t))
    return rows


SWITCH_POINT = 20  # switch facts change object here, mid-training
SWITCH_SUBJECTS = (10, 11, 12, 13, 14, 15, 19, 20, 21, 22)


def comparative_events(seed=0):
    """Patterned rows, mid-stream object switches, and seeded noise.

    Switch facts keep one object before SWITCH_POINT and another after, so
    a frozen count table still prefers the stale object at test time while
    a learned preference over seen objects can track the change. The noise
    keeps counts from being a perfect predictor elsewhere.
    """
    spec = COMPARATIVE_SPEC
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(spec.timestamps):
        for i in range(10):
            rows.append((i, i % spec.num_relations, 10 + (i % 6), t))
        for subject, relation, objects in (
            (16, 0, (20, 21)),
            (17, 1, (22, 23)),
            (18, 2, (20, 22)),
        ):
            rows.append((subject, relation, objects[t % 2], t))
        for s in SWITCH_SUBJECTS:
            stale = (s + 5) % spec.num_entities
            fresh = (s + 11) % spec.num_entities
            rows.append((s, s % spec.num_relations, stale if t < SWITCH_POINT else fresh, t))
        for _ in range(2):
            s = int(rng.integers(spec.num_entities))
            r = int(rng.integers(spec.num_relations))
            o = int(rng.integers(spec.num_entities))
            rows.append((s, r, o, t))
    return rows


def write_dataset(directory, rows, spec):
    """Split rows by timestamp and write a loadable dataset directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    splits = {"train": [], "valid": [], "test": []}
    for s, r, o, t in rows:
        if t <= spec.train_end:
            splits["train"].append((s, r, o, t))
        elif t <= spec.valid_end:
            splits["valid"].append((s, r, o, t))
        else:
            splits["test"].append((s, r, o, t))
    for name, split_rows in splits.items():
        with open(directory / f"{name}.txt", "w") as fh:
            for s, r, o, t in split_rows:
                fh.write(f"{s}\t{r}\t{o}\t{t}\n")
    (directory / "stat.txt").write_text(f"{spec.num_entities} {spec.num_relations}\n")
    return {name: len(split_rows) for name, split_rows in splits.items()}


GENERATORS = {
    "pattern": (pattern_events, PATTERN_SPEC),
    "comparative": (comparative_events, COMPARATIVE_SPEC),
}


def generate(kind, directory, seed=0):
    """Write the named synthetic dataset; returns per-split row counts."""
    if kind not in GENERATORS:
        raise ValueError(f"unknown synthetic dataset {kind!r}; options: {sorted(GENERATORS)}")
    maker, spec = GENERATORS[kind]
    rows = maker(seed) if kind == "comparative" else maker()
    return write_dataset(directory, rows, spec)
