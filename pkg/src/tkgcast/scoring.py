"""Event scoring from three perspectives.

* temporal: a softmax over relation types from the concatenated temporal
  embeddings of subject, pair, and object; used to pick the most plausible
  relation per candidate pair when rolling graphs forward.
* structural: sigmoid of the tri-linear product of structural embeddings
  (the DistMult form), one score per candidate triple.
* repetitive: a softmax over all entities from learned preference embeddings
  plus the historical object-count vector for (subject, relation); frequent
  past objects dominate.

Final candidate selection and ranking use structural + repetitive; the
temporal distribution only drives relation choice during graph rolling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class PreferenceParams:
    """Time-independent preference tables for the repetitive scorer."""

    entity: Tensor  # (|E|, d)
    relation: Tensor  # (2|R|, d)
    project: Tensor  # W_h: (2d, |E|)


def init_preference_params(rng, num_entities, num_relations, dim, store=None, prefix="pref"):
    def make(name, shape, fan):
        arr = ad.uniform_init(rng, shape, fan=fan)
        return store.add(name, arr) if store is not None else Tensor(arr, requires_grad=True)

    return PreferenceParams(
        entity=make(f"{prefix}.entity", (num_entities, dim), dim),
        relation=make(f"{prefix}.relation", (2 * num_relations, dim), dim),
        project=make(f"{prefix}.project", (2 * dim, num_entities), 2 * dim),
    )


def temporal_logits(z_s, z_so, z_o, project):
    """Relation-type logits W_t [z_s; z_so; z_o] (the training-time form).

    Inputs are (n, d) rows; `project` is (3d, p) with p = 2|R|.
    """
    joint = ad.concat([z_s, z_so, z_o], axis=1)
    return joint @ project


def temporal_distribution(z_s, z_so, z_o, project):
    """Distribution over relation types: softmax of the temporal logits."""
    return ad.softmax(temporal_logits(z_s, z_so, z_o, project), axis=1)


def structural_score(x_s, x_r, x_o):
    """sigmoid(sum_i s_i r_i o_i) per row; in (0, 1)."""
    return ad.sigmoid(ad.tensor_sum(x_s * x_r * x_o, axis=1))


def structural_scores_all(x_s, x_r, entity_table):
    """Structural scores of (s, r, o') for every entity o'; (n, |E|)."""
    return ad.sigmoid((x_s * x_r) @ ad.swapaxes(entity_table, 0, 1))


def structural_logits_all(x_s, x_r, entity_table):
    """Raw tri-linear logits over all objects (the training-time form)."""
    return (x_s * x_r) @ ad.swapaxes(entity_table, 0, 1)


def repetitive_logits(e_s, e_r, counts, project):
    """Count-shifted entity logits W_h [e_s; e_r] + counts.

    `counts` is the (n, |E|) historical object-count block for each row's
    (subject, relation); raw counts by default, binarized upstream when the
    caller asks for it.
    """
    joint = ad.concat([e_s, e_r], axis=1)
    return joint @ project + Tensor(np.asarray(counts, dtype=np.float64))


def repetitive_distribution(e_s, e_r, counts, project):
    """Distribution over entities: softmax of the count-shifted logits."""
    return ad.softmax(repetitive_logits(e_s, e_r, counts, project), axis=1)


def combined_scores(x_s, x_r, entity_table, rep_dist):
    """Structural + repetitive score for every entity; the ranking signal."""
    return structural_scores_all(x_s, x_r, entity_table) + rep_dist


def score_vector(bundle, mode):
    """Select the (n, |E|) ranking signal for an ablation mode."""
    structural, repetitive = bundle
    if mode == "structural":
        return structural
    if mode == "repetitive":
        return repetitive
    if mode == "combined":
        return structural + repetitive
    raise ValueError(f"unknown score mode {mode!r}")
