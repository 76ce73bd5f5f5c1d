"""Structural information passing: a disentangled composition-based graph
aggregator over the most recent snapshot.

One forward pass consumes one snapshot and the previous structural state and
produces the next state. Entity embeddings are projected onto K channel
subspaces; each edge contributes a composed relation-neighbor message whose
channels are reweighted by a per-message attention over channels, then
transformed by a weight selected by relation family (original / inverse /
self-loop) and summed into the subject. The K channel outputs are tiled
(concatenated) back into one vector.

Only entities present in the snapshot are updated; absent entities keep their
previous embedding. An empty snapshot leaves the state untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

COMPOSITIONS = ("subtraction", "multiplication", "circular-correlation")
NORMALIZATIONS = ("none", "mean")

# relation family indices for the per-family weight matrices
FAMILY_ORIGINAL = 0
FAMILY_INVERSE = 1
FAMILY_SELF_LOOP = 2


class ConfigError(ValueError):
    pass


@dataclass
class SipConfig:
    dim: int
    channels: int = 4
    layers: int = 2
    composition: str = "multiplication"
    normalization: str = "none"
    dropout: float = 0.0

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.channels < 1 or self.dim % self.channels != 0:
            raise ConfigError(f"channels ({self.channels}) must divide dim ({self.dim})")
        if self.composition not in COMPOSITIONS:
            raise ConfigError(f"unknown composition operator {self.composition!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"unknown normalization {self.normalization!r}")

    @property
    def channel_dim(self):
        return self.dim // self.channels


@dataclass
class SipLayerParams:
    """One aggregation layer.

    `entity_proj` and `message_proj` are (d, d) matrices whose K column
    blocks are the per-channel projections; `attention` is (2*d/K, 1);
    `family[f][k]` is the (d/K, d/K) transform for relation family f and
    channel k; `relation_map` refines the relation table.
    """

    entity_proj: Tensor
    message_proj: Tensor
    attention: Tensor
    family: list
    relation_map: Tensor


@dataclass
class StructuralState:
    entities: Tensor  # (|E|, d)
    relations: Tensor  # (2|R|+1, d); last row is the self-loop relation


def compose(x_r, x_o, op):
    """The configured entity-relation composition, row-wise."""
    if op == "subtraction":
        return x_o - x_r
    if op == "multiplication":
        return x_o * x_r
    if op == "circular-correlation":
        return ad.circular_correlation(x_r, x_o)
    raise ConfigError(f"unknown composition operator {op!r}")


def _rows(x):
    if x.value.ndim == 1:
        return x.reshape(1, -1)
    return x


def project_channels(x, proj, channels):
    """Project rows onto K channel subspaces; returns K (n, d/K) tensors."""
    x = _rows(x)
    d = x.value.shape[1]
    if proj.value.shape != (d, d):
        raise ad.ShapeError(f"projection shape {proj.value.shape} does not match dim {d}")
    dk = d // channels
    h = x @ proj
    return [h[:, k * dk : (k + 1) * dk] for k in range(channels)]


def compose_message(x_r, x_o, op, proj, channels):
    """Channel projections of the composed relation-neighbor message."""
    return project_channels(compose(_rows(x_r), _rows(x_o), op), proj, channels)


def channel_attention(c_chunks, h_chunks, attention):
    """Per-message channel weights: softmax_k(relu(W [c_k; h_k])); rows sum to 1."""
    logits = ad.concat(
        [ad.concat([c, h], axis=1) @ attention for c, h in zip(c_chunks, h_chunks)],
        axis=1,
    )
    return ad.softmax(ad.relu(logits), axis=1)


def _edge_arrays(snapshot, num_relation_rows):
    """Subject/relation/object id arrays with one self-loop edge per present entity."""
    present = np.array(sorted(snapshot.adjacency.keys()), dtype=np.int64)
    self_loop_id = num_relation_rows - 1
    subjects = np.array([e[0] for e in snapshot.edges] + list(present), dtype=np.int64)
    relations = np.array(
        [e[1] for e in snapshot.edges] + [self_loop_id] * len(present), dtype=np.int64
    )
    objects = np.array([e[2] for e in snapshot.edges] + list(present), dtype=np.int64)
    return present, subjects, relations, objects


def _relation_families(relation_ids, num_relation_rows):
    num_relations = (num_relation_rows - 1) // 2
    fam = np.full(relation_ids.shape, FAMILY_INVERSE, dtype=np.int64)
    fam[relation_ids < num_relations] = FAMILY_ORIGINAL
    fam[relation_ids == num_relation_rows - 1] = FAMILY_SELF_LOOP
    return fam


def aggregate_layer(snapshot, entities, relations, params, config):
    """One disentangled aggregation layer over a snapshot.

    Returns (updated entity table, refined relation table). Entities absent
    from the snapshot keep their rows from `entities`.
    """
    present, subj, rel, obj = _edge_arrays(snapshot, relations.value.shape[0])
    if present.size == 0:
        return entities, relations
    K, dk = config.channels, config.channel_dim

    x_o = ad.gather_rows(entities, obj)
    x_r = ad.gather_rows(relations, rel)
    x_s = ad.gather_rows(entities, subj)
    phi = compose(x_r, x_o, config.composition)
    c_all = phi @ params.message_proj
    h_all = x_s @ params.entity_proj
    c_chunks = [c_all[:, k * dk : (k + 1) * dk] for k in range(K)]
    h_chunks = [h_all[:, k * dk : (k + 1) * dk] for k in range(K)]
    alpha = channel_attention(c_chunks, h_chunks, params.attention)

    # map subjects to compact rows of the output block
    pos_of = {int(s): i for i, s in enumerate(present)}
    pos = np.array([pos_of[int(s)] for s in subj], dtype=np.int64)
    families = _relation_families(rel, relations.value.shape[0])

    channel_outputs = []
    for k in range(K):
        weighted = alpha[:, k : k + 1] * c_chunks[k]
        acc = None
        for f in (FAMILY_ORIGINAL, FAMILY_INVERSE, FAMILY_SELF_LOOP):
            sel = np.nonzero(families == f)[0]
            if sel.size == 0:
                continue
            msg = weighted[sel] @ params.family[f][k]
            part = ad.segment_sum(msg, pos[sel], present.size)
            acc = part if acc is None else acc + part
        channel_outputs.append(acc)
    new_rows = ad.concat(channel_outputs, axis=1)

    if config.normalization == "mean":
        degree = np.array([len(snapshot.adjacency[int(s)]) for s in present], dtype=np.float64)
        new_rows = new_rows * Tensor((1.0 / (degree + 1.0)).reshape(-1, 1))

    updated = ad.row_update(entities, present, new_rows)
    refined = relations @ params.relation_map
    return updated, refined


def init_sip_layers(rng, config, store=None, prefix="sip"):
    """Fresh layer parameters; registered under `store` when given."""
    d, K, dk = config.dim, config.channels, config.channel_dim

    def make(name, shape, fan):
        arr = ad.uniform_init(rng, shape, fan)
        if store is not None:
            return store.add(name, arr)
        return Tensor(arr, requires_grad=True, name=name)

    layers = []
    for layer in range(config.layers):
        layers.append(
            SipLayerParams(
                entity_proj=make(f"{prefix}{layer}.entity_proj", (d, d), d),
                message_proj=make(f"{prefix}{layer}.message_proj", (d, d), d),
                attention=make(f"{prefix}{layer}.attention", (2 * dk, 1), 2 * dk),
                family=[
                    [make(f"{prefix}{layer}.family{f}.ch{k}", (dk, dk), dk) for k in range(K)]
                    for f in range(3)
                ],
                relation_map=make(f"{prefix}{layer}.relation_map", (d, d), d),
            )
        )
    return layers


def sip_forward(snapshot, state, layers, config, rng=None, training=False):
    """Roll the structural state forward over one snapshot.

    Applies every configured layer; dropout (when training) acts on each
    layer's updated entity rows. An empty snapshot returns `state` untouched.
    """
    if not snapshot.edges:
        return state
    entities, relations = state.entities, state.relations
    for params in layers:
        entities, relations = aggregate_layer(snapshot, entities, relations, params, config)
        if training and config.dropout > 0.0:
            entities = ad.dropout(entities, config.dropout, rng, training)
    return StructuralState(entities=entities, relations=relations)
