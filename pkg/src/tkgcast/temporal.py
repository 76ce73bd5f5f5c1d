"""Temporal information passing over windowed structural states.

Two encoders share the window of the last m snapshots:

* entity timelines: causally masked scaled dot-product self-attention over
  each entity's per-position structural embeddings. A query position attends
  only to same-or-earlier positions, and positions where the entity was
  absent from the corresponding snapshot are masked out as keys entirely.
* pair relation sequences: the time-ordered relations observed between an
  entity pair inside the window, each embedded with the relation table of the
  state produced by the snapshot it occurred in, run through a GRU; the pair
  representation is the final hidden state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_INF, Tensor


@dataclass
class AttentionParams:
    query: Tensor  # (d, d)
    key: Tensor  # (d, d)
    value: Tensor  # (d, d)


@dataclass
class GruParams:
    """Single-layer GRU, hidden size = input size.

    Gates (element-wise, batched rows):
      reset r = sigmoid(x Wxr + h Whr + br)
      update z = sigmoid(x Wxz + h Whz + bz)
      candidate n = tanh(x Wxn + r * (h Whn) + bn)
      h' = (1 - z) * n + z * h
    """

    wxr: Tensor
    whr: Tensor
    br: Tensor
    wxz: Tensor
    whz: Tensor
    bz: Tensor
    wxn: Tensor
    whn: Tensor
    bn: Tensor


def init_attention_params(rng, dim, store=None, prefix="tip.attn"):
    def make(name, shape):
        arr = ad.uniform_init(rng, shape)
        return store.add(name, arr) if store is not None else Tensor(arr, requires_grad=True)

    return AttentionParams(
        query=make(f"{prefix}.query", (dim, dim)),
        key=make(f"{prefix}.key", (dim, dim)),
        value=make(f"{prefix}.value", (dim, dim)),
    )


def init_gru_params(rng, dim, store=None, prefix="tip.gru"):
    def make(name, shape):
        arr = ad.uniform_init(rng, shape, fan=dim)
        return store.add(name, arr) if store is not None else Tensor(arr, requires_grad=True)

    names = ("wxr", "whr", "br", "wxz", "whz", "bz", "wxn", "whn", "bn")
    shapes = {"w": (dim, dim), "b": (1, dim)}
    return GruParams(**{n: make(f"{prefix}.{n}", shapes[n[0]]) for n in names})


def causal_validity_mask(validity):
    """Additive (B, m, m) mask: future positions and invalid keys are out."""
    validity = np.asarray(validity, dtype=bool)
    if validity.ndim == 1:
        validity = validity[None, :]
    b, m = validity.shape
    causal = np.where(np.triu(np.ones((m, m)), k=1) > 0, NEG_INF, 0.0)
    key_block = np.where(validity[:, None, :], 0.0, NEG_INF)
    return causal[None, :, :] + key_block


def temporal_self_attention(timeline, validity, params):
    """Causal self-attention over (B, m, d) timelines.

    Returns (Z, beta): the full output sequence and the attention weights.
    `validity[b, j]` marks whether row j of timeline b is a real state (the
    entity was present in that position's snapshot); invalid rows get zero
    weight as keys for every query. Timelines with no valid row are rejected.
    """
    if isinstance(timeline, Tensor) and timeline.value.ndim == 2:
        timeline = timeline.reshape(1, *timeline.value.shape)
        validity = np.asarray(validity, dtype=bool)[None, :]
    validity = np.asarray(validity, dtype=bool)
    b, m, d = timeline.value.shape
    if validity.shape != (b, m):
        raise ad.ShapeError(f"validity shape {validity.shape} vs timeline ({b}, {m})")
    if not validity.any(axis=1).all():
        bad = int(np.nonzero(~validity.any(axis=1))[0][0])
        raise ValueError(f"timeline {bad} has no valid positions")

    flat = timeline.reshape(b * m, d)
    q = (flat @ params.query).reshape(b, m, d)
    k = (flat @ params.key).reshape(b, m, d)
    v = (flat @ params.value).reshape(b, m, d)
    scores = ad.scale(ad.bmm(q, ad.swapaxes(k, 1, 2)), 1.0 / math.sqrt(d))
    beta = ad.masked_softmax(scores, causal_validity_mask(validity), axis=-1)
    z = ad.bmm(beta, v)
    return z, beta


def final_rows(z):
    """z_{s,t} per timeline: the last row of each output sequence."""
    return z[:, -1, :]


@dataclass
class PairSequence:
    subject: int
    object: int
    events: list  # [(window position, relation id)], time-ordered


def extract_pair_sequences(window_snapshots, pairs, limit):
    """Per pair, the `limit` most recent (position, relation) events.

    Events are scanned in window order; within one snapshot the stored edge
    order (the raw file order) is preserved. Pairs with no events in the
    window are omitted from the result.
    """
    wanted = {}
    for s, o in pairs:
        wanted.setdefault(s, set()).add(o)
    found = {}
    for j, snap in enumerate(window_snapshots):
        for s, objs in wanted.items():
            for r, o in snap.adjacency.get(s, ()):
                if o in objs:
                    found.setdefault((s, o), []).append((j, r))
    return {
        pair: PairSequence(pair[0], pair[1], events[-limit:])
        for pair, events in found.items()
    }


def gru_step(x, h, params):
    """One GRU cell application over (n, d) rows."""
    r = ad.sigmoid(x @ params.wxr + h @ params.whr + params.br)
    z = ad.sigmoid(x @ params.wxz + h @ params.whz + params.bz)
    n = ad.tanh(x @ params.wxn + r * (h @ params.whn) + params.bn)
    return (1.0 - z) * n + z * h


def gru_encode(inputs, params):
    """Run the GRU over a time-ordered list of (n, d) input rows.

    The initial hidden state is zero; the encoding is the final hidden state.
    Rejects empty sequences (callers must filter pairs with no history).
    """
    if not inputs:
        raise ValueError("empty sequence has no encoding")
    n, d = inputs[0].value.shape
    h = Tensor(np.zeros((n, d)))
    for x in inputs:
        h = gru_step(x, h, params)
    return h


def encode_pair_sequences(sequences, window_states, params):
    """GRU-encode each pair's relation sequence; returns pair -> (1, d) Tensor.

    `window_states` holds one StructuralState per window position; the
    relation embedding for an event at position j is row `relation` of the
    state produced by that position's snapshot.
    """
    out = {}
    for pair, seq in sequences.items():
        inputs = [
            ad.gather_rows(window_states[j].relations, np.array([r]))
            for j, r in seq.events
        ]
        out[pair] = gru_encode(inputs, params)
    return out
