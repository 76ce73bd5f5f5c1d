"""Model assembly: the full parameter inventory and windowed state building.

The embedding state at a target timestamp t is built fresh from the trainable
base tables by rolling the structural aggregator over the (up to) m most
recent snapshots before t. The per-position states feed the temporal
encoders; the final position is the structural state used for scoring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .scoring import PreferenceParams, init_preference_params
from .structural import SipConfig, StructuralState, init_sip_layers, sip_forward
from .temporal import (
    AttentionParams,
    GruParams,
    encode_pair_sequences,
    extract_pair_sequences,
    final_rows,
    init_attention_params,
    init_gru_params,
    temporal_self_attention,
)


@dataclass
class HipModel:
    num_entities: int
    num_relations: int
    sip: SipConfig
    window: int
    store: ParameterStore
    entity_base: Tensor  # (|E|, d)
    relation_base: Tensor  # (2|R|+1, d), last row = self-loop
    sip_layers: list
    attention: AttentionParams
    gru: GruParams
    temporal_project: Tensor  # (3d, 2|R|)
    prefs: PreferenceParams

    @classmethod
    def build(cls, num_entities, num_relations, sip_config, window, rng):
        d = sip_config.dim
        store = ParameterStore()
        entity_base = store.add("entity_base", ad.uniform_init(rng, (num_entities, d)))
        relation_base = store.add(
            "relation_base", ad.uniform_init(rng, (2 * num_relations + 1, d))
        )
        sip_layers = init_sip_layers(rng, sip_config, store=store)
        attention = init_attention_params(rng, d, store=store)
        gru = init_gru_params(rng, d, store=store)
        temporal_project = store.add(
            "temporal.project", ad.uniform_init(rng, (3 * d, 2 * num_relations), fan=3 * d)
        )
        prefs = init_preference_params(rng, num_entities, num_relations, d, store=store)
        return cls(
            num_entities=num_entities,
            num_relations=num_relations,
            sip=sip_config,
            window=window,
            store=store,
            entity_base=entity_base,
            relation_base=relation_base,
            sip_layers=sip_layers,
            attention=attention,
            gru=gru,
            temporal_project=temporal_project,
            prefs=prefs,
        )

    def base_state(self):
        return StructuralState(entities=self.entity_base, relations=self.relation_base)

    def roll_window(self, snapshots, training=False, rng=None):
        """Roll the structural state over a window of snapshots.

        Returns (states, presents): one state per snapshot (cumulative) and
        the set of entities present in each snapshot. The last state is the
        scoring state for the timestamp right after the window.
        """
        states, presents = [], []
        state = self.base_state()
        for snap in snapshots:
            state = sip_forward(
                snap, state, self.sip_layers, self.sip, rng=rng, training=training
            )
            states.append(state)
            presents.append(set(snap.adjacency.keys()))
        return states, presents

    def entity_timelines(self, states, presents, ids):
        """Stacked (B, m', d) timelines plus (B, m') validity flags."""
        ids = np.asarray(ids, dtype=np.int64)
        rows = [ad.gather_rows(st.entities, ids) for st in states]
        x = ad.stack(rows, axis=1)
        validity = np.array(
            [[int(e) in pres for pres in presents] for e in ids], dtype=bool
        )
        return x, validity

    def temporal_entity_embeddings(self, states, presents, ids):
        """z_{s,t} rows for the given entity ids; (B, d)."""
        x, validity = self.entity_timelines(states, presents, ids)
        z, _ = temporal_self_attention(x, validity, self.attention)
        return final_rows(z)

    def pair_embeddings(self, window_snapshots, states, pairs):
        """GRU encodings for pairs with window history; pair -> (1, d)."""
        sequences = extract_pair_sequences(window_snapshots, pairs, limit=self.window)
        return encode_pair_sequences(sequences, states, self.gru)

    def final_state(self, states):
        """The scoring-time structural state (falls back to base tables)."""
        return states[-1] if states else self.base_state()
