"""Structural aggregator against a scalar-loop reference implementation."""

import numpy as np
import pytest

from tkgcast import autodiff as ad
from tkgcast.autodiff import Tensor, gradcheck
from tkgcast.data import SnapshotGraph
from tkgcast.structural import (
    ConfigError,
    SipConfig,
    SipLayerParams,
    StructuralState,
    aggregate_layer,
    channel_attention,
    compose,
    compose_message,
    init_sip_layers,
    project_channels,
    sip_forward,
)


def oracle_compose(x_r, x_o, op):
    if op == "subtraction":
        return x_o - x_r
    if op == "multiplication":
        return x_o * x_r
    d = len(x_r)
    return np.array([sum(x_r[k] * x_o[(k + i) % d] for k in range(d)) for i in range(d)])


def oracle_layer(snapshot, entities, relations, params, config):
    """Per-entity scalar-loop transcription of one aggregation layer."""
    K, dk, d = config.channels, config.channel_dim, config.dim
    n_rel = relations.shape[0]
    num_relations = (n_rel - 1) // 2
    U = [params["entity_proj"][:, k * dk : (k + 1) * dk] for k in range(K)]
    V = [params["message_proj"][:, k * dk : (k + 1) * dk] for k in range(K)]
    W = params["attention"]
    out = entities.copy()
    for s in sorted(snapshot.adjacency):
        neighbors = list(snapshot.adjacency[s]) + [(n_rel - 1, s)]
        acc = [np.zeros(dk) for _ in range(K)]
        for r, o in neighbors:
            phi = oracle_compose(relations[r], entities[o], config.composition)
            c = [V[k].T @ phi for k in range(K)]
            h = [U[k].T @ entities[s] for k in range(K)]
            logits = [max(0.0, float((np.concatenate([c[k], h[k]]) @ W)[0])) for k in range(K)]
            exps = [np.exp(v) for v in logits]
            alphas = [v / sum(exps) for v in exps]
            fam = 2 if r == n_rel - 1 else (1 if r >= num_relations else 0)
            for k in range(K):
                acc[k] = acc[k] + alphas[k] * (params["family"][fam][k].T @ c[k])
        row = np.concatenate(acc)
        if config.normalization == "mean":
            row = row / (len(snapshot.adjacency[s]) + 1)
        out[s] = row
    new_rel = relations @ params["relation_map"]
    return out, new_rel


def random_params(rng, config):
    d, K, dk = config.dim, config.channels, config.channel_dim
    return {
        "entity_proj": rng.normal(size=(d, d)),
        "message_proj": rng.normal(size=(d, d)),
        "attention": rng.normal(size=(2 * dk, 1)),
        "family": [[rng.normal(size=(dk, dk)) for _ in range(K)] for _ in range(3)],
        "relation_map": rng.normal(size=(d, d)),
    }


def as_layer(params):
    return SipLayerParams(
        entity_proj=Tensor(params["entity_proj"], requires_grad=True),
        message_proj=Tensor(params["message_proj"], requires_grad=True),
        attention=Tensor(params["attention"], requires_grad=True),
        family=[[Tensor(m, requires_grad=True) for m in fam] for fam in params["family"]],
        relation_map=Tensor(params["relation_map"], requires_grad=True),
    )


def test_config_validation():
    SipConfig(dim=8, channels=4, layers=1)
    with pytest.raises(ConfigError):
        SipConfig(dim=6, channels=4)
    with pytest.raises(ConfigError):
        SipConfig(dim=8, channels=4, layers=0)
    with pytest.raises(ConfigError):
        SipConfig(dim=8, channels=4, composition="division")
    with pytest.raises(ConfigError):
        SipConfig(dim=8, channels=4, normalization="degree")


def test_project_channels_identity():
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]))
    chunks = project_channels(x, Tensor(np.eye(4)), channels=1)
    np.testing.assert_array_equal(chunks[0].value, [[1, 2, 3, 4]])
    halves = project_channels(x, Tensor(np.eye(4)), channels=2)
    np.testing.assert_array_equal(halves[0].value, [[1, 2]])
    np.testing.assert_array_equal(halves[1].value, [[3, 4]])


def test_project_channels_matches_blockwise_oracle():
    rng = np.random.default_rng(0)
    x = rng.normal(size=6)
    proj = rng.normal(size=(6, 6))
    chunks = project_channels(Tensor(x), Tensor(proj), channels=3)
    for k in range(3):
        want = proj[:, 2 * k : 2 * k + 2].T @ x
        np.testing.assert_allclose(chunks[k].value[0], want, rtol=1e-12)


def test_compose_identities():
    ones = Tensor(np.ones((1, 4)))
    x = Tensor(np.array([[1.0, -2.0, 0.5, 3.0]]))
    np.testing.assert_array_equal(compose(ones, x, "multiplication").value, x.value)
    np.testing.assert_array_equal(compose(x, x, "subtraction").value, np.zeros((1, 4)))
    got = compose(Tensor(np.array([[1.0, 2.0, 3.0]])), Tensor(np.array([[4.0, 5.0, 6.0]])), "circular-correlation")
    np.testing.assert_allclose(got.value, [[32.0, 29.0, 29.0]])
    with pytest.raises(ConfigError):
        compose(x, x, "division")


def test_compose_message_projects():
    rng = np.random.default_rng(1)
    x_r, x_o = rng.normal(size=4), rng.normal(size=4)
    proj = rng.normal(size=(4, 4))
    chunks = compose_message(Tensor(x_r), Tensor(x_o), "subtraction", Tensor(proj), 2)
    phi = x_o - x_r
    for k in range(2):
        np.testing.assert_allclose(chunks[k].value[0], proj[:, 2 * k : 2 * k + 2].T @ phi)


def test_channel_attention_uniform_when_identical():
    c = Tensor(np.ones((3, 2)))
    h = Tensor(np.ones((3, 2)))
    w = Tensor(np.array([[0.3], [0.1], [-0.2], [0.5]]))
    alpha = channel_attention([c, c, c, c], [h, h, h, h], w)
    np.testing.assert_allclose(alpha.value, np.full((3, 4), 0.25))


def test_channel_attention_single_channel_is_one():
    rng = np.random.default_rng(2)
    c = Tensor(rng.normal(size=(5, 3)))
    h = Tensor(rng.normal(size=(5, 3)))
    alpha = channel_attention([c], [h], Tensor(rng.normal(size=(6, 1))))
    np.testing.assert_allclose(alpha.value, np.ones((5, 1)))


def test_channel_attention_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    K, dk, n = 3, 2, 4
    cs = [rng.normal(size=(n, dk)) for _ in range(K)]
    hs = [rng.normal(size=(n, dk)) for _ in range(K)]
    w = rng.normal(size=(2 * dk, 1))
    alpha = channel_attention([Tensor(c) for c in cs], [Tensor(h) for h in hs], Tensor(w))
    for i in range(n):
        logits = [max(0.0, float((np.concatenate([cs[k][i], hs[k][i]]) @ w)[0])) for k in range(K)]
        exps = np.exp(logits)
        np.testing.assert_allclose(alpha.value[i], exps / exps.sum(), rtol=1e-12)
    np.testing.assert_allclose(alpha.value.sum(axis=1), np.ones(n), atol=1e-12)


def test_isolated_entity_gets_only_self_loop():
    # entity 1 has a self-loop event only: output = self-loop transform of its
    # own composition; entity 3 is absent and must keep its row
    rng = np.random.default_rng(4)
    config = SipConfig(dim=4, channels=2, layers=1)
    params = random_params(rng, config)
    entities = rng.normal(size=(4, 4))
    relations = rng.normal(size=(3, 4))  # 1 relation -> rows: orig, inverse, self-loop
    snap = SnapshotGraph.from_events(0, [(1, 0, 1)], num_relations=1)
    got_e, _ = aggregate_layer(snap, Tensor(entities), Tensor(relations), as_layer(params), config)
    want_e, _ = oracle_layer(snap, entities, relations, params, config)
    np.testing.assert_allclose(got_e.value, want_e, rtol=1e-10)
    np.testing.assert_array_equal(got_e.value[3], entities[3])
    np.testing.assert_array_equal(got_e.value[0], entities[0])


def test_two_entity_hand_computed():
    # K=1, identity projections and family weights, multiplication: the new
    # row of entity 0 is x_r * x_1 + x_self * x_0 (alpha = 1 throughout)
    config = SipConfig(dim=2, channels=1, layers=1, composition="multiplication")
    eye = {
        "entity_proj": np.eye(2),
        "message_proj": np.eye(2),
        "attention": np.zeros((4, 1)),
        "family": [[np.eye(2)] for _ in range(3)],
        "relation_map": np.eye(2),
    }
    entities = np.array([[1.0, 2.0], [3.0, 4.0]])
    relations = np.array([[2.0, 0.5], [1.0, 1.0], [0.5, 3.0]])
    snap = SnapshotGraph.from_events(0, [(0, 0, 1)], num_relations=1)
    got_e, got_r = aggregate_layer(snap, Tensor(entities), Tensor(relations), as_layer(eye), config)
    want0 = relations[0] * entities[1] + relations[2] * entities[0]
    want1 = relations[1] * entities[0] + relations[2] * entities[1]
    np.testing.assert_allclose(got_e.value, [want0, want1])
    np.testing.assert_allclose(got_r.value, relations)


@pytest.mark.parametrize("composition", ["subtraction", "multiplication", "circular-correlation"])
@pytest.mark.parametrize("normalization", ["none", "mean"])
def test_layer_matches_scalar_reference(composition, normalization):
    rng = np.random.default_rng(5)
    config = SipConfig(
        dim=6, channels=3, layers=1, composition=composition, normalization=normalization
    )
    params = random_params(rng, config)
    entities = rng.normal(size=(4, 6))
    relations = rng.normal(size=(5, 6))  # 2 relations
    events = [(0, 0, 1), (1, 1, 2), (2, 0, 0), (0, 1, 3)]
    snap = SnapshotGraph.from_events(7, events, num_relations=2)
    got_e, got_r = aggregate_layer(snap, Tensor(entities), Tensor(relations), as_layer(params), config)
    want_e, want_r = oracle_layer(snap, entities, relations, params, config)
    np.testing.assert_allclose(got_e.value, want_e, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(got_r.value, want_r, rtol=1e-9, atol=1e-12)


def test_k1_equals_undisentangled_compgcn():
    # with K=1 and identity channel projections the update collapses to the
    # plain composition-based layer: sum of W_fam(phi) over neighbors
    rng = np.random.default_rng(6)
    config = SipConfig(dim=4, channels=1, layers=1, composition="subtraction")
    params = random_params(rng, config)
    params["entity_proj"] = np.eye(4)
    params["message_proj"] = np.eye(4)
    entities = rng.normal(size=(3, 4))
    relations = rng.normal(size=(5, 4))
    snap = SnapshotGraph.from_events(0, [(0, 1, 1), (1, 0, 2)], num_relations=2)
    got_e, _ = aggregate_layer(snap, Tensor(entities), Tensor(relations), as_layer(params), config)

    def plain(s):
        acc = np.zeros(4)
        for r, o in snap.adjacency.get(s, []) + [(4, s)]:
            fam = 2 if r == 4 else (1 if r >= 2 else 0)
            acc += params["family"][fam][0].T @ (entities[o] - relations[r])
        return acc

    for s in (0, 1, 2):
        np.testing.assert_allclose(got_e.value[s], plain(s), rtol=1e-10)


def test_forward_empty_snapshot_unchanged():
    rng = np.random.default_rng(7)
    config = SipConfig(dim=4, channels=2, layers=2)
    layers = init_sip_layers(rng, config)
    state = StructuralState(
        entities=Tensor(rng.normal(size=(3, 4))), relations=Tensor(rng.normal(size=(3, 4)))
    )
    empty = SnapshotGraph.from_events(1, [], num_relations=1)
    out = sip_forward(empty, state, layers, config)
    assert out is state


def test_forward_absent_entities_keep_rows_across_layers():
    rng = np.random.default_rng(8)
    config = SipConfig(dim=4, channels=2, layers=2)
    layers = init_sip_layers(rng, config)
    entities = rng.normal(size=(5, 4))
    state = StructuralState(
        entities=Tensor(entities), relations=Tensor(rng.normal(size=(3, 4)))
    )
    snap = SnapshotGraph.from_events(0, [(0, 0, 1)], num_relations=1)
    out = sip_forward(snap, state, layers, config)
    for absent in (2, 3, 4):
        np.testing.assert_array_equal(out.entities.value[absent], entities[absent])
    assert not np.allclose(out.entities.value[0], entities[0])


def test_forward_permutation_invariant():
    rng = np.random.default_rng(9)
    config = SipConfig(dim=6, channels=3, layers=2, composition="multiplication")
    layers = init_sip_layers(rng, config)
    entities = rng.normal(size=(5, 6))
    relations = rng.normal(size=(5, 6))
    events = [(0, 0, 1), (1, 1, 2), (2, 0, 3), (3, 1, 4), (0, 1, 4)]
    state = StructuralState(entities=Tensor(entities), relations=Tensor(relations))
    out1 = sip_forward(SnapshotGraph.from_events(0, events, 2), state, layers, config)
    shuffled = [events[i] for i in [3, 0, 4, 2, 1]]
    out2 = sip_forward(SnapshotGraph.from_events(0, shuffled, 2), state, layers, config)
    np.testing.assert_allclose(out1.entities.value, out2.entities.value, rtol=1e-9, atol=1e-12)


def test_forward_two_layers_composes():
    rng = np.random.default_rng(10)
    config = SipConfig(dim=4, channels=2, layers=2)
    layers = init_sip_layers(rng, config)
    entities = rng.normal(size=(3, 4))
    relations = rng.normal(size=(5, 4))
    snap = SnapshotGraph.from_events(0, [(0, 0, 1), (1, 1, 2)], num_relations=2)
    out = sip_forward(
        snap, StructuralState(entities=Tensor(entities), relations=Tensor(relations)), layers, config
    )
    # oracle: apply the scalar reference twice
    p0 = {
        "entity_proj": layers[0].entity_proj.value,
        "message_proj": layers[0].message_proj.value,
        "attention": layers[0].attention.value,
        "family": [[m.value for m in fam] for fam in layers[0].family],
        "relation_map": layers[0].relation_map.value,
    }
    p1 = {
        "entity_proj": layers[1].entity_proj.value,
        "message_proj": layers[1].message_proj.value,
        "attention": layers[1].attention.value,
        "family": [[m.value for m in fam] for fam in layers[1].family],
        "relation_map": layers[1].relation_map.value,
    }
    e1, r1 = oracle_layer(snap, entities, relations, p0, config)
    e2, r2 = oracle_layer(snap, e1, r1, p1, config)
    np.testing.assert_allclose(out.entities.value, e2, rtol=1e-9)
    np.testing.assert_allclose(out.relations.value, r2, rtol=1e-9)


def test_dropout_only_in_training():
    rng = np.random.default_rng(11)
    config = SipConfig(dim=4, channels=2, layers=1, dropout=0.5)
    layers = init_sip_layers(rng, config)
    state = StructuralState(
        entities=Tensor(rng.normal(size=(3, 4))), relations=Tensor(rng.normal(size=(5, 4)))
    )
    snap = SnapshotGraph.from_events(0, [(0, 0, 1)], num_relations=2)
    eval_out = sip_forward(snap, state, layers, config, training=False)
    train_out = sip_forward(snap, state, layers, config, rng=np.random.default_rng(0), training=True)
    assert np.any(train_out.entities.value == 0.0)
    assert not np.any(np.all(eval_out.entities.value == 0.0, axis=1))


def test_gradcheck_through_forward():
    rng = np.random.default_rng(12)
    config = SipConfig(dim=4, channels=2, layers=1, composition="multiplication")
    snap = SnapshotGraph.from_events(0, [(0, 0, 1), (1, 1, 2), (2, 0, 3)], num_relations=2)
    base_params = random_params(rng, config)
    weights = rng.normal(size=(4, 4))

    def fn(ts):
        entities, relations, attention = ts
        layer = SipLayerParams(
            entity_proj=Tensor(base_params["entity_proj"]),
            message_proj=Tensor(base_params["message_proj"]),
            attention=attention,
            family=[[Tensor(m) for m in fam] for fam in base_params["family"]],
            relation_map=Tensor(base_params["relation_map"]),
        )
        out, rel = aggregate_layer(snap, entities, relations, layer, config)
        return ad.tensor_sum(out * Tensor(weights)) + ad.tensor_sum(rel)

    report = gradcheck(
        fn,
        [rng.normal(size=(4, 4)), rng.normal(size=(5, 4)), rng.normal(size=(4, 1))],
        tol=1e-4,
    )
    assert report.ok(), report.failures
