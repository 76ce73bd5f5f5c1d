"""End-to-end gradient verification against central finite differences.

Every differentiable primitive is checked on seeded random inputs, then the
assembled pieces (aggregation layer, attention + recurrent encoder, each
scoring head, and the complete training loss) are checked end to end. All
checks share one relative-error tolerance.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .data import HistoryVocabulary, Quadruple, build_snapshots
from .model import HipModel
from .scoring import repetitive_logits, structural_score, temporal_logits
from .structural import SipConfig
from .temporal import temporal_self_attention
from .training import TrainConfig, compute_loss

TOLERANCE = 1e-4


def _report(name, fn, inputs):
    """Gradcheck `fn` reduced to a scalar by a fixed random weighting.

    Random weights keep sign errors from cancelling the way a plain sum
    would.
    """
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    probe = {}

    def wrapped(ts):
        out = fn(ts)
        if "w" not in probe:
            probe["w"] = rng.standard_normal(out.value.shape)
        return ad.tensor_sum(out * ad.Tensor(probe["w"]))

    report = ad.gradcheck(wrapped, inputs)
    return (name, report.max_rel_error, report.ok(TOLERANCE))


def primitive_checks(seed=0):
    """(name, max relative error, ok) per differentiable primitive."""
    rng = np.random.default_rng(seed)

    def arr(*shape):
        return rng.standard_normal(shape)

    checks = []
    a23, b23, c13 = arr(2, 3), arr(2, 3), arr(1, 3)
    checks.append(_report("add", lambda ts: ts[0] + ts[1], [a23, b23]))
    checks.append(_report("add_broadcast", lambda ts: ts[0] + ts[1],
                          [a23, c13]))
    checks.append(_report("sub", lambda ts: ts[0] - ts[1], [a23, b23]))
    checks.append(_report("mul", lambda ts: ts[0] * ts[1], [a23, b23]))
    checks.append(_report("scale", lambda ts: ad.scale(ts[0], -1.7), [a23]))
    checks.append(_report("matmul", lambda ts: ts[0] @ ts[1],
                          [arr(2, 4), arr(4, 3)]))
    checks.append(_report("bmm", lambda ts: ad.bmm(ts[0], ts[1]),
                          [arr(2, 3, 4), arr(2, 4, 2)]))
    checks.append(_report("swapaxes", lambda ts: ad.swapaxes(ts[0], 0, 1), [a23]))
    checks.append(_report("reshape", lambda ts: ad.reshape(ts[0], (3, 2)), [a23]))
    checks.append(_report("concat", lambda ts: ad.concat([ts[0], ts[1]], axis=1),
                          [a23, b23]))
    checks.append(_report("stack", lambda ts: ad.stack([ts[0], ts[1]], axis=1),
                          [a23, b23]))
    checks.append(_report("getitem", lambda ts: ts[0][1:, :2], [a23]))
    checks.append(_report("gather_rows",
                          lambda ts: ad.gather_rows(ts[0], np.array([0, 1, 1, 0])),
                          [a23]))
    checks.append(_report("segment_sum",
                          lambda ts: ad.segment_sum(ts[0], np.array([1, 0, 1]), 2),
                          [arr(3, 4)]))
    checks.append(_report("row_update",
                          lambda ts: ad.row_update(ts[0], np.array([2, 0]), ts[1]),
                          [arr(4, 3), arr(2, 3)]))
    # keep relu inputs away from the kink where the derivative jumps
    relu_in = arr(3, 3) + np.sign(arr(3, 3)) * 0.5
    checks.append(_report("relu", lambda ts: ad.relu(ts[0]), [relu_in]))
    checks.append(_report("sigmoid", lambda ts: ad.sigmoid(ts[0]), [a23]))
    checks.append(_report("tanh", lambda ts: ad.tanh(ts[0]), [a23]))
    checks.append(_report("softmax", lambda ts: ad.softmax(ts[0], axis=1), [a23]))
    mask = np.array([[True, False, True], [True, True, False]])
    checks.append(_report("masked_softmax",
                          lambda ts: ad.masked_softmax(ts[0], mask=mask, axis=1),
                          [a23]))
    targets = np.array([2, 0])
    checks.append(_report("softmax_cross_entropy",
                          lambda ts: ad.softmax_cross_entropy(ts[0], targets),
                          [a23]))
    probs = np.abs(arr(2, 3)) + 0.5
    checks.append(_report("pick_neg_log",
                          lambda ts: ad.pick_neg_log(ad.softmax(ts[0], axis=1), targets),
                          [probs]))
    checks.append(_report("tensor_sum", lambda ts: ad.tensor_sum(ts[0], axis=0),
                          [a23]))
    checks.append(_report("tensor_mean", lambda ts: ad.tensor_mean(ts[0]), [a23]))
    checks.append(_report("circular_correlation",
                          lambda ts: ad.circular_correlation(ts[0], ts[1]),
                          [arr(2, 5), arr(2, 5)]))
    checks.append(_report("dropout",
                          lambda ts: ad.dropout(ts[0], 0.4, np.random.default_rng(7),
                                                training=True),
                          [arr(3, 4)]))
    return checks


def _micro_setup(seed=0):
    quads = [
        Quadruple(0, 0, 1, 0), Quadruple(1, 1, 2, 0),
        Quadruple(0, 0, 1, 1), Quadruple(2, 1, 0, 1),
        Quadruple(0, 0, 1, 2), Quadruple(1, 1, 2, 2),
    ]
    config = TrainConfig(dim=4, channels=2, layers=1, window=2, batch_size=8,
                         epochs=1, dropout=0.0, learning_rate=0.01, seed=seed)
    rng = np.random.default_rng(seed)
    model = HipModel.build(3, 2, config.sip_config(), config.window, rng)
    snaps = build_snapshots(quads, num_relations=2)
    return model, config, snaps


def _store_fd_check(name, model, loss_fn, entries_per_param=2, step=1e-5, seed=0):
    """FD check of d(loss)/d(theta) for sampled entries of every parameter."""
    model.store.zero_grad()
    loss_fn().backward()
    # a parameter a sub-loss never touches has no grad: that is a zero claim,
    # and the finite differences below verify it like any other entry
    grads = {
        pname: t.grad.copy() if t.grad is not None else np.zeros_like(t.value)
        for pname, t in model.store.items()
    }
    rng = np.random.default_rng(seed)
    worst = 0.0
    for pname, tensor in model.store.items():
        flat = tensor.value.reshape(-1)
        for _ in range(entries_per_param):
            k = int(rng.integers(flat.size))
            keep = flat[k]
            flat[k] = keep + step
            up = float(loss_fn().value)
            flat[k] = keep - step
            down = float(loss_fn().value)
            flat[k] = keep
            fd = (up - down) / (2 * step)
            got = grads[pname].reshape(-1)[k]
            denom = max(abs(fd), abs(got), 1e-6)
            worst = max(worst, abs(fd - got) / denom)
    return (name, worst, worst < TOLERANCE)


def assembled_checks(seed=0):
    """FD checks through each assembled stage and the complete loss."""
    model, config, snaps = _micro_setup(seed)
    window = snaps[0:2]
    target = snaps[2]
    vocab = HistoryVocabulary()
    for s in snaps[:2]:
        vocab.update(s)

    checks = []

    def sip_loss():
        states, _ = model.roll_window(window)
        return ad.tensor_sum(states[-1].entities * states[-1].entities)

    checks.append(_store_fd_check("aggregation_layer", model, sip_loss, seed=seed))

    def tip_loss():
        states, presents = model.roll_window(window)
        x, validity = model.entity_timelines(states, presents, [0, 1, 2])
        z, _ = temporal_self_attention(x, validity, model.attention)
        pair = model.pair_embeddings(window, states, [(0, 1)])[(0, 1)]
        return ad.tensor_sum(z * z) + ad.tensor_sum(pair * pair)

    checks.append(_store_fd_check("attention_and_recurrence", model, tip_loss, seed=seed))

    def temporal_head_loss():
        states, presents = model.roll_window(window)
        z = model.temporal_entity_embeddings(states, presents, [0, 1])
        pair = model.pair_embeddings(window, states, [(0, 1)])[(0, 1)]
        logits = temporal_logits(z[0:1], pair, z[1:2], model.temporal_project)
        return ad.tensor_sum(ad.softmax_cross_entropy(logits, np.array([0])))

    checks.append(_store_fd_check("relation_scorer", model, temporal_head_loss, seed=seed))

    def structural_head_loss():
        states, _ = model.roll_window(window)
        final = states[-1]
        idx = np.array([0, 1])
        score = structural_score(
            ad.gather_rows(final.entities, idx),
            ad.gather_rows(final.relations, np.array([0, 3])),
            ad.gather_rows(final.entities, np.array([1, 2])),
        )
        return ad.tensor_sum(score)

    checks.append(_store_fd_check("triple_scorer", model, structural_head_loss, seed=seed))

    def repetitive_head_loss():
        idx = np.array([0, 2])
        counts = np.stack([vocab.count_vector(0, 0, 3), vocab.count_vector(2, 1, 3)])
        logits = repetitive_logits(
            ad.gather_rows(model.prefs.entity, idx),
            ad.gather_rows(model.prefs.relation, np.array([0, 1])),
            counts,
            model.prefs.project,
        )
        return ad.tensor_sum(ad.softmax_cross_entropy(logits, np.array([1, 0])))

    checks.append(_store_fd_check("count_scorer", model, repetitive_head_loss, seed=seed))

    def full_loss():
        states, presents = model.roll_window(window)
        loss, _ = compute_loss(model, window, states, presents, vocab,
                               target.edges, config)
        return loss

    checks.append(_store_fd_check("full_training_loss", model, full_loss,
                                  entries_per_param=3, seed=seed))
    return checks


def run_audit(printer=None, seed=0):
    """Run every check; print one line each; return True when all pass."""
    emit = printer or (lambda line: None)
    all_ok = True
    for name, err, ok in primitive_checks(seed) + assembled_checks(seed):
        emit(f"{'PASS' if ok else 'FAIL'} {name} max_rel_error={err:.3e}")
        all_ok = all_ok and ok
    return all_ok
