"""Training loop, loss assembly, configuration, and checkpointing.

Targets are visited chronologically; graphs before each target supply the
embedding window and the object-count history, so no future fact ever leaks
into a training example. Events inside one target snapshot are shuffled and
split into minibatches; every batch refreshes the window states from the
current base tables before computing the loss.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Adam
from .data import GraphHistory, HistoryVocabulary, build_snapshots
from .model import HipModel
from .scoring import repetitive_logits, structural_logits_all, temporal_logits
from .structural import COMPOSITIONS, NORMALIZATIONS, ConfigError, SipConfig

log = logging.getLogger(__name__)

FEEDBACK_MODES = ("predicted", "observed", "none")
SCORE_MODES = ("structural", "repetitive", "combined")
FILTER_MODES = ("time-aware", "static")


@dataclass
class TrainConfig:
    dim: int = 200
    channels: int = 4
    layers: int = 2
    composition: str = "multiplication"
    normalization: str = "none"
    window: int = 10
    learning_rate: float = 0.001
    batch_size: int = 1024
    epochs: int = 30
    dropout: float = 0.5
    seed: int = 0
    loss_temporal: bool = True
    loss_structural: bool = True
    loss_repetitive: bool = True
    binarize: bool = False
    top_k: int = 10
    feedback: str = "predicted"
    filter_mode: str = "time-aware"
    score_mode: str = "combined"
    eval_every: int = 0  # validation cadence in epochs; 0 disables selection

    def __post_init__(self):
        for name in ("dim", "channels", "layers", "window", "batch_size", "top_k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0 or self.eval_every < 0:
            raise ConfigError("epochs and eval_every must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if not (self.loss_temporal or self.loss_structural or self.loss_repetitive):
            raise ConfigError("at least one loss term must be enabled")
        if self.composition not in COMPOSITIONS:
            raise ConfigError(f"unknown composition {self.composition!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        if self.feedback not in FEEDBACK_MODES:
            raise ConfigError(f"unknown feedback mode {self.feedback!r}")
        if self.filter_mode not in FILTER_MODES:
            raise ConfigError(f"unknown filter mode {self.filter_mode!r}")
        if self.score_mode not in SCORE_MODES:
            raise ConfigError(f"unknown score mode {self.score_mode!r}")

    def sip_config(self):
        return SipConfig(
            dim=self.dim,
            channels=self.channels,
            layers=self.layers,
            composition=self.composition,
            normalization=self.normalization,
            dropout=self.dropout,
        )


def _parse_value(name, kind, raw):
    if kind is bool:
        lowered = str(raw).strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected {kind.__name__}, got {raw!r}")


def parse_config_file(path):
    """Flat key=value lines; '#' starts a comment, blank lines are skipped."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {body!r}")
            key, raw = body.split("=", 1)
            values[key.strip().replace("-", "_")] = raw.strip()
    return values


def make_config(file_values=None, overrides=None):
    """Build a TrainConfig with precedence overrides > file > defaults."""
    kinds = {f.name: f.type if isinstance(f.type, type) else type(f.default)
             for f in fields(TrainConfig)}
    merged = {}
    for source in (file_values or {}), (overrides or {}):
        for key, raw in source.items():
            name = key.replace("-", "_")
            if name not in kinds:
                raise ConfigError(f"unknown configuration key {key!r}")
            if isinstance(raw, str):
                merged[name] = _parse_value(name, kinds[name], raw)
            else:
                merged[name] = raw
    return TrainConfig(**merged)


# ---------------------------------------------------------------------------
# loss


def _count_matrix(vocab, keys, num_entities, binarize):
    counts = np.stack([vocab.count_vector(s, r, num_entities) for s, r in keys])
    return np.minimum(counts, 1.0) if binarize else counts


def compute_loss(model, window, states, presents, vocab, batch, config):
    """Mean per-event loss over one minibatch of (s, r, o) target edges.

    Three cross-entropy terms share the event's relation/object labels; the
    relation-prediction term only applies to events whose entity pair has
    history inside the window. Returns (loss tensor, breakdown dict).
    """
    if not batch:
        raise ValueError("empty training batch")
    n = len(batch)
    subs = np.array([e[0] for e in batch], dtype=np.int64)
    rels = np.array([e[1] for e in batch], dtype=np.int64)
    objs = np.array([e[2] for e in batch], dtype=np.int64)
    final = model.final_state(states)
    breakdown = {"events": n}
    term_sums = []

    if config.loss_structural:
        x_s = ad.gather_rows(final.entities, subs)
        x_r = ad.gather_rows(final.relations, rels)
        losses = ad.softmax_cross_entropy(
            structural_logits_all(x_s, x_r, final.entities), objs
        )
        term_sums.append(ad.tensor_sum(losses))
        breakdown["structural"] = float(np.mean(losses.value))

    if config.loss_repetitive:
        counts = _count_matrix(vocab, zip(subs, rels), model.num_entities, config.binarize)
        losses = ad.softmax_cross_entropy(
            repetitive_logits(
                ad.gather_rows(model.prefs.entity, subs),
                ad.gather_rows(model.prefs.relation, rels),
                counts,
                model.prefs.project,
            ),
            objs,
        )
        term_sums.append(ad.tensor_sum(losses))
        breakdown["repetitive"] = float(np.mean(losses.value))

    if config.loss_temporal and states:
        encoded = model.pair_embeddings(window, states, sorted({(s, o) for s, _, o in batch}))
        live = [i for i in range(n) if (subs[i], objs[i]) in encoded]
        breakdown["temporal_events"] = len(live)
        if live:
            ids = sorted({int(subs[i]) for i in live} | {int(objs[i]) for i in live})
            z = model.temporal_entity_embeddings(states, presents, ids)
            pos = {e: j for j, e in enumerate(ids)}
            z_s = ad.gather_rows(z, np.array([pos[int(subs[i])] for i in live]))
            z_o = ad.gather_rows(z, np.array([pos[int(objs[i])] for i in live]))
            z_so = ad.concat([encoded[(subs[i], objs[i])] for i in live], axis=0)
            losses = ad.softmax_cross_entropy(
                temporal_logits(z_s, z_so, z_o, model.temporal_project), rels[live]
            )
            term_sums.append(ad.tensor_sum(losses))
            breakdown["temporal"] = float(np.mean(losses.value))

    if not term_sums:
        raise ValueError("no loss terms applicable to this batch")
    total = term_sums[0]
    for extra in term_sums[1:]:
        total = total + extra
    loss = ad.scale(total, 1.0 / n)
    breakdown["loss"] = float(loss.value)
    return loss, breakdown


# ---------------------------------------------------------------------------
# epoch loop


def train_epoch(model, snapshots, config, optimizer, rng):
    """One pass over chronological targets; returns averaged term values.

    The first snapshot only seeds history (it has no preceding window).
    """
    if len(snapshots) < 2:
        raise ValueError("need at least two snapshots to build training targets")
    vocab = HistoryVocabulary()
    sums = {"loss": 0.0, "structural": 0.0, "repetitive": 0.0, "temporal": 0.0}
    weights = {key: 0 for key in sums}
    batches = 0
    for idx in range(1, len(snapshots)):
        vocab.update(snapshots[idx - 1])
        target = snapshots[idx]
        window = snapshots[max(0, idx - config.window):idx]
        order = rng.permutation(len(target.edges))
        edges = [target.edges[i] for i in order]
        for start in range(0, len(edges), config.batch_size):
            batch = edges[start:start + config.batch_size]
            model.store.zero_grad()
            states, presents = model.roll_window(window, training=True, rng=rng)
            loss, parts = compute_loss(model, window, states, presents, vocab, batch, config)
            loss.backward()
            optimizer.step()
            batches += 1
            for key in sums:
                if key in parts:
                    rows = parts["temporal_events"] if key == "temporal" else parts["events"]
                    sums[key] += parts[key] * rows
                    weights[key] += rows
    metrics = {"batches": batches}
    for key in sums:
        metrics[key] = sums[key] / weights[key] if weights[key] else float("nan")
    return metrics


# ---------------------------------------------------------------------------
# checkpointing

CHECKPOINT_MAGIC = b"TKGC"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    epoch: int
    adam_step: int
    rng_state: dict | None
    arrays: dict


def save_checkpoint(path, store, config, epoch, optimizer=None, rng=None):
    """Single-file little-endian snapshot of parameters and optimizer state."""
    arrays = {name: np.ascontiguousarray(arr) for name, arr in store.arrays().items()}
    if optimizer is not None:
        for name, m in optimizer.state.first_moment.items():
            arrays[f"adam.m.{name}"] = np.ascontiguousarray(m)
        for name, v in optimizer.state.second_moment.items():
            arrays[f"adam.v.{name}"] = np.ascontiguousarray(v)
    header = {
        "config": asdict(config),
        "epoch": epoch,
        "adam_step": optimizer.state.step if optimizer is not None else 0,
        "rng_state": rng.bit_generator.state if rng is not None else None,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            encoded = name.encode()
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def _read_exact(fh, size, what):
    buf = fh.read(size)
    if len(buf) != size:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )
        (blob_len,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
        header = json.loads(_read_exact(fh, blob_len, "header"))
        (n_arrays,) = struct.unpack("<I", _read_exact(fh, 4, "array count"))
        arrays = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "name").decode()
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, "ndim"))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, "shape"))
            count = int(np.prod(shape)) if ndim else 1
            data = _read_exact(fh, 8 * count, f"array {name!r}")
            arrays[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    return Checkpoint(
        config=TrainConfig(**header["config"]),
        epoch=header["epoch"],
        adam_step=header["adam_step"],
        rng_state=header["rng_state"],
        arrays=arrays,
    )


def restore_training_state(checkpoint, model, optimizer=None, rng=None):
    """Load parameters (and optimizer moments, rng position) from a checkpoint."""
    params = {
        name: arr for name, arr in checkpoint.arrays.items() if not name.startswith("adam.")
    }
    model.store.load_arrays(params)
    if optimizer is not None:
        optimizer.state.step = checkpoint.adam_step
        for name, arr in checkpoint.arrays.items():
            if name.startswith("adam.m."):
                optimizer.state.first_moment[name[len("adam.m."):]] = arr.copy()
            elif name.startswith("adam.v."):
                optimizer.state.second_moment[name[len("adam.v."):]] = arr.copy()
    if rng is not None and checkpoint.rng_state is not None:
        rng.bit_generator.state = checkpoint.rng_state


# ---------------------------------------------------------------------------
# full runs


def run_training(bundle, config, *, checkpoint_path=None, log_path=None,
                 resume_from=None, progress=None):
    """Train a model on a dataset bundle; returns (model, epoch rows).

    With `eval_every` > 0 and a validation split, validation MRR is tracked
    and the best-scoring parameters are restored (and checkpointed) at the
    end. `resume_from` continues a saved run: parameters, optimizer moments,
    rng position, and the epoch counter all pick up where they left off.
    """
    from .evaluation import run_evaluation  # local import keeps module load light

    rng = np.random.default_rng(config.seed)
    model = HipModel.build(
        bundle.num_entities, bundle.num_relations, config.sip_config(), config.window, rng
    )
    optimizer = Adam(model.store, lr=config.learning_rate)
    start_epoch = 0
    if resume_from is not None:
        checkpoint = load_checkpoint(resume_from)
        restore_training_state(checkpoint, model, optimizer, rng)
        start_epoch = checkpoint.epoch
    snapshots = build_snapshots(bundle.train, bundle.num_relations)
    history = GraphHistory(snapshots=list(snapshots))

    rows = []
    best = None  # (mrr, epoch, copied arrays)
    writer = None
    log_file = open(log_path, "w", newline="") if log_path else None
    try:
        for epoch in range(start_epoch, config.epochs):
            metrics = train_epoch(model, snapshots, config, optimizer, rng)
            row = {"epoch": epoch, **metrics}
            if config.eval_every and bundle.valid and (epoch + 1) % config.eval_every == 0:
                report, _, _ = run_evaluation(
                    model, history, bundle.valid, bundle.num_relations,
                    filter_quadruples=bundle.train + bundle.valid,
                    filter_mode=config.filter_mode, feedback=config.feedback,
                    score_mode=config.score_mode, top_k=config.top_k,
                    binarize=config.binarize,
                )
                row["valid_mrr"] = report.mrr
                if best is None or report.mrr > best[0]:
                    best = (
                        report.mrr,
                        epoch,
                        {name: arr.copy() for name, arr in model.store.arrays().items()},
                    )
            rows.append(row)
            if log_file is not None:
                if writer is None:
                    names = ["epoch", "loss", "structural", "repetitive", "temporal",
                             "batches", "valid_mrr"]
                    writer = csv.DictWriter(log_file, fieldnames=names, restval="")
                    writer.writeheader()
                writer.writerow(row)
                log_file.flush()
            if progress is not None:
                progress(row)
    finally:
        if log_file is not None:
            log_file.close()

    if best is not None:
        log.info("restoring best validation parameters from epoch %d", best[1])
        model.store.load_arrays(best[2])
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model.store, config, config.epochs, optimizer, rng)
    return model, rows


def build_model_from_checkpoint(bundle, checkpoint):
    """Reconstruct a model shell matching a checkpoint and load its weights."""
    config = checkpoint.config
    rng = np.random.default_rng(config.seed)
    model = HipModel.build(
        bundle.num_entities, bundle.num_relations, config.sip_config(), config.window, rng
    )
    restore_training_state(checkpoint, model)
    return model, config
