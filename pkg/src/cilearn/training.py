"""Initial and incremental training loops.

A phase follows a fixed script: snapshot the previous model, expand the
classifier (plus scratch rows for rotation labels), spawn zero adapters so
the new model starts as an exact functional copy, train with the combined
objective, prune the phase data once by difficulty scores, finish training on
the retained samples, then fuse the adapters and record prototypes for the
new classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import aux_head_count, expand_training_items
from .errors import ShapeError, StateError
from .losses import cross_entropy_batch, total_loss
from .network import Model
from .prototypes import compute_prototype
from .pruning import El2nRecord, score_dataset, select_retained
from .tensor import Tape, Tensor, no_grad, sgd_step, zero_grads


@dataclass
class TrainConfig:
    initial_epochs: int = 100
    incremental_epochs: int = 60
    prune_at_epoch: int = 20
    keep_ratio: float = 0.3
    lr_initial: float = 0.001
    lr_incremental: float = 0.0002
    lr_decay_every: int = 45
    lr_decay: float = 0.1
    batch_size: int = 128
    distill_weight: float = 10.0
    proto_weight: float = 10.0
    augment: str = "single"
    score_window: int = 1
    seed: int = 0

    def validate(self):
        if self.initial_epochs < 0 or self.incremental_epochs < 0:
            raise ShapeError("epoch counts must be non-negative")
        if self.incremental_epochs > 0 and not 1 <= self.prune_at_epoch < self.incremental_epochs:
            raise ShapeError(
                f"prune_at_epoch must lie in [1, incremental_epochs), got "
                f"{self.prune_at_epoch} with {self.incremental_epochs} epochs")
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ShapeError(f"keep_ratio must lie in (0, 1], got {self.keep_ratio}")
        if self.lr_initial <= 0 or self.lr_incremental <= 0:
            raise ShapeError("learning rates must be positive")
        if self.lr_decay_every < 1:
            raise ShapeError("lr_decay_every must be >= 1")
        if self.batch_size < 1:
            raise ShapeError("batch_size must be >= 1")
        if self.distill_weight < 0 or self.proto_weight < 0:
            raise ShapeError("loss weights must be non-negative")
        if self.augment not in ("none", "single", "all"):
            raise ShapeError(f"unknown augment mode {self.augment!r}")
        if self.score_window < 1:
            raise ShapeError("score_window must be >= 1")


@dataclass
class PhaseState:
    phase_index: int
    old_model: Model
    new_model: Model
    store: object
    head_of: dict
    new_heads: list


@dataclass
class StageOutcome:
    steps: int = 0
    records: list = field(default_factory=list)
    retained_indices: np.ndarray | None = None
    final_train_acc: float = 0.0


class TrainLog:
    """Collects per-epoch CSV rows: phase,epoch,split,losses,acc."""

    COLUMNS = "phase,epoch,split,loss_ce,loss_kd,loss_proto,loss_total,acc"

    def __init__(self):
        self.rows: list[str] = []

    def add(self, phase, epoch, split, ce, kd, proto, total, acc):
        self.rows.append(
            f"{phase},{epoch},{split},{ce:.6f},{kd:.6f},{proto:.6f},{total:.6f},{acc:.6f}")

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.COLUMNS + "\n")
            for row in self.rows:
                fh.write(row + "\n")


def to_float_images(images: np.ndarray) -> np.ndarray:
    if images.dtype == np.uint8:
        return images.astype(np.float64) / 255.0
    return np.asarray(images, dtype=np.float64)


def lr_at(base: float, epoch_index: int, decay_every: int, decay: float) -> float:
    return base * decay ** (epoch_index // decay_every)


def evaluate(model: Model, images: np.ndarray, head_labels, batch_size: int = 256):
    """Top-1 accuracy over the real class heads; returns per-class tallies too."""
    head_labels = np.asarray(head_labels)
    k = model.num_classes
    correct = np.zeros(k, dtype=np.int64)
    total = np.zeros(k, dtype=np.int64)
    with no_grad():
        for start in range(0, len(head_labels), batch_size):
            stop = min(start + batch_size, len(head_labels))
            xs = to_float_images(images[start:stop])
            logits = model.logits(Tensor(xs), use_adapters=model.has_adapters).data
            preds = np.argmax(logits[:, :k], axis=1)
            for pred, lab in zip(preds, head_labels[start:stop]):
                total[lab] += 1
                correct[lab] += int(pred == lab)
    acc = float(correct.sum()) / float(total.sum()) if total.sum() else 0.0
    return acc, correct, total


def _run_epoch(model, state, images_f, labels, lr, batch_size, rng, weights):
    """One pass of minibatch SGD; returns (mean parts, accuracy, steps)."""
    n = len(labels)
    order = rng.permutation(n)
    sums = {"ce": 0.0, "kd": 0.0, "proto": 0.0, "total": 0.0}
    hits = 0
    steps = 0
    params = model.trainable_params()
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        xb = Tensor(images_f[idx])
        yb = labels[idx]
        with Tape() as tape:
            if state is None:
                logits = model.logits(xb, use_adapters=model.has_adapters)
                loss = cross_entropy_batch(logits, yb)
                parts = {"ce": loss.item(), "kd": 0.0, "proto": 0.0, "total": loss.item()}
            else:
                loss, parts, logits = total_loss(state, xb, yb, *weights)
        tape.backward(loss)
        sgd_step(params, lr)
        zero_grads(params)
        preds = np.argmax(logits.data, axis=1)
        hits += int((preds == yb).sum())
        for key in sums:
            sums[key] += parts[key] * len(idx)
        steps += 1
    means = {key: val / n for key, val in sums.items()}
    return means, hits / n, steps


def train_initial(model: Model, images: np.ndarray, head_labels, config: TrainConfig,
                  rng, log: TrainLog | None = None, phase: int = 0) -> StageOutcome:
    """Train every parameter on the initial class block (cross-entropy only)."""
    config.validate()
    head_labels = np.asarray(head_labels, dtype=np.int64)
    if len(head_labels) == 0:
        raise ShapeError("initial training requires a non-empty dataset")
    if model.has_adapters:
        raise StateError("initial training expects a model without adapters")
    outcome = StageOutcome()
    model.attach_aux_heads(aux_head_count(model.num_classes, config.augment))
    try:
        for epoch in range(config.initial_epochs):
            xs, ys, _ = expand_training_items(images, head_labels, model.num_classes,
                                              rng, config.augment)
            lr = lr_at(config.lr_initial, epoch, config.lr_decay_every, config.lr_decay)
            means, acc, steps = _run_epoch(model, None, to_float_images(xs), ys, lr,
                                           config.batch_size, rng, None)
            outcome.steps += steps
            outcome.final_train_acc = acc
            if log is not None:
                log.add(phase, epoch + 1, "train", means["ce"], 0.0, 0.0, means["total"], acc)
    finally:
        model.drop_aux_heads()
    return outcome


def begin_phase(model: Model, phase_index: int, new_heads: list, store, head_of,
                config: TrainConfig) -> PhaseState:
    """Snapshot the old model, expand heads, attach scratch rows, spawn adapters."""
    if model.has_adapters:
        raise StateError("previous phase was not fused before starting a new one")
    if model.aux_heads:
        raise StateError("stale auxiliary heads present at phase start")
    old = model.clone()
    model.expand_classifier(len(new_heads))
    model.attach_aux_heads(aux_head_count(model.num_classes, config.augment))
    model.spawn_adapters()
    return PhaseState(phase_index=phase_index, old_model=old, new_model=model,
                      store=store, head_of=head_of, new_heads=list(new_heads))


def train_incremental_phase(state: PhaseState, images: np.ndarray, head_labels, config: TrainConfig,
                            rng, log: TrainLog | None = None,
                            sample_indices=None) -> StageOutcome:
    """Run one incremental phase on new-class data; fuses and stores prototypes."""
    config.validate()
    model = state.new_model
    if not model.has_adapters:
        raise StateError("incremental phase requires spawned adapters")
    if model.num_classes != state.old_model.num_classes + len(state.new_heads):
        raise StateError("classifier was not expanded for the new classes")
    head_labels = np.asarray(head_labels, dtype=np.int64)
    if len(head_labels) == 0:
        raise ShapeError("incremental phase requires a non-empty dataset")
    if sample_indices is None:
        sample_indices = np.arange(len(head_labels))
    sample_indices = np.asarray(sample_indices)

    outcome = StageOutcome()
    active = np.arange(len(head_labels))
    score_epochs = range(max(1, config.prune_at_epoch - config.score_window + 1),
                         config.prune_at_epoch + 1)
    window_scores: list[np.ndarray] = []
    weights = (config.distill_weight, config.proto_weight)

    for epoch in range(config.incremental_epochs):
        xs, ys, _ = expand_training_items(images[active], head_labels[active],
                                          model.num_classes, rng, config.augment)
        lr = lr_at(config.lr_incremental, epoch, config.lr_decay_every, config.lr_decay)
        means, acc, steps = _run_epoch(model, state, to_float_images(xs), ys, lr,
                                       config.batch_size, rng, weights)
        outcome.steps += steps
        outcome.final_train_acc = acc
        if log is not None:
            log.add(state.phase_index, epoch + 1, "train", means["ce"], means["kd"],
                    means["proto"], means["total"], acc)

        if epoch + 1 in score_epochs:
            recs = score_dataset(model, images, head_labels, sample_indices=sample_indices,
                                 epoch=epoch + 1)
            window_scores.append(np.array([r.score for r in recs]))
        if epoch + 1 == config.prune_at_epoch:
            mean_scores = np.mean(np.stack(window_scores), axis=0)
            outcome.records = [
                El2nRecord(int(idx), int(lab), float(score), config.prune_at_epoch)
                for idx, lab, score in zip(sample_indices, head_labels, mean_scores)]
            kept_global = select_retained(outcome.records, config.keep_ratio)
            keep_set = set(kept_global)
            active = np.array([i for i, gi in enumerate(sample_indices) if int(gi) in keep_set],
                              dtype=np.int64)
            outcome.retained_indices = np.asarray(kept_global, dtype=np.int64)

    if outcome.retained_indices is None:
        # phases too short to reach the pruning epoch keep everything
        outcome.retained_indices = np.asarray(sorted(int(i) for i in sample_indices),
                                              dtype=np.int64)

    model.fuse_adapters()
    model.drop_aux_heads()

    # prototypes for the new classes come from the retained originals only,
    # pushed through the fused end-of-phase model
    retained_local = active
    feats = _features_in_batches(model, images[retained_local])
    labs = head_labels[retained_local]
    head_to_class = {h: c for c, h in state.head_of.items()}
    for head in state.new_heads:
        rows = feats[labs == head]
        if len(rows) == 0:
            raise StateError(f"no retained samples for new class head {head}")
        state.store.add(head_to_class[head], compute_prototype(list(rows)), sample_count=len(rows))
    return outcome


def _features_in_batches(model: Model, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            xs = to_float_images(images[start : start + batch_size])
            out.append(model.features(Tensor(xs), use_adapters=False).data)
    return np.concatenate(out) if out else np.zeros((0, model.config.feature_dim))


def add_initial_prototypes(model: Model, images: np.ndarray, head_labels, store, head_of):
    """Prototypes for the initial class block (no pruning at stage zero)."""
    head_labels = np.asarray(head_labels)
    feats = _features_in_batches(model, images)
    head_to_class = {h: c for c, h in head_of.items()}
    for head in sorted(set(int(h) for h in head_labels)):
        rows = feats[head_labels == head]
        store.add(head_to_class[head], compute_prototype(list(rows)), sample_count=len(rows))
