"""Prediction-error-norm scoring and per-class retention selection.

A sample's score is the Euclidean distance between its predicted class
probabilities and its one-hot label; scores near zero mean the sample is
already mastered.  Pruning keeps, within each class, the hardest (highest
scoring) fraction of samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .errors import ShapeError
from .ops import softmax
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class El2nRecord:
    sample_index: int
    class_id: int
    score: float
    epoch_measured: int


def el2n_score(probs: np.ndarray, target_one_hot: np.ndarray) -> float:
    """Euclidean distance between a probability vector and a one-hot label."""
    probs = np.asarray(probs, dtype=np.float64)
    oh = np.asarray(target_one_hot, dtype=np.float64)
    if probs.shape != oh.shape or probs.ndim != 1:
        raise ShapeError(f"probs and one-hot must be matching vectors, got {probs.shape} and {oh.shape}")
    if probs.min() < 0.0 or abs(probs.sum() - 1.0) > 1e-9:
        raise ShapeError("probs must be non-negative and sum to 1")
    binary = (oh == 0.0) | (oh == 1.0)
    if not binary.all() or oh.sum() != 1.0:
        raise ShapeError("target must be one-hot")
    return float(np.linalg.norm(probs - oh))


def score_dataset(model, images: np.ndarray, labels, sample_indices=None,
                  epoch: int = 0, batch_size: int = 256) -> list[El2nRecord]:
    """Score every sample with the model's current class-head probabilities.

    ``labels`` must be classifier head indices; auxiliary heads are excluded
    from the probability vector.  ``sample_indices`` names each record (the
    positional index by default).
    """
    labels = np.asarray(labels)
    n = len(labels)
    if sample_indices is None:
        sample_indices = np.arange(n)
    sample_indices = np.asarray(sample_indices)
    if len(sample_indices) != n or len(images) != n:
        raise ShapeError("images, labels, and sample_indices must align")
    k = model.num_classes
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ShapeError(f"labels outside [0, {k})")
    records = []
    with no_grad():
        for start in range(0, n, batch_size):
            stop = min(start + batch_size, n)
            xs = _to_float(images[start:stop])
            logits = model.logits(Tensor(xs), use_adapters=model.has_adapters).data
            probs = softmax(logits[:, :k])
            for row, (idx, lab) in enumerate(zip(sample_indices[start:stop], labels[start:stop])):
                diff = probs[row].copy()
                diff[lab] -= 1.0
                records.append(El2nRecord(int(idx), int(lab), float(np.linalg.norm(diff)),
                                          int(epoch)))
    return records


def _to_float(images: np.ndarray) -> np.ndarray:
    if images.dtype == np.uint8:
        return images.astype(np.float64) / 255.0
    return np.asarray(images, dtype=np.float64)


def select_retained(records, keep_ratio: float, per_class: bool = True) -> list[int]:
    """Keep the highest-scoring ceil(keep_ratio * n) samples, per class by default.

    Ties break toward the smaller sample index, so selection is deterministic.
    Returns sorted sample indices.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise ShapeError(f"keep_ratio must lie in (0, 1], got {keep_ratio}")
    records = list(records)
    if per_class:
        groups: dict[int, list[El2nRecord]] = {}
        for rec in records:
            groups.setdefault(rec.class_id, []).append(rec)
    else:
        groups = {0: records}
    kept: list[int] = []
    for recs in groups.values():
        recs.sort(key=lambda r: (-r.score, r.sample_index))
        kept.extend(r.sample_index for r in recs[: ceil(keep_ratio * len(recs))])
    return sorted(kept)
