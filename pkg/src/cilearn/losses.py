"""The three training losses and their weighted combination.

* new-class cross-entropy over the current batch,
* feature-space distillation against the previous-phase snapshot
  (gradients reach only the adapters, because everything else is frozen),
* prototype replay cross-entropy that recalibrates the classifier rows of
  old classes (prototypes are constants, so gradients reach only the
  classifier).
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .ops import (
    add,
    mean_all,
    one_hot,
    rowwise_l2_distance,
    scale,
    softmax_cross_entropy,
)
from .tensor import Tensor, no_grad


def loss_ce(logits: Tensor, label: int) -> Tensor:
    """Cross-entropy of one sample: -log softmax(logits)[label]."""
    k = logits.data.shape[-1]
    if not 0 <= label < k:
        raise ShapeError(f"label {label} out of range for {k} classes")
    return softmax_cross_entropy(logits, one_hot(label, k))


def cross_entropy_batch(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy over a batch of integer labels."""
    labels = np.asarray(labels)
    k = logits.data.shape[-1]
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError(f"labels outside [0, {k})")
    targets = np.zeros(logits.data.shape, dtype=np.float64)
    targets[np.arange(len(labels)), labels] = 1.0
    return softmax_cross_entropy(logits, targets)


def loss_kd(new_model, old_model, x: Tensor) -> Tensor:
    """Feature-space distillation: distance between adapted and snapshot features.

    The snapshot pass runs without recording; per-sample Euclidean distances
    are averaged over the batch (a single sample is the distance itself).
    """
    if old_model.config != new_model.config:
        raise ShapeError("teacher and student architectures differ")
    with no_grad():
        teacher = old_model.features(x, use_adapters=False)
    student = new_model.features(x, use_adapters=True)
    if student.data.ndim == 1:
        student = _as_row(student)
        teacher = _as_row(teacher)
    return mean_all(rowwise_l2_distance(student, Tensor(teacher.data)))


def _as_row(t: Tensor) -> Tensor:
    from .ops import _maybe_record  # local import to keep the op set minimal

    out = Tensor(t.data[None, :])

    def backward(grad):
        return [(t, grad[0])]

    return _maybe_record(out, backward, t)


def loss_proto(model, store, head_of) -> Tensor:
    """Summed cross-entropy of stored prototypes against their class heads.

    ``head_of`` maps stored class ids to classifier row indices.  An empty
    store contributes exactly zero.
    """
    if len(store) == 0:
        return Tensor(0.0)
    protos = []
    heads = []
    for cid, vec, _ in store.items():
        protos.append(vec.astype(np.float64))
        heads.append(head_of[cid])
    logits = model.logits_from_features(Tensor(np.stack(protos)))
    # spec'd as a sum over stored prototypes, not a mean
    return scale(cross_entropy_batch(logits, np.asarray(heads)), float(len(protos)))


def total_loss(state, x: Tensor, labels, distill_weight: float, proto_weight: float):
    """Combined objective ``ce + distill_weight*kd + proto_weight*proto``.

    Returns the scalar loss tensor plus the detached part values and the
    batch logits for accuracy bookkeeping.
    """
    student_feats = state.new_model.features(x, use_adapters=True)
    logits = state.new_model.logits_from_features(student_feats)
    ce = cross_entropy_batch(logits, labels)
    with no_grad():
        teacher_feats = state.old_model.features(x, use_adapters=False)
    sf = student_feats if student_feats.data.ndim == 2 else _as_row(student_feats)
    tf = teacher_feats.data if teacher_feats.data.ndim == 2 else teacher_feats.data[None, :]
    kd = mean_all(rowwise_l2_distance(sf, Tensor(tf)))
    proto = loss_proto(state.new_model, state.store, state.head_of)
    total = add(add(ce, scale(kd, distill_weight)), scale(proto, proto_weight))
    parts = {"ce": ce.item(), "kd": kd.item(), "proto": proto.item(), "total": total.item()}
    return total, parts, logits
