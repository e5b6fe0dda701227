"""scikit-learn estimator facade over the incremental training engine.

``fit`` runs the initial stage on the first class block; each later
``partial_fit`` call learns one batch of previously unseen classes as an
incremental phase (adapters in, train, prune, fuse, prototypes out).
``predict``/``predict_proba`` always score against every class seen so far,
and ``transform`` exposes the pre-classifier features, so the model drops
into pipelines and cross-validation tooling unchanged.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import NotFittedError, ShapeError
from .network import ModelConfig, build_model
from .prototypes import PrototypeStore
from .tensor import Tensor, no_grad
from .training import (
    TrainConfig,
    TrainLog,
    add_initial_prototypes,
    begin_phase,
    to_float_images,
    train_incremental_phase,
    train_initial,
)
from .validation import check_image_batch, check_label_array


class IncrementalImageClassifier(BaseEstimator, ClassifierMixin):
    """Class-incremental image classifier with fuseable adapter convolutions.

    Parameters mirror the training configuration; images are [N,c,h,w]
    uint8 (scaled by 1/255 internally) or floats in [0, 1].
    """

    def __init__(self, stage_channels=(16, 32, 64), blocks_per_stage=(2, 2, 2),
                 s=2, initial_epochs=100, incremental_epochs=60, prune_at_epoch=20,
                 keep_ratio=0.3, lr_initial=0.001, lr_incremental=0.0002,
                 lr_decay_every=45, batch_size=128, distill_weight=10.0,
                 proto_weight=10.0, augment="single", score_window=1, seed=0):
        self.stage_channels = stage_channels
        self.blocks_per_stage = blocks_per_stage
        self.s = s
        self.initial_epochs = initial_epochs
        self.incremental_epochs = incremental_epochs
        self.prune_at_epoch = prune_at_epoch
        self.keep_ratio = keep_ratio
        self.lr_initial = lr_initial
        self.lr_incremental = lr_incremental
        self.lr_decay_every = lr_decay_every
        self.batch_size = batch_size
        self.distill_weight = distill_weight
        self.proto_weight = proto_weight
        self.augment = augment
        self.score_window = score_window
        self.seed = seed

    # -- configuration ------------------------------------------------------
    def _train_config(self) -> TrainConfig:
        cfg = TrainConfig(
            initial_epochs=self.initial_epochs, incremental_epochs=self.incremental_epochs,
            prune_at_epoch=self.prune_at_epoch, keep_ratio=self.keep_ratio,
            lr_initial=self.lr_initial, lr_incremental=self.lr_incremental,
            lr_decay_every=self.lr_decay_every, batch_size=self.batch_size,
            distill_weight=self.distill_weight, proto_weight=self.proto_weight,
            augment=self.augment, score_window=self.score_window, seed=self.seed)
        cfg.validate()
        return cfg

    def _model_config(self, input_shape) -> ModelConfig:
        cfg = ModelConfig(stage_channels=tuple(self.stage_channels),
                          blocks_per_stage=tuple(self.blocks_per_stage),
                          input_shape=tuple(input_shape),
                          feature_dim=int(self.stage_channels[-1]), s=self.s)
        cfg.validate()
        return cfg

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before using this estimator")

    # -- training -----------------------------------------------------------
    def fit(self, X, y):
        """Train the initial class block from scratch."""
        X = check_image_batch(X)
        y = check_label_array(y, n_samples=len(X))
        config = self._train_config()
        self.classes_ = np.unique(y)
        self._head_of_ = {int(c): i for i, c in enumerate(self.classes_)}
        heads = np.array([self._head_of_[int(v)] for v in y])
        self.model_ = build_model(self._model_config(X.shape[1:]),
                                  num_classes=len(self.classes_), seed=self.seed)
        self._rng_ = np.random.default_rng(np.random.SeedSequence(self.seed))
        self.log_ = TrainLog()
        self.history_ = []
        outcome = train_initial(self.model_, X, heads, config, self._rng_, self.log_)
        self.prototypes_ = PrototypeStore(self.model_.config.feature_dim)
        add_initial_prototypes(self.model_, X, heads, self.prototypes_, self._head_of_)
        self.history_.append({"phase": 0, "classes": [int(c) for c in self.classes_],
                              "train_steps": outcome.steps,
                              "retained": len(y)})
        self.n_phases_ = 0
        return self

    def partial_fit(self, X, y, classes=None):
        """Learn one incremental phase of previously unseen classes."""
        self._check_fitted()
        X = check_image_batch(X, expected_shape=self.model_.config.input_shape)
        y = check_label_array(y, n_samples=len(X))
        new_classes = np.unique(y)
        known = set(int(c) for c in self.classes_)
        overlap = [int(c) for c in new_classes if int(c) in known]
        if overlap:
            raise ShapeError(f"phase data must contain only unseen classes; got {overlap}")
        if classes is not None:
            declared = set(int(c) for c in classes)
            if not set(int(c) for c in new_classes) <= declared:
                raise ShapeError("y contains classes not listed in `classes`")
        config = self._train_config()
        for c in new_classes:
            self._head_of_[int(c)] = len(self._head_of_)
        new_heads = [self._head_of_[int(c)] for c in new_classes]
        heads = np.array([self._head_of_[int(v)] for v in y])
        state = begin_phase(self.model_, self.n_phases_ + 1, new_heads,
                            self.prototypes_, self._head_of_, config)
        outcome = train_incremental_phase(state, X, heads, config, self._rng_, self.log_)
        self.classes_ = np.sort(np.concatenate([self.classes_, new_classes]))
        self.n_phases_ += 1
        self.history_.append({"phase": self.n_phases_,
                              "classes": [int(c) for c in new_classes],
                              "train_steps": outcome.steps,
                              "retained": len(outcome.retained_indices)})
        self.last_records_ = outcome.records
        return self

    # -- inference ----------------------------------------------------------
    def _head_logits(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_image_batch(X, expected_shape=self.model_.config.input_shape)
        k = self.model_.num_classes
        out = []
        with no_grad():
            for start in range(0, len(X), 256):
                xs = to_float_images(X[start : start + 256])
                logits = self.model_.logits(Tensor(xs), use_adapters=self.model_.has_adapters)
                out.append(logits.data[:, :k])
        return np.concatenate(out)

    def predict(self, X) -> np.ndarray:
        heads = np.argmax(self._head_logits(X), axis=1)
        inverse = {h: c for c, h in self._head_of_.items()}
        return np.array([inverse[int(h)] for h in heads])

    def predict_proba(self, X) -> np.ndarray:
        """Probabilities ordered by ``classes_`` (sorted class labels)."""
        from .ops import softmax

        probs_by_head = softmax(self._head_logits(X))
        order = [self._head_of_[int(c)] for c in self.classes_]
        return probs_by_head[:, order]

    def transform(self, X) -> np.ndarray:
        """Pre-classifier feature vectors (post global average pooling)."""
        self._check_fitted()
        X = check_image_batch(X, expected_shape=self.model_.config.input_shape)
        out = []
        with no_grad():
            for start in range(0, len(X), 256):
                xs = to_float_images(X[start : start + 256])
                out.append(self.model_.features(Tensor(xs),
                                                use_adapters=self.model_.has_adapters).data)
        return np.concatenate(out)
