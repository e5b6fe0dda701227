"""The scikit-learn facade: params, fit/partial_fit/predict, ecosystem fit."""

import numpy as np
import pytest
from sklearn.base import clone

from cilearn import NotFittedError, ShapeError
from cilearn.data import synthetic_dataset
from cilearn.estimator import IncrementalImageClassifier


def small_estimator(**overrides):
    params = dict(stage_channels=(8, 16), blocks_per_stage=(1, 1), initial_epochs=4,
                  incremental_epochs=3, prune_at_epoch=1, keep_ratio=0.5,
                  lr_initial=0.02, lr_incremental=0.005, batch_size=16,
                  distill_weight=2.0, proto_weight=2.0, augment="none", seed=3)
    params.update(overrides)
    return IncrementalImageClassifier(**params)


@pytest.fixture(scope="module")
def tiles():
    train = synthetic_dataset(classes=6, samples_per_class=12, image_size=16, seed=5)
    test = synthetic_dataset(classes=6, samples_per_class=6, image_size=16, seed=6)
    return train, test


class TestSklearnProtocol:
    def test_get_set_params_round_trip(self):
        est = small_estimator()
        params = est.get_params()
        assert params["keep_ratio"] == 0.5
        est.set_params(keep_ratio=0.7)
        assert est.keep_ratio == 0.7

    def test_clone_preserves_params(self):
        est = small_estimator(keep_ratio=0.9)
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_unfitted_predict_raises(self):
        with pytest.raises(NotFittedError):
            small_estimator().predict(np.zeros((1, 3, 16, 16), dtype=np.uint8))

    def test_unfitted_partial_fit_raises(self):
        with pytest.raises(NotFittedError):
            small_estimator().partial_fit(np.zeros((1, 3, 16, 16), dtype=np.uint8), [0])


class TestFitPredict:
    def test_fit_returns_self_and_sets_attributes(self, tiles):
        train, _ = tiles
        idx = train.indices_of_classes([0, 1, 2])
        est = small_estimator()
        assert est.fit(train.images[idx], train.labels[idx]) is est
        np.testing.assert_array_equal(est.classes_, [0, 1, 2])
        assert est.model_.num_classes == 3
        assert len(est.prototypes_) == 3

    def test_predict_labels_in_classes(self, tiles):
        train, test = tiles
        idx = train.indices_of_classes([0, 1, 2])
        est = small_estimator().fit(train.images[idx], train.labels[idx])
        tidx = test.indices_of_classes([0, 1, 2])
        preds = est.predict(test.images[tidx])
        assert set(preds) <= {0, 1, 2}
        assert est.score(test.images[tidx], test.labels[tidx]) >= 0.0

    def test_predict_proba_sums_to_one(self, tiles):
        train, test = tiles
        idx = train.indices_of_classes([0, 1, 2])
        est = small_estimator().fit(train.images[idx], train.labels[idx])
        probs = est.predict_proba(test.images[test.indices_of_classes([0, 1])])
        assert probs.shape[1] == 3
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_transform_feature_shape(self, tiles):
        train, _ = tiles
        idx = train.indices_of_classes([0, 1, 2])
        est = small_estimator().fit(train.images[idx], train.labels[idx])
        feats = est.transform(train.images[idx][:5])
        assert feats.shape == (5, 16)

    def test_non_contiguous_labels_supported(self, tiles):
        train, _ = tiles
        idx = train.indices_of_classes([1, 4])
        est = small_estimator().fit(train.images[idx], train.labels[idx])
        np.testing.assert_array_equal(est.classes_, [1, 4])
        preds = est.predict(train.images[idx][:4])
        assert set(preds) <= {1, 4}


class TestPartialFit:
    def test_phase_flow(self, tiles):
        train, test = tiles
        idx = train.indices_of_classes([0, 1, 2])
        est = small_estimator().fit(train.images[idx], train.labels[idx])
        idx2 = train.indices_of_classes([3, 4])
        est.partial_fit(train.images[idx2], train.labels[idx2])
        np.testing.assert_array_equal(est.classes_, [0, 1, 2, 3, 4])
        assert est.model_.num_classes == 5
        assert not est.model_.has_adapters  # fused at phase end
        assert est.n_phases_ == 1
        assert len(est.prototypes_) == 5
        preds = est.predict(test.images[test.indices_of_classes([3])])
        assert set(preds) <= {0, 1, 2, 3, 4}

    def test_seen_class_rejected(self, tiles):
        train, _ = tiles
        idx = train.indices_of_classes([0, 1, 2])
        est = small_estimator().fit(train.images[idx], train.labels[idx])
        with pytest.raises(ShapeError, match="unseen"):
            est.partial_fit(train.images[idx], train.labels[idx])

    def test_history_records_steps_and_retention(self, tiles):
        train, _ = tiles
        idx = train.indices_of_classes([0, 1])
        est = small_estimator(keep_ratio=0.5).fit(train.images[idx], train.labels[idx])
        idx2 = train.indices_of_classes([2])
        est.partial_fit(train.images[idx2], train.labels[idx2])
        assert est.history_[0]["phase"] == 0
        assert est.history_[1]["retained"] == 6  # ceil(0.5 * 12)
        assert est.history_[1]["train_steps"] > 0


class TestValidation:
    def test_bad_image_shape_rejected(self):
        with pytest.raises(ShapeError):
            small_estimator().fit(np.zeros((4, 16, 16), dtype=np.uint8), [0, 0, 1, 1])

    def test_label_mismatch_rejected(self, tiles):
        train, _ = tiles
        idx = train.indices_of_classes([0, 1])
        with pytest.raises(ShapeError):
            small_estimator().fit(train.images[idx], train.labels[idx][:-1])

    def test_non_finite_floats_rejected(self):
        X = np.zeros((2, 3, 16, 16))
        X[0, 0, 0, 0] = np.nan
        with pytest.raises(ShapeError):
            small_estimator().fit(X, [0, 1])
