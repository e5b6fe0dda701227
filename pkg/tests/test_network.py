"""Model assembly, classifier expansion, adapter lifecycle, checkpoints."""

import numpy as np
import pytest

from cilearn import DataError, ShapeError, StateError, Tensor
from cilearn.checkpoint import load_checkpoint, read_tensors, save_checkpoint, write_tensors
from cilearn.network import (
    ModelConfig,
    build_model,
    classify,
    desk_config,
    expand_classifier,
    extract_features,
    plain_mac_count,
    plain_param_count,
    resnet18_config,
)


def tiny_config():
    return ModelConfig(stage_channels=(4, 8), blocks_per_stage=(1, 1),
                       input_shape=(3, 8, 8), feature_dim=8, s=2)


def tiny_model(num_classes=3, seed=0):
    return build_model(tiny_config(), num_classes=num_classes, seed=seed)


def rand_input(seed=0, shape=(3, 8, 8)):
    return Tensor(np.random.default_rng(seed).normal(size=shape))


class TestBuild:
    def test_same_seed_bit_identical(self):
        a, b = tiny_model(seed=7), tiny_model(seed=7)
        for (na, pa), (nb, pb) in zip(a.named_params(), b.named_params()):
            assert na == nb
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_different_seed_differs(self):
        a, b = tiny_model(seed=1), tiny_model(seed=2)
        assert any(np.any(pa.data != pb.data)
                   for (_, pa), (_, pb) in zip(a.named_params(), b.named_params()))

    def test_feature_shape(self):
        m = tiny_model()
        feats = extract_features(m, rand_input())
        assert feats.data.shape == (8,)

    def test_zero_classes_rejected(self):
        with pytest.raises(ShapeError):
            build_model(tiny_config(), num_classes=0)

    def test_config_validation(self):
        with pytest.raises(ShapeError):
            ModelConfig(stage_channels=(4,), blocks_per_stage=(1, 1)).validate()
        with pytest.raises(ShapeError):
            ModelConfig(stage_channels=(4, 8), blocks_per_stage=(1, 1),
                        input_shape=(3, 8, 8), feature_dim=4).validate()

    def test_no_adapters_at_build(self):
        assert not tiny_model().has_adapters

    def test_param_count_beats_plain_twin(self):
        for cfg, k in [(desk_config(), 10), (resnet18_config(), 100)]:
            m = build_model(cfg, num_classes=k, seed=0)
            assert m.param_count() / plain_param_count(cfg, k) < 0.55
            assert m.mac_count() / plain_mac_count(cfg, k) < 0.55


class TestForward:
    def test_deterministic(self):
        m = tiny_model()
        x = rand_input(1)
        np.testing.assert_array_equal(extract_features(m, x).data, extract_features(m, x).data)

    def test_adapters_flag_is_noop_without_adapters(self):
        m = tiny_model()
        x = rand_input(2)
        a = extract_features(m, x, use_adapters=True)
        b = extract_features(m, x, use_adapters=False)
        np.testing.assert_array_equal(a.data, b.data)

    def test_classify_matches_manual_linear(self):
        m = tiny_model()
        x = rand_input(3)
        feats = extract_features(m, x)
        want = m.classifier_weight.data @ feats.data + m.classifier_bias.data
        np.testing.assert_allclose(classify(m, x).data, want, atol=1e-12)

    def test_single_class_single_logit(self):
        m = tiny_model(num_classes=1)
        assert classify(m, rand_input(4)).data.shape == (1,)

    def test_argmax_stable_under_positive_scaling(self):
        m = tiny_model(num_classes=4, seed=5)
        m.classifier_weight.data[:] = np.random.default_rng(6).normal(size=m.classifier_weight.shape)
        x = rand_input(7)
        logits = classify(m, x).data
        assert np.argmax(logits) == np.argmax(2.5 * logits)

    def test_batched_forward_matches_single(self):
        m = tiny_model()
        xs = np.random.default_rng(8).normal(size=(3, 3, 8, 8))
        batch = extract_features(m, Tensor(xs)).data
        for i in range(3):
            np.testing.assert_allclose(batch[i], extract_features(m, Tensor(xs[i])).data, atol=1e-12)

    def test_wrong_channels_rejected(self):
        with pytest.raises(ShapeError):
            extract_features(tiny_model(), Tensor(np.zeros((1, 8, 8))))


class TestClassifierExpansion:
    def test_rows_grow_and_old_logits_unchanged(self):
        m = tiny_model(num_classes=2, seed=9)
        m.classifier_weight.data[:] = np.random.default_rng(10).normal(size=(2, 8))
        x = rand_input(11)
        before = classify(m, x).data.copy()
        expand_classifier(m, 3)
        assert m.num_classes == 5
        after = classify(m, x).data
        np.testing.assert_array_equal(after[:2], before)
        np.testing.assert_array_equal(after[2:], np.zeros(3))

    def test_repeated_expansion_accumulates(self):
        m = tiny_model(num_classes=2)
        expand_classifier(m, 1)
        expand_classifier(m, 4)
        assert m.num_classes == 7
        assert m.classifier_rows == 7

    def test_zero_expansion_rejected(self):
        with pytest.raises(ShapeError):
            expand_classifier(tiny_model(), 0)

    def test_aux_heads_lifecycle(self):
        m = tiny_model(num_classes=2)
        m.attach_aux_heads(6)
        assert m.classifier_rows == 8
        with pytest.raises(StateError):
            m.expand_classifier(1)
        m.drop_aux_heads()
        assert m.classifier_rows == 2
        m.expand_classifier(1)
        assert m.classifier_rows == 3


class TestAdapterLifecycle:
    def test_spawn_then_fuse_is_identity_on_function(self):
        m = tiny_model(seed=12)
        m.classifier_weight.data[:] = np.random.default_rng(19).normal(size=m.classifier_weight.shape)
        x = rand_input(13)
        before = classify(m, x).data.copy()
        m.spawn_adapters()
        assert m.has_adapters
        # nudge the adapters so fusion actually merges something
        rng = np.random.default_rng(14)
        for layer in m.conv_blocks():
            layer.adapter_kernel.data[:] = rng.normal(scale=0.1, size=layer.adapter_kernel.shape)
            layer.adapter_bias.data[:] = rng.normal(scale=0.1, size=layer.adapter_bias.shape)
        live = classify(m, x, use_adapters=True).data.copy()
        m.fuse_adapters()
        assert not m.has_adapters
        fused = classify(m, x).data
        assert np.max(np.abs(fused - live)) < 1e-10
        assert np.max(np.abs(fused - before)) > 1e-6  # adapters really changed the function

    def test_param_count_constant_across_lifecycle(self):
        m = tiny_model()
        base = m.param_count()
        m.spawn_adapters()
        spawned = m.param_count()
        assert spawned > base
        # randomize then fuse: counts return to baseline
        for layer in m.conv_blocks():
            layer.adapter_kernel.data[:] = 0.5
        m.fuse_adapters()
        assert m.param_count() == base

    def test_spawn_twice_rejected(self):
        m = tiny_model()
        m.spawn_adapters()
        with pytest.raises(StateError):
            m.spawn_adapters()

    def test_fuse_without_adapters_rejected(self):
        with pytest.raises(StateError):
            tiny_model().fuse_adapters()

    def test_spawn_freezes_stem(self):
        m = tiny_model()
        m.spawn_adapters()
        assert all(p.frozen for p in m.stem.params())
        m.fuse_adapters()
        assert all(not p.frozen for p in m.stem.params())

    def test_clone_is_deep_and_exact(self):
        m = tiny_model(seed=15)
        m.spawn_adapters()
        twin = m.clone()
        for (na, pa), (nb, pb) in zip(m.named_params(), twin.named_params()):
            assert na == nb
            np.testing.assert_array_equal(pa.data, pb.data)
            assert pa.frozen == pb.frozen
            assert pa is not pb
        twin.classifier_weight.data[0, 0] += 1.0
        assert m.classifier_weight.data[0, 0] != twin.classifier_weight.data[0, 0]


class TestCheckpoint:
    def test_round_trip_preserves_params(self, tmp_path):
        m = tiny_model(seed=16)
        path = tmp_path / "model.ckpt"
        save_checkpoint(m, path)
        loaded = load_checkpoint(path)
        assert loaded.num_classes == m.num_classes
        for (na, pa), (nb, pb) in zip(m.named_params(), loaded.named_params()):
            assert na == nb
            rel = np.max(np.abs(pa.data - pb.data) / np.maximum(1e-30, np.abs(pa.data)))
            assert rel < 1e-7

    def test_save_load_save_byte_identical(self, tmp_path):
        m = tiny_model(seed=17)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(m, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_adapters_survive_round_trip(self, tmp_path):
        m = tiny_model(seed=18)
        m.spawn_adapters()
        for layer in m.conv_blocks():
            layer.adapter_kernel.data[:] = 0.25
        path = tmp_path / "mid.ckpt"
        save_checkpoint(m, path)
        loaded = load_checkpoint(path)
        assert loaded.has_adapters
        for layer in loaded.conv_blocks():
            np.testing.assert_array_equal(layer.adapter_kernel.data, 0.25)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        save_checkpoint(tiny_model(), path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(DataError, match="magic"):
            load_checkpoint(path)

    def test_truncation_rejected(self, tmp_path):
        path = tmp_path / "trunc.ckpt"
        save_checkpoint(tiny_model(), path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_payload_corruption_detected(self, tmp_path):
        path = tmp_path / "corrupt.ckpt"
        save_checkpoint(tiny_model(), path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(DataError, match="checksum|shape|missing|truncated"):
            load_checkpoint(path)

    def test_raw_tensor_io(self, tmp_path):
        path = tmp_path / "raw.bin"
        data = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.ones(4, dtype=np.float32)}
        write_tensors(path, data)
        back = read_tensors(path)
        assert list(back) == ["a", "b"]
        np.testing.assert_array_equal(back["a"], data["a"])
