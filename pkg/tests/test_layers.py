"""Adapter block behavior: forward composition, spawn/fuse lifecycle, counters."""

import numpy as np
import pytest

from cilearn import ShapeError, StateError, Tape, Tensor, grad_check, sgd_step
from cilearn.layers import (
    AdapterConv2d,
    Conv2d,
    plain_conv_param_count,
)
from cilearn.ops import add, concat_channels, conv2d, depthwise_conv2d, l2_distance


def make_block(seed=0, in_channels=2, out_channels=6, s=2, stride=1, kernel_size=3):
    rng = np.random.default_rng(seed)
    return AdapterConv2d(in_channels, out_channels, kernel_size=kernel_size, s=s,
                         stride=stride, rng=rng, name=f"blk{seed}")


def randomize_adapter(block, seed=100):
    rng = np.random.default_rng(seed)
    block.adapter_kernel.data[:] = rng.normal(size=block.adapter_kernel.shape)
    block.adapter_bias.data[:] = rng.normal(size=block.adapter_bias.shape)


class TestForward:
    def test_output_channels(self):
        block = make_block(out_channels=4, s=2)
        out = block.forward(Tensor(np.random.default_rng(1).normal(size=(2, 5, 5))))
        assert out.data.shape == (4, 5, 5)

    def test_zero_adapter_is_identity_on_function(self):
        block = make_block(seed=2)
        x = Tensor(np.random.default_rng(3).normal(size=(2, 5, 5)))
        plain = block.forward(x, use_adapter=False)
        block.spawn_adapter()
        with_adapter = block.forward(x, use_adapter=True)
        np.testing.assert_array_equal(plain.data, with_adapter.data)

    def test_matches_primitive_composition(self):
        block = make_block(seed=4)
        block.spawn_adapter()
        randomize_adapter(block, seed=5)
        x = Tensor(np.random.default_rng(6).normal(size=(2, 5, 5)))
        got = block.forward(x, use_adapter=True)

        # hand-composed from the primitives
        f = conv2d(x, block.intrinsic_kernel, block.intrinsic_bias, stride=1, pad=1)
        cheap = depthwise_conv2d(f, block.cheap_kernel, block.cheap_bias, multiplier=1)
        extra = depthwise_conv2d(f, block.adapter_kernel, block.adapter_bias, multiplier=1)
        want = concat_channels(f, add(cheap, extra))
        np.testing.assert_allclose(got.data, want.data, atol=1e-12)

    def test_adapter_path_without_adapter_rejected(self):
        block = make_block()
        with pytest.raises(StateError):
            block.forward(Tensor(np.zeros((2, 4, 4))), use_adapter=True)

    def test_channel_provenance(self):
        # zeroing intrinsic channel i must zero exactly channel i and its cheap children
        block = make_block(seed=7, in_channels=1, out_channels=6, s=3)
        m, mult = block.intrinsic_channels, block.s - 1
        block.intrinsic_bias.data[:] = 0.0
        block.cheap_bias.data[:] = 0.0
        x = Tensor(np.random.default_rng(8).normal(size=(1, 4, 4)))
        for i in range(m):
            saved = block.intrinsic_kernel.data[i].copy()
            block.intrinsic_kernel.data[i] = 0.0
            out = block.forward(x).data
            expect_zero = {i} | {m + i * mult + j for j in range(mult)}
            for ch in range(block.out_channels):
                if ch in expect_zero:
                    assert np.all(out[ch] == 0.0), f"channel {ch} should be zeroed"
                else:
                    assert np.any(out[ch] != 0.0), f"channel {ch} should be live"
            block.intrinsic_kernel.data[i] = saved


class TestSpawn:
    def test_spawn_twice_rejected(self):
        block = make_block()
        block.spawn_adapter()
        with pytest.raises(StateError):
            block.spawn_adapter()

    def test_trainable_count_after_spawn(self):
        block = make_block(in_channels=3, out_channels=8, s=2)
        block.spawn_adapter()
        m = block.intrinsic_channels
        trainable = [p for p in block.params() if p.requires_grad and not p.frozen]
        assert sum(p.size for p in trainable) == m * (block.s - 1) * 2

    def test_spawn_freezes_established_groups(self):
        block = make_block()
        block.spawn_adapter()
        assert block.intrinsic_kernel.frozen
        assert block.intrinsic_bias.frozen
        assert block.cheap_kernel.frozen
        assert block.cheap_bias.frozen
        assert not block.adapter_kernel.frozen


class TestFuse:
    def test_center_placement(self):
        block = make_block(in_channels=1, out_channels=2, s=2)
        block.cheap_kernel.data[:] = 1.0
        block.spawn_adapter()
        block.adapter_kernel.data[:] = 2.0
        block.fuse_adapter()
        fused = block.cheap_kernel.data[0]
        assert fused[1, 1] == 3.0
        assert np.all(fused[np.arange(3) != 1][:, :] != 3.0)
        off_center = fused.copy()
        off_center[1, 1] = 1.0
        np.testing.assert_array_equal(off_center, np.ones((3, 3)))

    def test_additive_inverse_cancels_center(self):
        block = make_block(seed=9, in_channels=1, out_channels=2, s=2)
        center = block.cheap_kernel.data[:, 1, 1].copy()
        block.spawn_adapter()
        block.adapter_kernel.data[:, 0, 0] = -center
        block.fuse_adapter()
        np.testing.assert_allclose(block.cheap_kernel.data[:, 1, 1], 0.0, atol=1e-15)

    def test_fuse_without_adapter_rejected(self):
        with pytest.raises(StateError):
            make_block().fuse_adapter()

    def test_fusion_preserves_function(self):
        rng = np.random.default_rng(10)
        for trial in range(10):
            block = make_block(seed=20 + trial, in_channels=int(rng.integers(1, 4)),
                               out_channels=2 * int(rng.integers(1, 5)), s=2)
            block.spawn_adapter()
            randomize_adapter(block, seed=40 + trial)
            x = Tensor(rng.normal(size=(block.in_channels, 6, 6)))
            before = block.forward(x, use_adapter=True).data
            block.fuse_adapter()
            assert not block.has_adapter
            after = block.forward(x, use_adapter=False).data
            assert np.max(np.abs(after - before)) < 1e-10

    def test_fuse_thaws_groups_and_drops_adapter_params(self):
        block = make_block()
        block.spawn_adapter()
        block.fuse_adapter()
        assert all(not p.frozen for p in block.params())
        assert len(block.params()) == 4


class TestFreezing:
    def test_training_step_leaves_frozen_groups_bit_identical(self):
        block = make_block(seed=11)
        block.spawn_adapter()
        randomize_adapter(block, seed=12)
        saved = {p.name: p.data.copy() for p in block.params() if p.frozen}
        x = Tensor(np.random.default_rng(13).normal(size=(2, 5, 5)))
        target = Tensor(np.random.default_rng(14).normal(size=(block.out_channels, 5, 5)))
        with Tape() as tape:
            loss = l2_distance(block.forward(x, use_adapter=True), target)
        tape.backward(loss)
        sgd_step(block.params(), lr=0.1)
        for p in block.params():
            if p.name in saved:
                np.testing.assert_array_equal(p.data, saved[p.name])
        assert np.any(block.adapter_kernel.data != 0.0)


class TestCounts:
    def test_documented_shape_example(self):
        block = make_block(in_channels=64, out_channels=128, s=2, kernel_size=3)
        # intrinsic 36864 weights + 64 bias, cheap 576 weights + 64 bias
        assert block.param_count() == 36864 + 64 + 576 + 64
        plain = plain_conv_param_count(64, 128, 3)
        assert plain == 73728 + 128
        ratio = block.param_count() / plain
        assert abs(ratio - 0.5087) < 1e-3

    def test_output_channel_doubling(self):
        block = make_block(in_channels=8, out_channels=16, s=2)
        assert block.out_channels == 2 * block.intrinsic_channels

    def test_param_ratio_below_downsizing_target(self):
        for c, n in [(16, 32), (64, 128), (128, 256)]:
            block = make_block(in_channels=c, out_channels=n, s=2)
            assert block.param_count() / plain_conv_param_count(c, n, 3) < 0.55

    def test_mac_count_roughly_halves(self):
        block = make_block(in_channels=64, out_channels=128, s=2)
        macs, oh, ow = block.mac_count(16, 16)
        from cilearn.layers import plain_conv_mac_count
        plain, _, _ = plain_conv_mac_count(64, 128, 3, 1, 16, 16)
        assert 0.45 < macs / plain < 0.55
        assert (oh, ow) == (16, 16)

    def test_adapter_counts_included_when_live(self):
        block = make_block(in_channels=4, out_channels=8, s=2)
        base = block.param_count()
        block.spawn_adapter()
        assert block.param_count() == base + 2 * block.cheap_channels
        block.fuse_adapter()
        assert block.param_count() == base


class TestGradients:
    def test_full_block_with_adapter_gradcheck(self):
        block = make_block(seed=15, in_channels=2, out_channels=4, s=2)
        block.spawn_adapter()
        randomize_adapter(block, seed=16)
        # thaw everything so the check covers every parameter group
        for p in block.params():
            p.frozen = False
        x = Tensor(np.random.default_rng(17).normal(size=(2, 4, 4)))
        target = Tensor(np.random.default_rng(18).normal(size=(4, 4, 4)))

        def loss_fn():
            return l2_distance(block.forward(x, use_adapter=True), target)

        assert grad_check(loss_fn, block.params()) < 1e-4


class TestConstruction:
    def test_invalid_s_rejected(self):
        with pytest.raises(ShapeError):
            AdapterConv2d(2, 4, s=1)

    def test_indivisible_channels_rejected(self):
        with pytest.raises(ShapeError):
            AdapterConv2d(2, 5, s=2)

    def test_plain_conv_forward_shape(self):
        conv = Conv2d(3, 8, 3, rng=np.random.default_rng(0))
        out = conv.forward(Tensor(np.zeros((3, 10, 10))))
        assert out.data.shape == (8, 10, 10)

    def test_stride_two_halves_spatial(self):
        block = make_block(stride=2)
        out = block.forward(Tensor(np.zeros((2, 8, 8))))
        assert out.data.shape == (block.out_channels, 4, 4)
