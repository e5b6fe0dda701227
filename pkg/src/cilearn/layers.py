"""Convolution layers: a plain conv and the adapter-augmented split block.

``AdapterConv2d`` produces its output channels in two groups: an expensive
"intrinsic" convolution computes the first ``m`` channels, and a frozen-able
per-channel 3x3 "cheap" branch derives the remaining ``m*(s-1)`` from them.
Capacity for new classes is added by spawning a trainable 1x1 per-channel
adapter that runs in parallel with the cheap branch and can later be fused
into it exactly (center zero-padding plus addition), so deployment cost never
grows.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, StateError
from .ops import add, concat_channels, conv2d, depthwise_conv2d
from .tensor import Tensor

CHEAP_KERNEL_SIZE = 3
ADAPTER_KERNEL_SIZE = 1


def he_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Conv2d:
    """Plain convolution layer with bias (used for the stem)."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, rng=None, name="conv"):
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel_size * kernel_size
        self.kernel = Tensor(
            he_init(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in),
            requires_grad=True, name=f"{name}.kernel")
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True, name=f"{name}.bias")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.name = name

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernel, self.bias, stride=self.stride, pad=self.kernel_size // 2)

    def params(self):
        return [self.kernel, self.bias]

    def param_count(self) -> int:
        return self.kernel.size + self.bias.size

    def mac_count(self, h: int, w: int):
        out_h = (h + 2 * (self.kernel_size // 2) - self.kernel_size) // self.stride + 1
        out_w = (w + 2 * (self.kernel_size // 2) - self.kernel_size) // self.stride + 1
        macs = out_h * out_w * self.out_channels * self.in_channels * self.kernel_size ** 2
        return macs, out_h, out_w


class AdapterConv2d:
    """Split convolution block: intrinsic conv + cheap per-channel branch + optional adapter.

    Output channel count is ``s * m`` where ``m = out_channels / s`` channels
    come from the intrinsic convolution and the rest from the cheap branch.
    """

    def __init__(self, in_channels, out_channels, kernel_size=3, s=2, stride=1, rng=None, name="block"):
        if s < 2:
            raise ShapeError(f"channel expansion s must be >= 2, got {s}")
        if out_channels % s != 0:
            raise ShapeError(f"out_channels {out_channels} not divisible by s={s}")
        rng = rng or np.random.default_rng(0)
        m = out_channels // s
        cheap_count = m * (s - 1)
        ck = CHEAP_KERNEL_SIZE
        self.intrinsic_kernel = Tensor(
            he_init(rng, (m, in_channels, kernel_size, kernel_size), in_channels * kernel_size ** 2),
            requires_grad=True, name=f"{name}.intrinsic_kernel")
        self.intrinsic_bias = Tensor(np.zeros(m), requires_grad=True, name=f"{name}.intrinsic_bias")
        self.cheap_kernel = Tensor(
            he_init(rng, (cheap_count, ck, ck), ck * ck),
            requires_grad=True, name=f"{name}.cheap_kernel")
        self.cheap_bias = Tensor(np.zeros(cheap_count), requires_grad=True, name=f"{name}.cheap_bias")
        self.adapter_kernel: Tensor | None = None
        self.adapter_bias: Tensor | None = None
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.s = s
        self.stride = stride
        self.name = name

    @property
    def has_adapter(self) -> bool:
        return self.adapter_kernel is not None

    @property
    def intrinsic_channels(self) -> int:
        return self.out_channels // self.s

    @property
    def cheap_channels(self) -> int:
        return self.intrinsic_channels * (self.s - 1)

    def forward(self, x: Tensor, use_adapter: bool = False) -> Tensor:
        if use_adapter and not self.has_adapter:
            raise StateError(f"{self.name}: adapter path requested but no adapter is present")
        intrinsic = conv2d(x, self.intrinsic_kernel, self.intrinsic_bias,
                           stride=self.stride, pad=self.kernel_size // 2)
        cheap = depthwise_conv2d(intrinsic, self.cheap_kernel, self.cheap_bias,
                                 multiplier=self.s - 1)
        if use_adapter:
            extra = depthwise_conv2d(intrinsic, self.adapter_kernel, self.adapter_bias,
                                     multiplier=self.s - 1)
            cheap = add(cheap, extra)
        return concat_channels(intrinsic, cheap)

    def spawn_adapter(self):
        """Attach a fresh zero adapter; freezes the established parameter groups.

        Zero initialization keeps the block's function unchanged until the
        adapter trains, so a freshly spawned model reproduces the old one.
        """
        if self.has_adapter:
            raise StateError(f"{self.name}: adapter already present")
        n = self.cheap_channels
        self.adapter_kernel = Tensor(np.zeros((n, ADAPTER_KERNEL_SIZE, ADAPTER_KERNEL_SIZE)),
                                     requires_grad=True, name=f"{self.name}.adapter_kernel")
        self.adapter_bias = Tensor(np.zeros(n), requires_grad=True, name=f"{self.name}.adapter_bias")
        for p in (self.intrinsic_kernel, self.intrinsic_bias, self.cheap_kernel, self.cheap_bias):
            p.frozen = True

    def fuse_adapter(self):
        """Merge the adapter into the cheap branch exactly, then discard it.

        The 1x1 adapter kernel lands at the center of the 3x3 cheap kernel
        (the only placement that preserves the function under same padding);
        biases add.  All parameter groups are thawed afterwards.
        """
        if not self.has_adapter:
            raise StateError(f"{self.name}: no adapter to fuse")
        center = CHEAP_KERNEL_SIZE // 2
        fused = self.cheap_kernel.data.copy()
        fused[:, center, center] += self.adapter_kernel.data[:, 0, 0]
        self.cheap_kernel = Tensor(fused, requires_grad=True, name=self.cheap_kernel.name)
        self.cheap_bias = Tensor(self.cheap_bias.data + self.adapter_bias.data,
                                 requires_grad=True, name=self.cheap_bias.name)
        self.adapter_kernel = None
        self.adapter_bias = None
        for p in (self.intrinsic_kernel, self.intrinsic_bias):
            p.frozen = False

    def params(self):
        out = [self.intrinsic_kernel, self.intrinsic_bias, self.cheap_kernel, self.cheap_bias]
        if self.has_adapter:
            out += [self.adapter_kernel, self.adapter_bias]
        return out

    def adapter_params(self):
        return [self.adapter_kernel, self.adapter_bias] if self.has_adapter else []

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def mac_count(self, h: int, w: int):
        """Multiply-accumulate count for one forward pass on an h x w input."""
        pad = self.kernel_size // 2
        out_h = (h + 2 * pad - self.kernel_size) // self.stride + 1
        out_w = (w + 2 * pad - self.kernel_size) // self.stride + 1
        macs = out_h * out_w * self.intrinsic_channels * self.in_channels * self.kernel_size ** 2
        macs += out_h * out_w * self.cheap_channels * CHEAP_KERNEL_SIZE ** 2
        if self.has_adapter:
            macs += out_h * out_w * self.cheap_channels * ADAPTER_KERNEL_SIZE ** 2
        return macs, out_h, out_w


def plain_conv_param_count(in_channels, out_channels, kernel_size) -> int:
    """Parameters of the dense convolution an AdapterConv2d replaces."""
    return out_channels * in_channels * kernel_size ** 2 + out_channels


def plain_conv_mac_count(in_channels, out_channels, kernel_size, stride, h, w):
    pad = kernel_size // 2
    out_h = (h + 2 * pad - kernel_size) // stride + 1
    out_w = (w + 2 * pad - kernel_size) // stride + 1
    return out_h * out_w * out_channels * in_channels * kernel_size ** 2, out_h, out_w
