"""Residual network assembly with an expandable linear classifier.

The backbone is a small ResNet built from :class:`AdapterConv2d` blocks
(plain conv only in the stem), global average pooling as the feature head,
and a linear classifier whose row count grows as classes arrive.  Extra
scratch rows can be appended temporarily for the rotation-label auxiliary
task; they are never part of the persistent class heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, StateError
from .layers import AdapterConv2d, Conv2d, plain_conv_mac_count, plain_conv_param_count
from .ops import add, global_avg_pool, linear, relu
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    stage_channels: tuple = (16, 32, 64)
    blocks_per_stage: tuple = (2, 2, 2)
    input_shape: tuple = (3, 16, 16)
    feature_dim: int = 64
    s: int = 2

    def validate(self):
        if len(self.stage_channels) != len(self.blocks_per_stage):
            raise ShapeError("stage_channels and blocks_per_stage must have equal length")
        if not self.stage_channels or any(c <= 0 for c in self.stage_channels):
            raise ShapeError(f"invalid stage channels {self.stage_channels}")
        if any(b <= 0 for b in self.blocks_per_stage):
            raise ShapeError(f"invalid block counts {self.blocks_per_stage}")
        if len(self.input_shape) != 3 or any(d <= 0 for d in self.input_shape):
            raise ShapeError(f"invalid input shape {self.input_shape}")
        if self.feature_dim != self.stage_channels[-1]:
            raise ShapeError(
                f"feature_dim {self.feature_dim} must equal last stage width {self.stage_channels[-1]}")
        if self.s < 2:
            raise ShapeError(f"s must be >= 2, got {self.s}")


def desk_config() -> ModelConfig:
    """Small configuration sized for minutes-scale CPU experiments."""
    return ModelConfig()


def resnet18_config() -> ModelConfig:
    """ResNet-18-shaped configuration (32x32 inputs, 512-d features)."""
    return ModelConfig(stage_channels=(64, 128, 256, 512), blocks_per_stage=(2, 2, 2, 2),
                       input_shape=(3, 32, 32), feature_dim=512, s=2)


class ResidualBlock:
    """Two adapter-conv layers with an identity or projected skip connection."""

    def __init__(self, in_channels, out_channels, stride, s, rng, name):
        self.conv1 = AdapterConv2d(in_channels, out_channels, kernel_size=3, s=s,
                                   stride=stride, rng=rng, name=f"{name}.conv1")
        self.conv2 = AdapterConv2d(out_channels, out_channels, kernel_size=3, s=s,
                                   stride=1, rng=rng, name=f"{name}.conv2")
        if stride != 1 or in_channels != out_channels:
            self.proj = AdapterConv2d(in_channels, out_channels, kernel_size=1, s=s,
                                      stride=stride, rng=rng, name=f"{name}.proj")
        else:
            self.proj = None
        self.name = name

    def forward(self, x: Tensor, use_adapters: bool) -> Tensor:
        def run(layer, inp):
            return layer.forward(inp, use_adapter=use_adapters and layer.has_adapter)

        out = run(self.conv2, relu(run(self.conv1, x)))
        skip = run(self.proj, x) if self.proj is not None else x
        return relu(add(out, skip))

    def conv_layers(self):
        layers = [self.conv1, self.conv2]
        if self.proj is not None:
            layers.append(self.proj)
        return layers


@dataclass
class Model:
    config: ModelConfig
    stem: Conv2d
    blocks: list
    classifier_weight: Tensor
    classifier_bias: Tensor
    num_classes: int
    aux_heads: int = 0
    seed: int = 0
    head_classes: list | None = None  # original class id per head, in head order

    # -- forward passes ----------------------------------------------------
    def features(self, x: Tensor, use_adapters: bool = True) -> Tensor:
        c = self.config.input_shape[0]
        if x.data.shape[-3] != c:
            raise ShapeError(f"input must have {c} channels, got shape {x.data.shape}")
        out = relu(self.stem.forward(x))
        for block in self.blocks:
            out = block.forward(out, use_adapters)
        return global_avg_pool(out)

    def logits_from_features(self, feats: Tensor) -> Tensor:
        return linear(feats, self.classifier_weight, self.classifier_bias)

    def logits(self, x: Tensor, use_adapters: bool = True) -> Tensor:
        return self.logits_from_features(self.features(x, use_adapters))

    # -- structure ---------------------------------------------------------
    def conv_blocks(self):
        for block in self.blocks:
            yield from block.conv_layers()

    def params(self):
        out = self.stem.params()
        for layer in self.conv_blocks():
            out.extend(layer.params())
        out += [self.classifier_weight, self.classifier_bias]
        return out

    def trainable_params(self):
        return [p for p in self.params() if p.requires_grad and not p.frozen]

    def named_params(self):
        return [(p.name, p) for p in self.params()]

    @property
    def has_adapters(self) -> bool:
        return any(layer.has_adapter for layer in self.conv_blocks())

    @property
    def classifier_rows(self) -> int:
        return self.classifier_weight.data.shape[0]

    # -- adapter lifecycle ---------------------------------------------------
    def spawn_adapters(self):
        """Attach zero adapters everywhere and freeze the rest of the backbone."""
        if self.has_adapters:
            raise StateError("adapters already present on this model")
        for layer in self.conv_blocks():
            layer.spawn_adapter()
        for p in self.stem.params():
            p.frozen = True

    def fuse_adapters(self):
        """Fuse every adapter back into its cheap branch and thaw the backbone."""
        if not self.has_adapters:
            raise StateError("no adapters to fuse")
        for layer in self.conv_blocks():
            layer.fuse_adapter()
        for p in self.stem.params():
            p.frozen = False

    # -- classifier management ----------------------------------------------
    def expand_classifier(self, new_classes: int):
        """Append zero rows for new classes; existing rows are bit-preserved."""
        if new_classes < 1:
            raise ShapeError(f"new_classes must be >= 1, got {new_classes}")
        if self.aux_heads:
            raise StateError("cannot expand class heads while auxiliary heads are attached")
        d = self.config.feature_dim
        w = np.vstack([self.classifier_weight.data, np.zeros((new_classes, d))])
        b = np.concatenate([self.classifier_bias.data, np.zeros(new_classes)])
        self.classifier_weight = Tensor(w, requires_grad=True, name="classifier.weight")
        self.classifier_bias = Tensor(b, requires_grad=True, name="classifier.bias")
        self.num_classes += new_classes

    def attach_aux_heads(self, count: int):
        """Append zero scratch rows used only for auxiliary training labels."""
        if count < 0:
            raise ShapeError(f"aux head count must be >= 0, got {count}")
        if self.aux_heads:
            raise StateError("auxiliary heads already attached")
        if count == 0:
            return
        d = self.config.feature_dim
        w = np.vstack([self.classifier_weight.data, np.zeros((count, d))])
        b = np.concatenate([self.classifier_bias.data, np.zeros(count)])
        self.classifier_weight = Tensor(w, requires_grad=True, name="classifier.weight")
        self.classifier_bias = Tensor(b, requires_grad=True, name="classifier.bias")
        self.aux_heads = count

    def drop_aux_heads(self):
        if self.aux_heads:
            k = self.num_classes
            self.classifier_weight = Tensor(self.classifier_weight.data[:k].copy(),
                                            requires_grad=True, name="classifier.weight")
            self.classifier_bias = Tensor(self.classifier_bias.data[:k].copy(),
                                          requires_grad=True, name="classifier.bias")
            self.aux_heads = 0

    # -- counters ------------------------------------------------------------
    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def mac_count(self) -> int:
        """Multiply-accumulates for one forward pass at the configured input size."""
        _, h, w = self.config.input_shape
        total, h, w = self.stem.mac_count(h, w)
        for block in self.blocks:
            m1, bh, bw = block.conv1.mac_count(h, w)
            m2, bh, bw = block.conv2.mac_count(bh, bw)
            total += m1 + m2
            if block.proj is not None:
                mp, _, _ = block.proj.mac_count(h, w)
                total += mp
            h, w = bh, bw
        total += self.classifier_rows * self.config.feature_dim
        return total

    def clone(self) -> "Model":
        """Deep copy with identical parameter values and flags."""
        twin = build_model(self.config, num_classes=max(self.num_classes, 1), seed=self.seed)
        for layer, src in zip(twin.conv_blocks(), self.conv_blocks()):
            if src.has_adapter:
                layer.spawn_adapter()
        twin.num_classes = self.num_classes
        twin.aux_heads = self.aux_heads
        twin.head_classes = list(self.head_classes) if self.head_classes else None
        rows = self.classifier_rows
        twin.classifier_weight = Tensor(self.classifier_weight.data.copy(),
                                        requires_grad=True, name="classifier.weight")
        twin.classifier_bias = Tensor(self.classifier_bias.data.copy(),
                                      requires_grad=True, name="classifier.bias")
        assert twin.classifier_rows == rows
        for dst, src in zip(twin.params(), self.params()):
            if dst.name.startswith("classifier"):
                continue
            dst.data[:] = src.data
            dst.frozen = src.frozen
        return twin


def build_model(config: ModelConfig, num_classes: int, seed: int = 0) -> Model:
    """Deterministic He-initialized model with no adapters present."""
    config.validate()
    if num_classes < 1:
        raise ShapeError(f"num_classes must be >= 1, got {num_classes}")
    rng = np.random.default_rng(seed)
    c_in = config.input_shape[0]
    stem = Conv2d(c_in, config.stage_channels[0], 3, stride=1, rng=rng, name="stem")
    blocks = []
    prev = config.stage_channels[0]
    for si, (width, depth) in enumerate(zip(config.stage_channels, config.blocks_per_stage)):
        for bi in range(depth):
            stride = 2 if (si > 0 and bi == 0) else 1
            blocks.append(ResidualBlock(prev, width, stride, config.s, rng,
                                        name=f"stage{si}.block{bi}"))
            prev = width
    w = Tensor(np.zeros((num_classes, config.feature_dim)), requires_grad=True,
               name="classifier.weight")
    b = Tensor(np.zeros(num_classes), requires_grad=True, name="classifier.bias")
    return Model(config=config, stem=stem, blocks=blocks, classifier_weight=w,
                 classifier_bias=b, num_classes=num_classes, seed=seed)


def extract_features(model: Model, x: Tensor, use_adapters: bool = True) -> Tensor:
    """Pre-classifier feature vector (post global average pool)."""
    return model.features(x, use_adapters)


def classify(model: Model, x: Tensor, use_adapters: bool = True) -> Tensor:
    return model.logits(x, use_adapters)


def expand_classifier(model: Model, new_classes: int) -> Model:
    model.expand_classifier(new_classes)
    return model


# -- plain-convolution baseline counters -------------------------------------

def _walk_plain(config: ModelConfig):
    """Yield (in_c, out_c, k, stride, h, w) for the dense-conv twin network."""
    _, h, w = config.input_shape
    yield config.input_shape[0], config.stage_channels[0], 3, 1, h, w
    prev = config.stage_channels[0]
    for si, (width, depth) in enumerate(zip(config.stage_channels, config.blocks_per_stage)):
        for bi in range(depth):
            stride = 2 if (si > 0 and bi == 0) else 1
            yield prev, width, 3, stride, h, w
            nh, nw = h // stride, w // stride
            yield width, width, 3, 1, nh, nw
            if stride != 1 or prev != width:
                yield prev, width, 1, stride, h, w
            h, w = nh, nw
            prev = width


def plain_param_count(config: ModelConfig, num_classes: int) -> int:
    """Parameters of the same architecture built from dense convolutions."""
    total = sum(plain_conv_param_count(ci, co, k) for ci, co, k, _, _, _ in
                _walk_plain(config))
    total += num_classes * config.feature_dim + num_classes
    return total


def plain_mac_count(config: ModelConfig, num_classes: int) -> int:
    total = 0
    for ci, co, k, stride, h, w in _walk_plain(config):
        macs, _, _ = plain_conv_mac_count(ci, co, k, stride, h, w)
        total += macs
    total += num_classes * config.feature_dim
    return total
