"""Datasets: IDX file ingestion, a generated desk-scale image set, phase plans.

The synthetic set is ten classes of 16x16 RGB tiles.  Classes share base
colors in pairs but differ in pattern, and several patterns are oriented
(stripes, ramps, bars), so orientation-aware features genuinely help.  Noise,
brightness jitter, and cyclic shifts provide within-class variation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError

IDX_IMAGE_MAGIC_3D = 0x00000803
IDX_IMAGE_MAGIC_4D = 0x00000804
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    images: np.ndarray  # uint8 [N, c, h, w]
    labels: np.ndarray  # int64 [N]
    class_count: int

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.dtype != np.uint8:
            raise ShapeError(f"images must be uint8 [N,c,h,w], got {self.images.dtype} {self.images.shape}")
        if len(self.images) != len(self.labels) or len(self.labels) == 0:
            raise ShapeError("images and labels must be non-empty and aligned")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ShapeError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def per_class_counts(self) -> dict[int, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def indices_of_classes(self, class_ids) -> np.ndarray:
        wanted = set(int(c) for c in class_ids)
        return np.array([i for i, lab in enumerate(self.labels) if int(lab) in wanted],
                        dtype=np.int64)


def _read_exact(fh, n, path, what):
    chunk = fh.read(n)
    if len(chunk) != n:
        raise DataError(f"{path}: truncated while reading {what}")
    return chunk


def load_idx_dataset(image_path, label_path) -> Dataset:
    """Parse big-endian IDX image/label files (grayscale 3-d or channeled 4-d)."""
    with open(image_path, "rb") as fh:
        magic = struct.unpack(">I", _read_exact(fh, 4, image_path, "image magic"))[0]
        if magic == IDX_IMAGE_MAGIC_3D:
            n, h, w = struct.unpack(">III", _read_exact(fh, 12, image_path, "image dims"))
            c = 1
        elif magic == IDX_IMAGE_MAGIC_4D:
            n, c, h, w = struct.unpack(">IIII", _read_exact(fh, 16, image_path, "image dims"))
        else:
            raise DataError(f"{image_path}: bad image magic 0x{magic:08x}")
        payload = _read_exact(fh, n * c * h * w, image_path, "image payload")
        if fh.read(1):
            raise DataError(f"{image_path}: trailing bytes after image payload")
    images = np.frombuffer(payload, dtype=np.uint8).reshape(n, c, h, w).copy()

    with open(label_path, "rb") as fh:
        magic, count = struct.unpack(">II", _read_exact(fh, 8, label_path, "label header"))
        if magic != IDX_LABEL_MAGIC:
            raise DataError(f"{label_path}: bad label magic 0x{magic:08x}")
        raw = _read_exact(fh, count, label_path, "label payload")
        if fh.read(1):
            raise DataError(f"{label_path}: trailing bytes after label payload")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if count != n:
        raise DataError(f"label count {count} does not match image count {n}")
    if n == 0:
        raise DataError(f"{image_path}: empty dataset")
    return Dataset(images=images, labels=labels, class_count=int(labels.max()) + 1)


def save_idx_dataset(dataset: Dataset, image_path, label_path):
    """Write a dataset back out as a pair of IDX files (4-d image form)."""
    n, c, h, w = dataset.images.shape
    with open(image_path, "wb") as fh:
        fh.write(struct.pack(">IIIII", IDX_IMAGE_MAGIC_4D, n, c, h, w))
        fh.write(dataset.images.tobytes())
    with open(label_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


# -- synthetic desk dataset ---------------------------------------------------

_PALETTE = np.array([
    [220, 60, 50],    # red
    [60, 180, 75],    # green
    [65, 105, 225],   # blue
    [235, 180, 40],   # amber
    [150, 80, 200],   # violet
], dtype=np.float64)


def _pattern_bank(size: int):
    ys, xs = np.mgrid[0:size, 0:size]
    center = (size - 1) / 2.0
    radius = np.sqrt((ys - center) ** 2 + (xs - center) ** 2)
    banks = [
        (ys // 2) % 2,                                   # horizontal stripes, period 4
        (xs // 4) % 2,                                   # vertical stripes, period 8
        ((xs + ys) // 3) % 2,                            # diagonal stripes
        ((xs // 2) + (ys // 2)) % 2,                     # checkerboard
        ((np.abs(ys - center) < size / 4) & (np.abs(xs - center) < size / 4)),  # center square
        (radius.astype(int) // 2) % 2,                   # rings
        xs / (size - 1),                                 # ramp left to right
        ((ys < size / 2) & (xs < size / 2)),             # top-left quadrant
        ((xs - ys) // 4) % 2,                            # anti-diagonal stripes
        ((ys % 8) < 3),                                  # repeating horizontal bars
    ]
    return [b.astype(np.float64) for b in banks]


def synthetic_dataset(classes: int = 10, samples_per_class: int = 60, image_size: int = 16,
                      noise: float = 0.10, seed: int = 7) -> Dataset:
    """Deterministic colored/patterned tiles; classes pair up on color."""
    if classes < 2 or classes > 10:
        raise ShapeError(f"synthetic set supports 2..10 classes, got {classes}")
    if samples_per_class < 1:
        raise ShapeError("samples_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    bank = _pattern_bank(image_size)
    images = np.empty((classes * samples_per_class, 3, image_size, image_size), dtype=np.uint8)
    labels = np.empty(classes * samples_per_class, dtype=np.int64)
    i = 0
    for cid in range(classes):
        color = _PALETTE[cid % len(_PALETTE)]
        pattern = bank[cid % len(bank)]
        for _ in range(samples_per_class):
            brightness = rng.uniform(0.70, 1.00)
            base = color[:, None, None] * (0.25 + 0.75 * pattern)[None] * brightness
            shift_y, shift_x = rng.integers(-2, 3, size=2)
            base = np.roll(base, (int(shift_y), int(shift_x)), axis=(1, 2))
            base = base + rng.normal(0.0, noise * 255.0, size=base.shape)
            images[i] = np.clip(base, 0, 255).astype(np.uint8)
            labels[i] = cid
            i += 1
    return Dataset(images=images, labels=labels, class_count=classes)


# -- phase planning -----------------------------------------------------------

@dataclass(frozen=True)
class PhasePlan:
    initial_classes: tuple
    phases: tuple  # tuple of tuples of class ids
    seed: int

    def all_classes(self):
        out = list(self.initial_classes)
        for chunk in self.phases:
            out.extend(chunk)
        return out

    @property
    def phase_count(self):
        return len(self.phases)


def split_class_incremental(class_count: int, phases: int, seed: int,
                            initial_classes: int | None = None) -> PhasePlan:
    """Shuffle class ids, reserve the initial block, chunk the rest into phases.

    By default half of the classes (rounded down) form the initial block; the
    remainder is split into near-equal contiguous chunks with any leftover
    classes attached to the final phase.
    """
    if phases < 1:
        raise ShapeError(f"phase count must be >= 1, got {phases}")
    if class_count < phases + 1:
        raise ShapeError(f"need at least {phases + 1} classes for {phases} phases, got {class_count}")
    order = list(np.random.default_rng(seed).permutation(class_count))
    if initial_classes is None:
        initial_classes = class_count // 2
    if not 1 <= initial_classes <= class_count - phases:
        raise ShapeError(
            f"initial class count {initial_classes} leaves too few classes for {phases} phases")
    head = tuple(int(c) for c in order[:initial_classes])
    rest = [int(c) for c in order[initial_classes:]]
    per = len(rest) // phases
    chunks = []
    pos = 0
    for p in range(phases):
        take = per if p < phases - 1 else len(rest) - pos
        chunks.append(tuple(rest[pos : pos + take]))
        pos += take
    return PhasePlan(initial_classes=head, phases=tuple(chunks), seed=seed)
