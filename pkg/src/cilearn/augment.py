"""Rotation-based label-expansion augmentation.

Each training image yields its original plus rotated copies whose labels are
moved into auxiliary blocks: a copy rotated by ``r * 90`` degrees gets label
``label_count * r + label``.  The auxiliary labels exist only during
training; evaluation always uses the original heads.  The default mode draws
a single random rotation (2 training items per sample); ``all`` keeps every
rotation (4 items).
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

ROTATION_IDS = (1, 2, 3)  # 90, 180, 270 degrees
MODES = ("none", "single", "all")


def rotate_image(image: np.ndarray, rotation_id: int) -> np.ndarray:
    """Rotate a [c,h,w] image by rotation_id * 90 degrees; requires h == w."""
    if image.ndim != 3 or image.shape[1] != image.shape[2]:
        raise ShapeError(f"rotation requires a square [c,h,w] image, got shape {image.shape}")
    if rotation_id % 4 == 0:
        return image.copy()
    return np.ascontiguousarray(np.rot90(image, k=rotation_id % 4, axes=(1, 2)))


def augment_random_rotation(image: np.ndarray, label: int, label_count: int, rng) -> tuple:
    """One uniformly drawn rotation of the sample with its auxiliary label."""
    rid = int(rng.integers(1, 4))
    return rotate_image(image, rid), label_count * rid + label


def aux_head_count(label_count: int, mode: str) -> int:
    """Extra classifier rows the chosen augmentation mode needs."""
    if mode not in MODES:
        raise ShapeError(f"unknown augmentation mode {mode!r}, expected one of {MODES}")
    return 0 if mode == "none" else 3 * label_count


def expand_training_items(images: np.ndarray, labels: np.ndarray, label_count: int,
                          rng, mode: str = "single"):
    """Materialize one epoch's training items for the given augmentation mode.

    Originals always come first and keep their labels; rotated copies follow
    with auxiliary labels.  Returns (images, labels, is_original mask).
    """
    if mode not in MODES:
        raise ShapeError(f"unknown augmentation mode {mode!r}, expected one of {MODES}")
    if mode == "none":
        return images, labels, np.ones(len(labels), dtype=bool)
    extra_images = []
    extra_labels = []
    if mode == "single":
        for img, lab in zip(images, labels):
            rimg, rlab = augment_random_rotation(img, int(lab), label_count, rng)
            extra_images.append(rimg)
            extra_labels.append(rlab)
    else:  # all three rotations
        for img, lab in zip(images, labels):
            for rid in ROTATION_IDS:
                extra_images.append(rotate_image(img, rid))
                extra_labels.append(label_count * rid + int(lab))
    out_images = np.concatenate([images, np.stack(extra_images)])
    out_labels = np.concatenate([labels, np.asarray(extra_labels, dtype=labels.dtype)])
    mask = np.zeros(len(out_labels), dtype=bool)
    mask[: len(labels)] = True
    return out_images, out_labels, mask
