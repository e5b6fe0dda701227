"""Input validation helpers for the estimator and harness boundaries."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def check_image_batch(X, *, expected_shape=None) -> np.ndarray:
    """Validate an [N,c,h,w] image batch.

    uint8 arrays pass through unchanged (they are scaled by 1/255 at use);
    float arrays must be finite and are converted to float64.
    """
    X = np.asarray(X)
    if X.ndim != 4:
        raise ShapeError(f"expected images of shape [N,c,h,w], got {X.shape}")
    if len(X) == 0:
        raise ShapeError("image batch is empty")
    if expected_shape is not None and tuple(X.shape[1:]) != tuple(expected_shape):
        raise ShapeError(f"images have shape {X.shape[1:]}, expected {tuple(expected_shape)}")
    if X.dtype == np.uint8:
        return X
    X = X.astype(np.float64)
    if not np.all(np.isfinite(X)):
        raise ShapeError("image batch contains non-finite values")
    return X


def check_label_array(y, *, n_samples=None) -> np.ndarray:
    """Validate a 1-d integer label vector aligned with its images."""
    y = np.asarray(y)
    if y.ndim != 1 or len(y) == 0:
        raise ShapeError(f"labels must be a non-empty 1-d array, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if np.issubdtype(y.dtype, np.floating) and np.all(y == y.astype(np.int64)):
            y = y.astype(np.int64)
        else:
            raise ShapeError("labels must be integers")
    if y.min() < 0:
        raise ShapeError("labels must be non-negative")
    if n_samples is not None and len(y) != n_samples:
        raise ShapeError(f"got {len(y)} labels for {n_samples} samples")
    return y.astype(np.int64)
