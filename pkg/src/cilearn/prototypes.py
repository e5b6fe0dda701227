"""Per-class mean-feature prototypes with byte accounting and serialization.

One float32 vector per learned class stands in for stored exemplar images:
a 512-d prototype costs 2 kB versus 61 kB for twenty 3x32x32 uint8 images.
Entries are write-once; later phases never touch earlier prototypes.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError, ShapeError, StateError
from .tensor import Tensor

MAGIC = b"LPRO"
VERSION = 1


def compute_prototype(features) -> np.ndarray:
    """Element-wise arithmetic mean of equal-length feature vectors."""
    vecs = [f.data if isinstance(f, Tensor) else np.asarray(f, dtype=np.float64) for f in features]
    if not vecs:
        raise ShapeError("cannot compute a prototype from an empty feature list")
    dim = vecs[0].shape
    if any(v.shape != dim for v in vecs):
        raise ShapeError("feature vectors must share one shape")
    return np.mean(np.stack(vecs), axis=0)


def exemplar_image_bytes(images_per_class: int, channels: int, height: int, width: int) -> int:
    """Bytes needed to store that many uint8 exemplar images for one class."""
    return images_per_class * channels * height * width


class PrototypeStore:
    """Map class_id -> (float32 prototype, sample_count)."""

    def __init__(self, feature_dim: int):
        if feature_dim <= 0:
            raise ShapeError(f"feature_dim must be positive, got {feature_dim}")
        self.feature_dim = feature_dim
        self._entries: dict[int, tuple[np.ndarray, int]] = {}

    def __len__(self):
        return len(self._entries)

    def __contains__(self, class_id):
        return int(class_id) in self._entries

    def class_ids(self):
        return sorted(self._entries)

    def add(self, class_id: int, prototype, sample_count: int = 1):
        class_id = int(class_id)
        if class_id in self._entries:
            raise StateError(f"class {class_id} already has a prototype")
        vec = prototype.data if isinstance(prototype, Tensor) else np.asarray(prototype)
        if vec.shape != (self.feature_dim,):
            raise ShapeError(f"prototype must have shape ({self.feature_dim},), got {vec.shape}")
        if sample_count < 1:
            raise ShapeError(f"sample_count must be >= 1, got {sample_count}")
        self._entries[class_id] = (vec.astype(np.float32), int(sample_count))

    def get(self, class_id: int) -> np.ndarray:
        class_id = int(class_id)
        if class_id not in self._entries:
            raise StateError(f"no prototype stored for class {class_id}")
        return self._entries[class_id][0].copy()

    def sample_count(self, class_id: int) -> int:
        class_id = int(class_id)
        if class_id not in self._entries:
            raise StateError(f"no prototype stored for class {class_id}")
        return self._entries[class_id][1]

    def items(self):
        """(class_id, float32 prototype, sample_count) in class-id order."""
        for cid in self.class_ids():
            vec, count = self._entries[cid]
            yield cid, vec, count

    def footprint_bytes(self) -> int:
        """Exact byte count of the prototype payload (4 bytes per entry value)."""
        return len(self._entries) * self.feature_dim * 4

    def save(self, path):
        blob = MAGIC + struct.pack("<HII", VERSION, self.feature_dim, len(self._entries))
        for cid, vec, count in self.items():
            blob += struct.pack("<II", cid, count)
            blob += vec.astype("<f4").tobytes()
        with open(path, "wb") as fh:
            fh.write(blob)

    @classmethod
    def load(cls, path) -> "PrototypeStore":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != MAGIC:
            raise DataError(f"{path}: bad magic, not a prototype file")
        if len(blob) < 14:
            raise DataError(f"{path}: truncated prototype file")
        version, dim, count = struct.unpack("<HII", blob[4:14])
        if version != VERSION:
            raise DataError(f"{path}: unsupported prototype file version {version}")
        store = cls(dim)
        pos = 14
        entry = 8 + 4 * dim
        if len(blob) != 14 + count * entry:
            raise DataError(f"{path}: prototype payload size mismatch")
        for _ in range(count):
            cid, n = struct.unpack("<II", blob[pos : pos + 8])
            vec = np.frombuffer(blob[pos + 8 : pos + entry], dtype="<f4").copy()
            store.add(cid, vec.astype(np.float64), n)
            pos += entry
        return store
