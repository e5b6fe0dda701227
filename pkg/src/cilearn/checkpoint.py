"""Binary model checkpoints.

Layout (little-endian throughout)::

    magic "LODP" | u16 version=1 | u16 tensor_count
    per tensor: u16 name_len | name utf-8 | u8 rank | u32 x rank dims | f32 payload
    u32 crc32 over everything between the 8-byte header and the checksum

Parameters are stored as float32; training always reloads into float64.
Model structure is encoded as small ``meta.*`` tensors so a checkpoint is
self-describing.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import DataError
from .network import Model, ModelConfig, build_model

MAGIC = b"LODP"
VERSION = 1


def write_tensors(path, tensors: dict[str, np.ndarray]):
    """Serialize an ordered name -> array mapping."""
    if len(tensors) > 0xFFFF:
        raise DataError(f"too many tensors for format: {len(tensors)}")
    body = bytearray()
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if arr.ndim > 0xFF:
            raise DataError(f"tensor rank too large: {arr.ndim}")
        body += struct.pack("<H", len(raw)) + raw
        body += struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    blob = MAGIC + struct.pack("<HH", VERSION, len(tensors)) + bytes(body)
    blob += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise DataError(f"{self.path}: truncated checkpoint (wanted {n} bytes at offset {self.pos})")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk


def read_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise DataError(f"{path}: bad magic, not a checkpoint file")
    version, count = struct.unpack("<HH", r.take(4))
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    if len(blob) < 12:
        raise DataError(f"{path}: truncated checkpoint")
    body = blob[8:-4]
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise DataError(f"{path}: checksum mismatch, file is corrupted")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = struct.unpack("<H", r.take(2))[0]
        name = r.take(name_len).decode("utf-8")
        rank = struct.unpack("<B", r.take(1))[0]
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        payload = r.take(4 * int(np.prod(dims, dtype=np.int64)))
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(blob) - 4:
        raise DataError(f"{path}: trailing bytes after last tensor")
    return tensors


def _meta(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float32).reshape(-1)


def save_checkpoint(model: Model, path):
    """Write the model's parameters and structure; float32 on disk."""
    tensors: dict[str, np.ndarray] = {
        "meta.stage_channels": _meta(model.config.stage_channels),
        "meta.blocks_per_stage": _meta(model.config.blocks_per_stage),
        "meta.input_shape": _meta(model.config.input_shape),
        "meta.feature_dim": _meta([model.config.feature_dim]),
        "meta.s": _meta([model.config.s]),
        "meta.num_classes": _meta([model.num_classes]),
        "meta.aux_heads": _meta([model.aux_heads]),
    }
    if model.head_classes is not None:
        tensors["meta.head_classes"] = _meta(model.head_classes)
    for name, p in model.named_params():
        tensors[name] = p.data
    write_tensors(path, tensors)


def load_checkpoint(path) -> Model:
    """Rebuild a model from a checkpoint; parameter flags reset to neutral."""
    tensors = read_tensors(path)
    try:
        config = ModelConfig(
            stage_channels=tuple(int(v) for v in tensors["meta.stage_channels"]),
            blocks_per_stage=tuple(int(v) for v in tensors["meta.blocks_per_stage"]),
            input_shape=tuple(int(v) for v in tensors["meta.input_shape"]),
            feature_dim=int(tensors["meta.feature_dim"][0]),
            s=int(tensors["meta.s"][0]),
        )
        num_classes = int(tensors["meta.num_classes"][0])
        aux_heads = int(tensors["meta.aux_heads"][0])
    except KeyError as exc:
        raise DataError(f"{path}: checkpoint is missing structure entry {exc}") from exc
    model = build_model(config, num_classes=num_classes, seed=0)
    if any(name.endswith(".adapter_kernel") for name in tensors):
        for layer in model.conv_blocks():
            layer.spawn_adapter()
    if aux_heads:
        model.attach_aux_heads(aux_heads)
    if "meta.head_classes" in tensors:
        model.head_classes = [int(v) for v in tensors["meta.head_classes"]]
    for name, p in model.named_params():
        if name not in tensors:
            raise DataError(f"{path}: checkpoint is missing tensor {name}")
        stored = tensors[name]
        if stored.shape != p.data.shape:
            raise DataError(
                f"{path}: tensor {name} has shape {stored.shape}, expected {p.data.shape}")
        p.data = stored.astype(np.float64)
        p.frozen = False
    return model
