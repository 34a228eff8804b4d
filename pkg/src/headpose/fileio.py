"""Binary file formats for frames, point clouds, and model checkpoints.

All multi-byte values are little-endian. Image payloads are 32-bit floats
in channel-planar order (R, G, B, D, IR), row-major within each plane.
"""

from __future__ import annotations

import json
import struct

import numpy as np

FRAME_MAGIC = b"HPF1"
CLOUD_MAGIC = b"HPPC"
MODEL_MAGIC = b"HPNN"
MODEL_VERSION = 1


def write_frame_channels(path, channels: np.ndarray) -> None:
    """Write a (C, H, W) float array; C must be 5 (R, G, B, D, IR)."""
    channels = np.ascontiguousarray(channels, dtype="<f4")
    c, h, w = channels.shape
    with open(path, "wb") as f:
        f.write(FRAME_MAGIC)
        f.write(struct.pack("<III", h, w, c))
        f.write(channels.tobytes())


def read_frame_channels(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FRAME_MAGIC:
            raise ValueError(f"{path}: bad frame magic {magic!r}")
        h, w, c = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(h * w * c * 4), dtype="<f4")
    if data.size != h * w * c:
        raise ValueError(f"{path}: truncated frame payload")
    return data.reshape(c, h, w).astype(np.float32)


def write_pointcloud(path, points: np.ndarray) -> None:
    points = np.ascontiguousarray(points, dtype="<f4")
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError("points must be (N, 3)")
    with open(path, "wb") as f:
        f.write(CLOUD_MAGIC)
        f.write(struct.pack("<I", points.shape[0]))
        f.write(points.tobytes())


def read_pointcloud(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CLOUD_MAGIC:
            raise ValueError(f"{path}: bad point cloud magic {magic!r}")
        (n,) = struct.unpack("<I", f.read(4))
        data = np.frombuffer(f.read(n * 12), dtype="<f4")
    if data.size != n * 3:
        raise ValueError(f"{path}: truncated point cloud")
    return data.reshape(n, 3).astype(np.float64)


def write_model(path, graph_spec: dict, param_blobs: list[np.ndarray]) -> None:
    """Checkpoint: magic, version, JSON graph spec, then f32 blobs in
    topological parameter order."""
    spec_bytes = json.dumps(graph_spec, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<II", MODEL_VERSION, len(spec_bytes)))
        f.write(spec_bytes)
        for blob in param_blobs:
            f.write(np.ascontiguousarray(blob, dtype="<f4").tobytes())


def read_model(path) -> tuple[dict, np.ndarray]:
    """Returns (graph spec, flat f32 parameter vector)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: bad model magic {magic!r}")
        version, spec_len = struct.unpack("<II", f.read(8))
        if version != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        graph_spec = json.loads(f.read(spec_len).decode("utf-8"))
        flat = np.frombuffer(f.read(), dtype="<f4")
    return graph_spec, flat.astype(np.float32)
