"""Writers for the VTFB/VTTE feature-bank wire formats.

Implemented standalone from the published byte layout (little-endian,
f32 payloads); the files are the only coupling to the consumer side.

VTFB: magic "VTFB", u32 version=1, u32 K, u32 D, u32 D_s, u32 S,
u32 H_s, u32 W_s, u32 num_images, u8 split_tag (0=train, 1=test), then
per image: u32 label, D f32 global, S*D_s f32 spatial (token-major).

VTTE: magic "VTTE", u32 version=1, u32 K, u32 D, u32-length-prefixed
UTF-8 template, K length-prefixed UTF-8 class names, K*D f32 rows.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

VERSION = 1
SPLIT_TAGS = {"train": 0, "test": 1}


def _u32(x: int) -> bytes:
    return struct.pack("<I", x)


def _f32(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _utf8(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _u32(len(raw)) + raw


def write_feature_bank(
    path: str | Path,
    split: str,
    labels: np.ndarray,
    global_features: np.ndarray,
    spatial_features: np.ndarray,
    num_classes: int,
    grid_h: int,
    grid_w: int,
) -> None:
    """Write one split as a VTFB file.

    global_features: (N, D); spatial_features: (N, S, D_s) token-major.
    """
    n, d = global_features.shape
    _, s, d_s = spatial_features.shape
    if labels.shape != (n,):
        raise ValueError(f"{n} images but {labels.shape[0]} labels")
    if s != grid_h * grid_w:
        raise ValueError(f"token count {s} != grid {grid_h}x{grid_w}")
    if n and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError("labels out of range")

    chunks = [
        b"VTFB",
        _u32(VERSION),
        _u32(num_classes),
        _u32(d),
        _u32(d_s),
        _u32(s),
        _u32(grid_h),
        _u32(grid_w),
        _u32(n),
        bytes([SPLIT_TAGS[split]]),
    ]
    for i in range(n):
        chunks.append(_u32(int(labels[i])))
        chunks.append(_f32(global_features[i]))
        chunks.append(_f32(spatial_features[i]))
    Path(path).write_bytes(b"".join(chunks))


def write_class_embeddings(
    path: str | Path,
    rows: np.ndarray,
    template: str,
    class_names: list[str],
) -> None:
    """Write class text embeddings as a VTTE file. rows: (K, D)."""
    k, d = rows.shape
    if len(class_names) != k:
        raise ValueError(f"{k} rows but {len(class_names)} class names")
    if k < 2:
        raise ValueError("need at least 2 classes")
    chunks = [b"VTTE", _u32(VERSION), _u32(k), _u32(d), _utf8(template)]
    chunks.extend(_utf8(name) for name in class_names)
    chunks.append(_f32(rows))
    Path(path).write_bytes(b"".join(chunks))
