"""Binary file formats. All integers and floats are little-endian.

VTFB (feature bank):
    magic "VTFB", u32 version=1,
    u32 K, u32 D, u32 D_s, u32 S, u32 H_s, u32 W_s, u32 num_images,
    u8 split_tag (0=train, 1=test),
    then per image: u32 label, D x f32 global, S*D_s x f32 spatial
    (token-major: token 0's D_s values first).

VTTE (class text embeddings):
    magic "VTTE", u32 version=1, u32 K, u32 D,
    length-prefixed UTF-8 template (u32 byte length + bytes),
    K length-prefixed UTF-8 class names,
    K*D x f32 rows (row-major).

VTPM (head parameters):
    magic "VTPM", u32 version=1, u32 D, u32 D_s, u32 H, u32 L,
    then per layer, f32 row-major, in this fixed order:
    ln1.gamma, ln1.beta,
    self_attn w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o,
    ln2.gamma, ln2.beta,
    cross_attn w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o,
    ln3.gamma, ln3.beta,
    ffn w1, b1, w2, b2.

Files are read fully and strictly: wrong magic, unsupported version,
short payloads, inconsistent dimensions and trailing bytes are all
rejected with distinct errors.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .attention import VTParams, empty_params, iter_param_arrays
from .bank import ClassEmbeddings, FeatureBank
from .errors import (
    BadMagicError,
    DimensionError,
    FormatError,
    TruncatedFileError,
    VersionError,
)

BANK_MAGIC = b"VTFB"
TEXT_MAGIC = b"VTTE"
PARAMS_MAGIC = b"VTPM"
FORMAT_VERSION = 1

_SPLIT_TO_TAG = {"train": 0, "test": 1}
_TAG_TO_SPLIT = {v: k for k, v in _SPLIT_TO_TAG.items()}

# Single-dimension sanity cap; also guards byte-size arithmetic.
_MAX_DIM = 2**31


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"{self.path}: need {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def f32_array(self, count: int, shape: tuple[int, ...]) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4", count=count).astype(np.float64).reshape(shape)

    def utf8(self) -> str:
        n = self.u32()
        if n > len(self.data):
            raise TruncatedFileError(f"{self.path}: string length {n} exceeds file size")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{self.path}: invalid UTF-8 string") from exc

    def expect_magic(self, magic: bytes) -> None:
        got = self.take(4)
        if got != magic:
            raise BadMagicError(
                f"{self.path}: bad magic {got!r}, expected {magic!r}"
            )

    def expect_version(self) -> None:
        version = self.u32()
        if version != FORMAT_VERSION:
            raise VersionError(
                f"{self.path}: unsupported version {version}, expected {FORMAT_VERSION}"
            )

    def expect_eof(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(
                f"{self.path}: {len(self.data) - self.pos} trailing bytes"
            )


def _check_dim(value: int, name: str, path: str) -> int:
    if not 1 <= value < _MAX_DIM:
        raise DimensionError(f"{path}: {name}={value} out of range")
    return value


def _u32(x: int) -> bytes:
    return struct.pack("<I", x)


def _f32_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _utf8_bytes(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _u32(len(raw)) + raw


# ---------------------------------------------------------------------------
# VTFB feature banks
# ---------------------------------------------------------------------------


def bank_header_size() -> int:
    return 4 + 4 + 7 * 4 + 1


def bank_record_size(global_dim: int, num_tokens: int, spatial_dim: int) -> int:
    return 4 + 4 * global_dim + 4 * num_tokens * spatial_dim


def write_bank(bank: FeatureBank, path: str | Path) -> None:
    bank.validate()
    chunks = [
        BANK_MAGIC,
        _u32(FORMAT_VERSION),
        _u32(bank.num_classes),
        _u32(bank.global_dim),
        _u32(bank.spatial_dim),
        _u32(bank.num_tokens),
        _u32(bank.grid_h),
        _u32(bank.grid_w),
        _u32(bank.num_images),
        bytes([_SPLIT_TO_TAG[bank.split]]),
    ]
    for i in range(bank.num_images):
        chunks.append(_u32(int(bank.labels[i])))
        chunks.append(_f32_bytes(bank.global_features[i]))
        chunks.append(_f32_bytes(bank.spatial_features[i]))
    Path(path).write_bytes(b"".join(chunks))


def read_bank(path: str | Path) -> FeatureBank:
    r = _Reader(Path(path).read_bytes(), str(path))
    r.expect_magic(BANK_MAGIC)
    r.expect_version()
    k = _check_dim(r.u32(), "K", r.path)
    d = _check_dim(r.u32(), "D", r.path)
    d_s = _check_dim(r.u32(), "D_s", r.path)
    s = _check_dim(r.u32(), "S", r.path)
    grid_h = _check_dim(r.u32(), "H_s", r.path)
    grid_w = _check_dim(r.u32(), "W_s", r.path)
    num_images = r.u32()
    if num_images >= _MAX_DIM:
        raise DimensionError(f"{r.path}: num_images={num_images} out of range")
    if s != grid_h * grid_w:
        raise DimensionError(f"{r.path}: S={s} != H_s*W_s={grid_h * grid_w}")
    tag = r.u8()
    if tag not in _TAG_TO_SPLIT:
        raise FormatError(f"{r.path}: unknown split tag {tag}")

    labels = np.empty(num_images, dtype=np.int64)
    global_feats = np.empty((num_images, d))
    spatial = np.empty((num_images, s, d_s))
    for i in range(num_images):
        label = r.u32()
        if label >= k:
            raise FormatError(f"{r.path}: image {i} label {label} >= K={k}")
        labels[i] = label
        global_feats[i] = r.f32_array(d, (d,))
        spatial[i] = r.f32_array(s * d_s, (s, d_s))
    r.expect_eof()
    return FeatureBank(
        num_classes=k,
        grid_h=grid_h,
        grid_w=grid_w,
        split=_TAG_TO_SPLIT[tag],
        labels=labels,
        global_features=global_feats,
        spatial_features=spatial,
    ).validate()


# ---------------------------------------------------------------------------
# VTTE class text embeddings
# ---------------------------------------------------------------------------


def write_class_embeddings(texts: ClassEmbeddings, path: str | Path) -> None:
    texts.validate()
    chunks = [
        TEXT_MAGIC,
        _u32(FORMAT_VERSION),
        _u32(texts.num_classes),
        _u32(texts.dim),
        _utf8_bytes(texts.template),
    ]
    chunks.extend(_utf8_bytes(name) for name in texts.class_names)
    chunks.append(_f32_bytes(texts.rows))
    Path(path).write_bytes(b"".join(chunks))


def read_class_embeddings(path: str | Path) -> ClassEmbeddings:
    r = _Reader(Path(path).read_bytes(), str(path))
    r.expect_magic(TEXT_MAGIC)
    r.expect_version()
    k = r.u32()
    d = _check_dim(r.u32(), "D", r.path)
    if not 2 <= k < _MAX_DIM:
        raise DimensionError(f"{r.path}: K={k} out of range (need >= 2)")
    template = r.utf8()
    names = [r.utf8() for _ in range(k)]
    rows = r.f32_array(k * d, (k, d))
    r.expect_eof()
    return ClassEmbeddings(rows=rows, template=template, class_names=names).validate()


# ---------------------------------------------------------------------------
# VTPM head parameters
# ---------------------------------------------------------------------------


def params_payload_bytes(params: VTParams) -> bytes:
    return b"".join(_f32_bytes(a) for _, a in iter_param_arrays(params))


def write_params(params: VTParams, path: str | Path) -> None:
    header = (
        PARAMS_MAGIC
        + _u32(FORMAT_VERSION)
        + _u32(params.model_dim)
        + _u32(params.spatial_dim)
        + _u32(params.num_heads)
        + _u32(params.num_layers)
    )
    Path(path).write_bytes(header + params_payload_bytes(params))


def read_params(path: str | Path) -> VTParams:
    r = _Reader(Path(path).read_bytes(), str(path))
    r.expect_magic(PARAMS_MAGIC)
    r.expect_version()
    d = _check_dim(r.u32(), "D", r.path)
    d_s = _check_dim(r.u32(), "D_s", r.path)
    h = _check_dim(r.u32(), "H", r.path)
    layers = _check_dim(r.u32(), "L", r.path)
    if d % h:
        raise DimensionError(f"{r.path}: D={d} not divisible by H={h}")
    params = empty_params(d, d_s, h, layers)
    for _, a in iter_param_arrays(params):
        a[...] = r.f32_array(a.size, a.shape)
    r.expect_eof()
    return params
