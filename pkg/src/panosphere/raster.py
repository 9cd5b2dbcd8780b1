"""The ``PSR1`` float raster container, plus PNG input for RGB images.

Layout (all little-endian)::

    b"PSR1" | u32 width | u32 height | u32 channels | u8 kind | float32 payload

The payload is row-major and channel-interleaved, exactly
``4 * width * height * channels`` bytes.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"PSR1"
_HEADER = struct.Struct("<4sIIIB")


class RasterFormatError(ValueError):
    pass


class RasterKind(enum.IntEnum):
    RGB = 0
    DISTANCE = 1
    MASK = 2
    NORMAL = 3
    EMBEDDING = 4

    @classmethod
    def parse(cls, value) -> "RasterKind":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown raster kind {value!r}") from None
        return cls(value)


@dataclass
class Raster:
    data: np.ndarray  # (H, W, C) float32
    kind: RasterKind

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def plane(self) -> np.ndarray:
        """Single-channel rasters as (H, W), others unchanged, in float64."""
        arr = self.data.astype(np.float64)
        return arr[..., 0] if arr.shape[2] == 1 else arr


def encode_raster(data, kind) -> bytes:
    kind = RasterKind.parse(kind)
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ValueError(f"raster data must be 2-D or 3-D, got shape {arr.shape}")
    h, w, c = arr.shape
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, w, h, c, int(kind)) + payload


def decode_raster(buf: bytes, source: str = "<bytes>") -> Raster:
    if len(buf) < _HEADER.size:
        raise RasterFormatError(
            f"{source}: truncated header, expected {_HEADER.size} bytes, got {len(buf)}")
    magic, w, h, c, kind = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise RasterFormatError(f"{source}: bad magic {magic!r} at byte offset 0")
    try:
        kind = RasterKind(kind)
    except ValueError:
        raise RasterFormatError(
            f"{source}: unsupported kind code {kind} at byte offset 16") from None
    expected = 4 * w * h * c
    actual = len(buf) - _HEADER.size
    if actual != expected:
        raise RasterFormatError(
            f"{source}: payload length mismatch at byte offset {_HEADER.size}: "
            f"expected {expected} bytes, got {actual}")
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(h, w, c)
    return Raster(data.astype(np.float32), kind)


def write_raster(path, data, kind) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_raster(data, kind))
    except OSError as exc:
        raise OSError(f"cannot write raster {path}: {exc}") from exc


def read_raster(path, expect_kind=None) -> Raster:
    """Read a ``PSR1`` raster, or an 8-bit PNG when an RGB raster is wanted."""
    path = Path(path)
    expect = None if expect_kind is None else RasterKind.parse(expect_kind)
    if path.suffix.lower() == ".png":
        if expect not in (None, RasterKind.RGB):
            raise RasterFormatError(
                f"{path}: PNG input is accepted only for RGB rasters, not {expect.name}")
        from PIL import Image

        with Image.open(path) as im:
            if im.mode not in ("RGB", "RGBA"):
                raise RasterFormatError(
                    f"{path}: PNG mode {im.mode} is not RGB; only 8-bit RGB PNGs are read")
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        return Raster(arr, RasterKind.RGB)
    raster = decode_raster(path.read_bytes(), str(path))
    if expect is not None and raster.kind != expect:
        raise RasterFormatError(f"{path}: expected a {expect.name} raster, got {raster.kind.name}")
    return raster
