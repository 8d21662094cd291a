"""Tiny 8-bit grayscale PNG encoder (no interlace, filter type 0)."""

from __future__ import annotations

import struct
import zlib

import numpy as np

_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(kind: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + kind
        + payload
        + struct.pack(">I", zlib.crc32(kind + payload) & 0xFFFFFFFF)
    )


def encode_png_gray8(pixels: np.ndarray) -> bytes:
    """Encode a 2-D uint8 array as a grayscale PNG byte string."""
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D grid, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
    height, width = arr.shape
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 0, 0, 0, 0)
    raster = b"".join(b"\x00" + row.tobytes() for row in arr)
    return (
        _SIGNATURE
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(raster, 9))
        + _chunk(b"IEND", b"")
    )
