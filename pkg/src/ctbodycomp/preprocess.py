"""HU windowing, per-image normalization, and 8-bit PNG export.

The muscle window is -29 to 150 HU. Normalization is per-image z-scoring
with the population standard deviation; the PNG export linearly quantizes
the windowed range to 8 bits with round-half-away-from-zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dicom import CtSlice, SliceHeader
from .pngio import encode_png_gray8

MUSCLE_WINDOW = (-29.0, 150.0)


@dataclass(frozen=True)
class WindowedSlice:
    hu_clamped: np.ndarray
    source: SliceHeader
    lo: float = MUSCLE_WINDOW[0]
    hi: float = MUSCLE_WINDOW[1]


@dataclass(frozen=True)
class NormalizedSlice:
    z: np.ndarray
    constant_input: bool


def window_hu(ct: CtSlice, lo: float = MUSCLE_WINDOW[0],
              hi: float = MUSCLE_WINDOW[1]) -> WindowedSlice:
    """Clamp every pixel into [lo, hi]."""
    if not lo < hi:
        raise ValueError(f"window requires lo < hi, got [{lo}, {hi}]")
    clamped = np.clip(np.asarray(ct.hu, dtype=np.float64), lo, hi)
    clamped.setflags(write=False)
    return WindowedSlice(hu_clamped=clamped, source=ct.header, lo=lo, hi=hi)


def normalize(w: WindowedSlice) -> NormalizedSlice:
    """Per-image z-score (population std). A constant image maps to all
    zeros with the constant_input flag set instead of dividing by zero."""
    grid = np.asarray(w.hu_clamped, dtype=np.float64)
    std = float(grid.std())
    if std == 0.0:
        z = np.zeros_like(grid)
        z.setflags(write=False)
        return NormalizedSlice(z=z, constant_input=True)
    z = (grid - grid.mean()) / std
    z.setflags(write=False)
    return NormalizedSlice(z=z, constant_input=False)


def quantize_gray8(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Map [lo, hi] linearly onto 0..255, rounding half away from zero."""
    scaled = 255.0 * (np.asarray(values, dtype=np.float64) - lo) / (hi - lo)
    return np.floor(np.clip(scaled, 0.0, 255.0) + 0.5).astype(np.uint8)


def export_png(w: WindowedSlice) -> bytes:
    """8-bit grayscale PNG of the windowed slice."""
    return encode_png_gray8(quantize_gray8(w.hu_clamped, w.lo, w.hi))
