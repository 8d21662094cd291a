"""Ensemble probability-map fusion, mask metrics, and SMA/SMI arithmetic.

Fusion is the pixel-wise mean thresholded strictly above 0.5. Metrics follow
the pixel bookkeeping pred - FP + FN == ref, with Dice/Jaccard/area
difference reported in percent.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .dicom import CtSlice, SliceHeader, serialize_dicom
from .errors import (
    DimensionMismatch,
    EmptyReference,
    EmptyWindow,
    GeometryMismatch,
    HeightOutOfRange,
    MissingSpacing,
    PmapFormatError,
    RaggedStack,
)
from .pngio import encode_png_gray8

FUSION_THRESHOLD = 0.5

_PMAP_MAGIC = b"PMAP"


@dataclass(frozen=True)
class ProbabilityStack:
    """Stacked per-member muscle probabilities.

    maps has shape (members, rows, cols) for the flat ensemble layout; the
    two-level layout (iterations x folds) additionally records the factor
    pair, with maps ordered iteration-major.
    """

    maps: np.ndarray
    iterations: int | None = None
    folds: int | None = None

    @property
    def layout(self) -> str:
        return "two_level" if self.iterations is not None else "flat_ensemble"

    @property
    def member_count(self) -> int:
        return self.maps.shape[0]

    @staticmethod
    def _validate(maps: np.ndarray) -> np.ndarray:
        if maps.ndim != 3 or maps.shape[0] < 1:
            raise DimensionMismatch(f"stack needs shape (N, rows, cols), got {maps.shape}")
        if np.isnan(maps).any() or maps.min() < 0.0 or maps.max() > 1.0:
            raise PmapFormatError("probabilities must lie in [0, 1]")
        maps = np.ascontiguousarray(maps, dtype=np.float64)
        maps.setflags(write=False)
        return maps

    @classmethod
    def flat(cls, maps) -> "ProbabilityStack":
        return cls(maps=cls._validate(np.asarray(maps, dtype=np.float64)))

    @classmethod
    def two_level(cls, per_iteration) -> "ProbabilityStack":
        """Build from a list (iterations) of lists (folds) of 2-D grids."""
        if not per_iteration:
            raise DimensionMismatch("two-level stack needs at least one iteration")
        fold_counts = {len(folds) for folds in per_iteration}
        if len(fold_counts) != 1 or 0 in fold_counts:
            raise RaggedStack(f"unequal fold counts per iteration: {sorted(fold_counts)}")
        flat = [np.asarray(m, dtype=np.float64) for folds in per_iteration for m in folds]
        shapes = {m.shape for m in flat}
        if len(shapes) != 1:
            raise DimensionMismatch(f"mixed map shapes {sorted(shapes)}")
        maps = cls._validate(np.stack(flat))
        return cls(maps=maps, iterations=len(per_iteration), folds=fold_counts.pop())


@dataclass(frozen=True)
class MuscleMask:
    pixels: np.ndarray  # bool, (rows, cols)
    pixel_count: int
    spacing: tuple[float, float] | None = None  # (row_mm, col_mm)

    @classmethod
    def from_pixels(cls, pixels, spacing=None) -> "MuscleMask":
        arr = np.ascontiguousarray(np.asarray(pixels, dtype=bool))
        arr.setflags(write=False)
        return cls(pixels=arr, pixel_count=int(arr.sum()), spacing=spacing)


@dataclass(frozen=True)
class SegmentationReport:
    pred_count: int
    ref_count: int
    false_positive: int
    false_negative: int
    dice_pct: float
    jaccard_pct: float
    area_diff_pct: float | None
    sma_cm2: float | None = None
    smi: float | None = None


def fuse_mean_threshold(
    stack: ProbabilityStack, spacing: tuple[float, float] | None = None
) -> tuple[np.ndarray, MuscleMask]:
    """Pixel-wise mean of the members; muscle where the mean is strictly
    greater than 0.5."""
    mean_map = stack.maps.mean(axis=0)
    mask = MuscleMask.from_pixels(mean_map > FUSION_THRESHOLD, spacing=spacing)
    mean_map.setflags(write=False)
    return mean_map, mask


def fuse_two_level(
    stack: ProbabilityStack, spacing: tuple[float, float] | None = None
) -> tuple[np.ndarray, np.ndarray, MuscleMask]:
    """Two-level fusion: fold means per iteration, then the mean of those.

    Returns (iteration_means, final_map, mask); the iteration means feed the
    dropout-style variance metrics downstream.
    """
    if stack.layout != "two_level":
        raise RaggedStack("stack does not carry a two-level layout")
    m, k = stack.iterations, stack.folds
    grouped = stack.maps.reshape(m, k, *stack.maps.shape[1:])
    iteration_means = grouped.mean(axis=1)
    final_map = iteration_means.mean(axis=0)
    mask = MuscleMask.from_pixels(final_map > FUSION_THRESHOLD, spacing=spacing)
    iteration_means.setflags(write=False)
    final_map.setflags(write=False)
    return iteration_means, final_map, mask


def area_difference_pct(pred_count: int, ref_count: int) -> float:
    """Signed percent area difference with the reference in the denominator."""
    if ref_count == 0:
        raise EmptyReference("reference mask is empty; area difference undefined")
    return 100.0 * (pred_count - ref_count) / ref_count


def metrics_from_counts(
    pred_count: int, ref_count: int, false_positive: int, false_negative: int
) -> SegmentationReport:
    """Dice/Jaccard/area-difference from pixel bookkeeping counts.

    Both masks empty scores 100; exactly one empty scores 0. The area
    difference is absent (None) when the reference is empty.
    """
    tp = pred_count - false_positive
    if tp < 0 or pred_count - false_positive + false_negative != ref_count:
        raise ValueError(
            f"inconsistent counts: pred {pred_count} - FP {false_positive} "
            f"+ FN {false_negative} != ref {ref_count}"
        )
    denom = 2 * tp + false_positive + false_negative
    if denom == 0:
        dice = jaccard = 100.0
    else:
        dice = 100.0 * 2 * tp / denom
        jaccard = 100.0 * tp / (tp + false_positive + false_negative)
    diff = area_difference_pct(pred_count, ref_count) if ref_count > 0 else None
    return SegmentationReport(
        pred_count=pred_count,
        ref_count=ref_count,
        false_positive=false_positive,
        false_negative=false_negative,
        dice_pct=dice,
        jaccard_pct=jaccard,
        area_diff_pct=diff,
    )


def mask_metrics(pred: MuscleMask, ref: MuscleMask) -> SegmentationReport:
    """Compare a predicted mask against a reference mask of equal dims."""
    if pred.pixels.shape != ref.pixels.shape:
        raise DimensionMismatch(
            f"mask shapes differ: {pred.pixels.shape} vs {ref.pixels.shape}"
        )
    fp = int(np.count_nonzero(pred.pixels & ~ref.pixels))
    fn = int(np.count_nonzero(~pred.pixels & ref.pixels))
    report = metrics_from_counts(pred.pixel_count, ref.pixel_count, fp, fn)
    if pred.spacing is not None:
        report = replace(report, sma_cm2=sma_from_mask(pred))
    return report


def sma_from_mask(mask: MuscleMask) -> float:
    """Skeletal muscle area in cm^2: pixel count times pixel area."""
    if mask.spacing is None:
        raise MissingSpacing("mask carries no pixel spacing")
    row_mm, col_mm = mask.spacing
    return mask.pixel_count * row_mm * col_mm / 100.0


def smi(sma_cm2: float, height_m: float) -> float:
    """Skeletal muscle index: SMA normalized by height squared (cm^2/m^2)."""
    if not 0.5 < height_m < 2.5:
        raise HeightOutOfRange(f"height {height_m} m outside (0.5, 2.5)")
    return sma_cm2 / (height_m * height_m)


def average_window_sma(values: list[float]) -> float:
    """Arithmetic mean of per-slice SMA over an averaging window."""
    if not values:
        raise EmptyWindow("no SMA values to average")
    return float(sum(values)) / len(values)


# --- exports -----------------------------------------------------------------


def _mask_header(template: SliceHeader) -> SliceHeader:
    """Template header with an identity rescale so stored values equal the
    exported 0..255 gray levels."""
    return replace(template, rescale_slope=1.0, rescale_intercept=0.0)


def export_mask(mask: MuscleMask, template: SliceHeader) -> tuple[bytes, bytes]:
    """(png, dicom) renderings of a binary mask: 0 background, 255 muscle."""
    if mask.pixels.shape != (template.rows, template.columns):
        raise GeometryMismatch(
            f"mask {mask.pixels.shape} vs template {(template.rows, template.columns)}"
        )
    gray = np.where(mask.pixels, 255, 0).astype(np.uint8)
    png = encode_png_gray8(gray)
    ct = CtSlice(header=_mask_header(template), hu=gray.astype(np.float64))
    return png, serialize_dicom(ct, pixel_representation=0)


def export_gray_map(
    values: np.ndarray, template: SliceHeader
) -> tuple[bytes, bytes]:
    """Min-max scale a real-valued map to 8 bits and render as (png, dicom).

    A constant map exports as all zeros.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (template.rows, template.columns):
        raise GeometryMismatch(
            f"map {arr.shape} vs template {(template.rows, template.columns)}"
        )
    lo, hi = float(arr.min()), float(arr.max())
    if hi > lo:
        gray = np.floor(255.0 * (arr - lo) / (hi - lo) + 0.5).astype(np.uint8)
    else:
        gray = np.zeros(arr.shape, dtype=np.uint8)
    png = encode_png_gray8(gray)
    ct = CtSlice(header=_mask_header(template), hu=gray.astype(np.float64))
    return png, serialize_dicom(ct, pixel_representation=0)


# --- probability-map container -------------------------------------------------


def serialize_pmap(prob_map: np.ndarray, member_index: int) -> bytes:
    """PMAP container: 16-byte header (magic, rows, cols, member index) then
    the row-major float32 little-endian raster."""
    arr = np.asarray(prob_map, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"probability map must be 2-D, got {arr.shape}")
    if np.isnan(arr).any() or arr.min() < 0.0 or arr.max() > 1.0:
        raise PmapFormatError("probabilities must lie in [0, 1]")
    rows, cols = arr.shape
    header = _PMAP_MAGIC + struct.pack("<III", rows, cols, member_index)
    return header + arr.astype("<f4").tobytes()


def parse_pmap(data: bytes) -> tuple[np.ndarray, int]:
    """Parse PMAP bytes into (float64 map in [0,1], member index)."""
    if len(data) < 16:
        raise PmapFormatError(f"header needs 16 bytes, got {len(data)}")
    if data[:4] != _PMAP_MAGIC:
        raise PmapFormatError(f"bad magic {data[:4]!r}")
    rows, cols, member_index = struct.unpack_from("<III", data, 4)
    if rows == 0 or cols == 0:
        raise PmapFormatError(f"degenerate dims {rows}x{cols}")
    need = rows * cols * 4
    payload = data[16 : 16 + need]
    if len(payload) < need:
        raise PmapFormatError(
            f"raster holds {len(payload)} bytes, expected {need}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
    if np.isnan(arr).any() or arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6:
        raise PmapFormatError("probabilities outside [0, 1]")
    arr = np.clip(arr, 0.0, 1.0)
    arr.setflags(write=False)
    return arr, int(member_index)
