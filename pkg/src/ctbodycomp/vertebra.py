"""L3 slice selection: label lookup, mid-slice rules, and averaging windows.

Slice indices run ascending along the series normal (inferior to superior).
The third lumbar vertebra carries label 29 in the segmenter's labeling scheme.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import LabelAbsent, NiftiParseError
from .nifti import LabelVolume

L3_LABEL = 29


@dataclass(frozen=True)
class L3Range:
    """Contiguous L3 slice indices plus the selected mid slice and window."""

    slice_indices: list[int]
    mid_index: int
    window_indices: list[int]


def _longest_run(indices: list[int]) -> list[int]:
    """Longest contiguous run; ties resolved to the inferior-most (lowest) run."""
    runs: list[list[int]] = [[indices[0]]]
    for idx in indices[1:]:
        if idx == runs[-1][-1] + 1:
            runs[-1].append(idx)
        else:
            runs.append([idx])
    best = runs[0]
    for run in runs[1:]:
        if len(run) > len(best):
            best = run
    return best


def l3_slice_range(labels: LabelVolume, l3_label: int = L3_LABEL) -> list[int]:
    """Ascending slice indices carrying the L3 label.

    Non-contiguous label sets (segmentation noise) collapse to the longest
    contiguous run. Raises LabelAbsent when no voxel carries the label.
    """
    present = np.any(np.asarray(labels.voxels) == l3_label, axis=(0, 1))
    indices = [int(i) for i in np.flatnonzero(present)]
    if not indices:
        raise LabelAbsent(l3_label)
    return _longest_run(indices)


def l3_range_from_sidecar(data: bytes | str) -> list[int]:
    """Slice indices from a JSON sidecar {"l3_slices": [ints]}; applies the
    same longest-run rule as the label-volume path."""
    try:
        obj = json.loads(data)
        raw = obj["l3_slices"]
        indices = sorted({int(i) for i in raw})
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise NiftiParseError(f"bad L3 sidecar: {exc}") from exc
    if not indices:
        raise LabelAbsent(L3_LABEL)
    if any(i < 0 for i in indices):
        raise NiftiParseError("negative slice index in L3 sidecar")
    return _longest_run(indices)


def mid_slice_index(slice_count: int) -> int:
    """Offset of the representative mid slice within an L3 range.

    floor(count/2) minus 1, 2, or 3 depending on whether the count is at
    most 12, at most 32, or larger; clamped into the valid offset range.
    """
    if slice_count < 1:
        raise ValueError(f"slice_count must be >= 1, got {slice_count}")
    half = slice_count // 2
    if slice_count <= 12:
        mid = half - 1
    elif slice_count <= 32:
        mid = half - 2
    else:
        mid = half - 3
    return min(max(mid, 0), slice_count - 1)


def averaging_window(slice_count: int, mid: int) -> list[int]:
    """Offsets averaged around the mid slice: five slices for counts above
    12, three otherwise, clamped to valid offsets with duplicates removed."""
    if not 0 <= mid < slice_count:
        raise ValueError(f"mid {mid} out of range for count {slice_count}")
    reach = 2 if slice_count > 12 else 1
    window = sorted({min(max(i, 0), slice_count - 1)
                     for i in range(mid - reach, mid + reach + 1)})
    return window


def select_l3(indices: list[int], slice_mode: str = "mid_l3") -> L3Range:
    """Build an L3Range for a series: pick the mid (or end) slice within the
    contiguous range and attach its averaging window."""
    count = len(indices)
    if slice_mode == "mid_l3":
        mid_offset = mid_slice_index(count)
    elif slice_mode == "end_l3":
        mid_offset = count - 1
    else:
        raise ValueError(f"unknown slice mode {slice_mode!r}")
    window = averaging_window(count, mid_offset)
    return L3Range(
        slice_indices=list(indices),
        mid_index=indices[mid_offset],
        window_indices=[indices[i] for i in window],
    )
