"""Synthetic CT studies with analytically known muscle area.

The muscle is an annulus (HU 60) on a soft-tissue background (HU -100) with
a central bone disc (HU 800), so the true area is pi*(r_out^2 - r_in^2).
Probability-map ensembles perturb the reference mask only inside a boundary
band: each member gets a Gaussian radial jitter of the boundary plus pixel
noise, which makes across-member variance and fused-mask area error grow
together with the perturbation sigma.
"""

from __future__ import annotations

import datetime as _dt
import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dicom import CtSlice, SliceHeader, serialize_dicom
from .errors import InvalidSpec
from .fusion import ProbabilityStack, serialize_pmap
from .nifti import LabelVolume, serialize_nifti_labels
from .vertebra import L3_LABEL

HU_MUSCLE = 60
HU_BACKGROUND = -100
HU_BONE = 800

_RAMP_HALF_WIDTH_PX = 1.5
_JITTER_BIAS = 1.5  # outward boundary bias per unit sigma, in band widths
_JITTER_SPREAD = 0.5  # member-to-member boundary spread per unit sigma


@dataclass(frozen=True)
class PhantomSpec:
    rows: int = 192
    cols: int = 192
    pixel_spacing_mm: tuple[float, float] = (0.8, 0.8)
    center_offset_mm: tuple[float, float] = (0.0, 0.0)
    r_inner_mm: float = 40.0
    r_outer_mm: float = 60.0
    slice_count: int = 40
    l3_range: tuple[int, int] = (18, 30)  # inclusive slice indices
    noise_sigma_hu: float = 0.0
    ensemble_members: int = 5
    perturb_sigma: float = 0.0
    seed: int = 0
    slice_thickness_mm: float = 5.0
    slice_spacing_mm: float = 5.0
    patient_id: str = "PHANTOM-001"
    study_date: _dt.date = _dt.date(2024, 1, 15)
    series_number: int = 2
    series_description: str = "Axial venous phase"
    study_description: str = "Abdomen phantom"

    def validate(self) -> None:
        if not 0 < self.r_inner_mm < self.r_outer_mm:
            raise InvalidSpec(
                f"need 0 < r_inner < r_outer, got {self.r_inner_mm}/{self.r_outer_mm}"
            )
        if self.rows < 8 or self.cols < 8:
            raise InvalidSpec(f"image {self.rows}x{self.cols} too small")
        lo, hi = self.l3_range
        if not 0 <= lo <= hi < self.slice_count:
            raise InvalidSpec(
                f"l3_range {self.l3_range} outside slice count {self.slice_count}"
            )
        if self.ensemble_members < 1:
            raise InvalidSpec("need at least one ensemble member")
        if self.perturb_sigma < 0 or self.noise_sigma_hu < 0:
            raise InvalidSpec("sigmas must be non-negative")
        field_mm = min(self.rows * self.pixel_spacing_mm[0],
                       self.cols * self.pixel_spacing_mm[1])
        if 2 * self.r_outer_mm >= field_mm:
            raise InvalidSpec(
                f"annulus diameter {2 * self.r_outer_mm} mm exceeds field {field_mm} mm"
            )


@dataclass(frozen=True)
class PhantomStudy:
    spec: PhantomSpec
    slices: list[CtSlice]
    labels: LabelVolume
    reference_mask: np.ndarray  # bool, (rows, cols)
    analytic_sma_cm2: float
    series_uid: str
    study_uid: str


def _radius_grid(spec: PhantomSpec) -> np.ndarray:
    rows, cols = spec.rows, spec.cols
    row_mm, col_mm = spec.pixel_spacing_mm
    y = (np.arange(rows) - (rows - 1) / 2.0) * row_mm - spec.center_offset_mm[1]
    x = (np.arange(cols) - (cols - 1) / 2.0) * col_mm - spec.center_offset_mm[0]
    return np.hypot(x[None, :], y[:, None])


def reference_mask(spec: PhantomSpec) -> np.ndarray:
    """Pixel-center rasterization of the muscle annulus."""
    radius = _radius_grid(spec)
    return (radius >= spec.r_inner_mm) & (radius <= spec.r_outer_mm)


def analytic_sma_cm2(spec: PhantomSpec) -> float:
    return math.pi * (spec.r_outer_mm**2 - spec.r_inner_mm**2) / 100.0


def generate_study(spec: PhantomSpec) -> PhantomStudy:
    """DICOM slices, the vertebra label volume, and the reference mask."""
    spec.validate()
    radius = _radius_grid(spec)
    base = np.full((spec.rows, spec.cols), HU_BACKGROUND, dtype=np.float64)
    base[(radius >= spec.r_inner_mm) & (radius <= spec.r_outer_mm)] = HU_MUSCLE
    base[radius <= 0.45 * spec.r_inner_mm] = HU_BONE

    rng = np.random.default_rng([spec.seed, 0xC7])
    tag = f"{spec.patient_id}.{spec.study_date.strftime('%Y%m%d')}.{spec.seed}"
    study_uid = f"1.2.826.0.1.3680043.9.7865.{zlib.crc32(tag.encode()):010d}.1"
    series_uid = f"{study_uid}.{spec.series_number}"
    frame_uid = f"{study_uid}.0"

    slices: list[CtSlice] = []
    for k in range(spec.slice_count):
        hu = base.copy()
        if spec.noise_sigma_hu > 0:
            hu = np.rint(hu + rng.normal(0.0, spec.noise_sigma_hu, hu.shape))
        header = SliceHeader(
            patient_id=spec.patient_id,
            study_uid=study_uid,
            series_uid=series_uid,
            frame_of_reference_uid=frame_uid,
            series_number=spec.series_number,
            acquisition_number=1,
            instance_number=k + 1,
            study_date=spec.study_date,
            series_description=spec.series_description,
            study_description=spec.study_description,
            rows=spec.rows,
            columns=spec.cols,
            pixel_spacing_row_mm=spec.pixel_spacing_mm[0],
            pixel_spacing_col_mm=spec.pixel_spacing_mm[1],
            slice_thickness_mm=spec.slice_thickness_mm,
            spacing_between_slices_mm=spec.slice_spacing_mm,
            image_position_mm=(0.0, 0.0, k * spec.slice_spacing_mm),
            image_orientation=(1.0, 0.0, 0.0, 0.0, 1.0, 0.0),
            rescale_slope=1.0,
            rescale_intercept=-1024.0,
        )
        slices.append(CtSlice(header=header, hu=hu))

    voxels = np.zeros((spec.cols, spec.rows, spec.slice_count), dtype=np.uint8)
    vertebra = (radius <= 0.45 * spec.r_inner_mm).T  # (cols, rows) = (x, y)
    lo, hi = spec.l3_range
    voxels[:, :, lo : hi + 1] = np.where(vertebra[:, :, None], L3_LABEL, 0)
    affine = np.diag(
        [spec.pixel_spacing_mm[1], spec.pixel_spacing_mm[0], spec.slice_spacing_mm, 1.0]
    )
    labels = LabelVolume(dims=voxels.shape, voxels=voxels, affine=affine)

    ref = reference_mask(spec)
    return PhantomStudy(
        spec=spec,
        slices=slices,
        labels=labels,
        reference_mask=ref,
        analytic_sma_cm2=analytic_sma_cm2(spec),
        series_uid=series_uid,
        study_uid=study_uid,
    )


def _pad(mask: np.ndarray) -> np.ndarray:
    return np.pad(mask, 1, constant_values=False)


def _erode(mask: np.ndarray) -> np.ndarray:
    p = _pad(mask)
    return (p[1:-1, 1:-1] & p[:-2, 1:-1] & p[2:, 1:-1]
            & p[1:-1, :-2] & p[1:-1, 2:])


def _dilate(mask: np.ndarray) -> np.ndarray:
    p = _pad(mask)
    return (p[1:-1, 1:-1] | p[:-2, 1:-1] | p[2:, 1:-1]
            | p[1:-1, :-2] | p[1:-1, 2:])


def signed_band_distance(mask: np.ndarray, band_px: int = 3) -> np.ndarray:
    """Signed distance to the mask boundary in pixel steps, graded inside a
    band of band_px and saturated beyond it (positive inside the mask)."""
    d = np.full(mask.shape, float(band_px))
    d[~mask] = -float(band_px)
    current = mask.copy()
    for k in range(1, band_px + 1):
        eroded = _erode(current)
        d[current & ~eroded] = k - 0.5
        current = eroded
    current = mask.copy()
    for k in range(1, band_px + 1):
        dilated = _dilate(current)
        d[dilated & ~current] = -(k - 0.5)
        current = dilated
    return d


def annulus_distance_px(spec: PhantomSpec) -> np.ndarray:
    """Continuous signed distance (pixels) to the annulus boundary, positive
    inside the muscle ring."""
    radius = _radius_grid(spec)
    d_mm = np.minimum(spec.r_outer_mm - radius, radius - spec.r_inner_mm)
    return d_mm / (0.5 * (spec.pixel_spacing_mm[0] + spec.pixel_spacing_mm[1]))


def generate_prob_maps(
    reference: np.ndarray,
    member_count: int,
    perturb_sigma: float,
    seed: int,
    band_px: int = 3,
    distance_px: np.ndarray | None = None,
) -> ProbabilityStack:
    """Ensemble member maps as boundary-band perturbations of the reference.

    Sigma zero yields crisp copies. Otherwise each member is
    clamp(ramp(d + jitter) + noise, 0, 1) where d is the signed distance to
    the mask boundary, the per-member boundary jitter is Gaussian with both
    spread and (outward) mean proportional to sigma, and the pixel noise
    ~ N(0, sigma) applies only inside the band. The shared outward bias
    mirrors the systematic overestimation regime of real ensembles, so the
    fused-mask area error rises together with the across-member variance.
    A continuous distance field (annulus_distance_px) gives sub-pixel
    boundary motion; without one, a ring-graded approximation is derived
    from the mask itself.
    """
    mask = np.asarray(reference, dtype=bool)
    if perturb_sigma == 0.0:
        maps = np.repeat(mask[None, :, :].astype(np.float64), member_count, axis=0)
        return ProbabilityStack.flat(maps)

    if distance_px is None:
        d = signed_band_distance(mask, band_px)
    else:
        d = np.clip(np.asarray(distance_px, dtype=np.float64), -band_px, band_px)
    band = np.abs(d) < band_px

    rng = np.random.default_rng(seed)
    bias = _JITTER_BIAS * band_px * perturb_sigma
    members = []
    for _ in range(member_count):
        jitter = bias + rng.normal(0.0, _JITTER_SPREAD * band_px * perturb_sigma)
        ramp = 0.5 + (d + jitter) / (2.0 * _RAMP_HALF_WIDTH_PX)
        noise = np.zeros_like(ramp)
        noise[band] = rng.normal(0.0, perturb_sigma, int(band.sum()))
        members.append(np.clip(ramp + noise, 0.0, 1.0))
    return ProbabilityStack.flat(np.stack(members))


def write_study(study: PhantomStudy, root: Path, case_id: str | None = None) -> Path:
    """Write the on-disk layout the pipeline ingests.

    <case>/dicom/<instance>.dcm, <case>/labels/<series_uid>.nii.gz, and
    <case>/pmaps/<series_uid>/<slice_index>/<member>.pmap for L3 slices.
    """
    spec = study.spec
    case = case_id or f"{spec.patient_id}_{spec.study_date.strftime('%Y%m%d')}"
    case_dir = Path(root) / case
    dicom_dir = case_dir / "dicom"
    dicom_dir.mkdir(parents=True, exist_ok=True)
    for ct in study.slices:
        name = f"{ct.header.instance_number:04d}.dcm"
        (dicom_dir / name).write_bytes(serialize_dicom(ct))

    labels_dir = case_dir / "labels"
    labels_dir.mkdir(exist_ok=True)
    (labels_dir / f"{study.series_uid}.nii.gz").write_bytes(
        serialize_nifti_labels(study.labels, gzipped=True)
    )

    lo, hi = spec.l3_range
    distance = annulus_distance_px(spec)
    for slice_idx in range(lo, hi + 1):
        stack = generate_prob_maps(
            study.reference_mask,
            spec.ensemble_members,
            spec.perturb_sigma,
            seed=zlib.crc32(f"{spec.seed}/{spec.patient_id}/{slice_idx}".encode()),
            distance_px=distance,
        )
        slice_dir = case_dir / "pmaps" / study.series_uid / str(slice_idx)
        slice_dir.mkdir(parents=True, exist_ok=True)
        for m in range(stack.member_count):
            (slice_dir / f"{m:02d}.pmap").write_bytes(
                serialize_pmap(stack.maps[m], m)
            )
    return case_dir
