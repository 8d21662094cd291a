"""End-to-end study processing: catalog, L3 selection, fusion, uncertainty,
flagging, and the run manifest, plus longitudinal CSV/SVG emission.

Per-study failures are captured as typed error rows and never abort the
run; outputs are deterministic for a fixed config and input tree.
"""

from __future__ import annotations

import csv
import io
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .catalog import SeriesGroup, build_catalog, choose_series
from .dicom import parse_dicom_file
from .errors import (
    CtBodyCompError,
    DimensionMismatch,
    LabelAbsent,
    NoStudiesFound,
    PmapFormatError,
    UnknownPatient,
)
from .flagging import FlagDecision, flag_cases, flags_to_csv
from .fusion import (
    MuscleMask,
    ProbabilityStack,
    average_window_sma,
    export_mask,
    fuse_mean_threshold,
    parse_pmap,
    sma_from_mask,
    smi as smi_of,
)
from .nifti import parse_nifti_labels
from .uncertainty import (
    CalibrationModel,
    compute_report,
    export_uncertainty_map,
    per_member_masks,
)
from .vertebra import L3_LABEL, l3_range_from_sidecar, l3_slice_range, select_l3

DEFAULT_SERIES_PATTERN = "venous"


@dataclass(frozen=True)
class RunConfig:
    input_root: Path
    output_root: Path
    labels_source: str = "nifti"  # or "json"
    slice_mode: str = "mid_l3"  # or "end_l3"
    area_mode: str = "single"  # or "window_average"
    uncertainty_metric: str = "avg_variance"
    uncertainty_threshold: float = float("inf")
    series_pattern: str = DEFAULT_SERIES_PATTERN
    calibration_model: Path | None = None
    heights_csv: Path | None = None
    seed: int = 0
    workers: int = 1

    def validate(self) -> None:
        if self.labels_source not in ("nifti", "json"):
            raise ValueError(f"labels_source {self.labels_source!r}")
        if self.slice_mode not in ("mid_l3", "end_l3"):
            raise ValueError(f"slice_mode {self.slice_mode!r}")
        if self.area_mode not in ("single", "window_average"):
            raise ValueError(f"area_mode {self.area_mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def from_toml(cls, path: Path) -> "RunConfig":
        with open(path, "rb") as fh:
            table = tomllib.load(fh).get("pipeline", {})
        base = Path(path).resolve().parent

        def _path(key):
            value = table.get(key, "")
            if not value:
                return None
            p = Path(value)
            return p if p.is_absolute() else base / p

        config = cls(
            input_root=_path("input_root") or base,
            output_root=_path("output_root") or base / "out",
            labels_source=table.get("labels_source", "nifti"),
            slice_mode=table.get("slice_mode", "mid_l3"),
            area_mode=table.get("area_mode", "single"),
            uncertainty_metric=table.get("uncertainty_metric", "avg_variance"),
            uncertainty_threshold=float(table.get("uncertainty_threshold", float("inf"))),
            series_pattern=table.get("series_pattern", DEFAULT_SERIES_PATTERN),
            calibration_model=_path("calibration_model"),
            heights_csv=_path("heights_csv"),
            seed=int(table.get("seed", 0)),
            workers=int(table.get("workers", 1)),
        )
        config.validate()
        return config


@dataclass(frozen=True)
class ManifestRow:
    patient_id: str
    scan_date: str  # ISO date
    series_number: int
    slice_number: int
    sma_cm2: float
    smi: float | None
    uncertainty_value: float
    flagged: bool
    study_description: str
    series_description: str


@dataclass(frozen=True)
class ErrorRow:
    case_id: str
    error_type: str
    detail: str


@dataclass
class PipelineResult:
    manifest: list[ManifestRow]
    errors: list[ErrorRow]
    flags: list[FlagDecision]


def _load_heights(path: Path | None) -> dict[str, float]:
    if path is None:
        return {}
    heights: dict[str, float] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            heights[rec["patient_id"].strip()] = float(rec["height_m"])
    return heights


def load_probability_stack(slice_dir: Path) -> ProbabilityStack:
    """Read every member .pmap under a slice directory, ordered by member
    index from the container header."""
    files = sorted(slice_dir.glob("*.pmap"))
    if not files:
        raise PmapFormatError(f"no probability maps under {slice_dir}")
    members = []
    for f in files:
        prob_map, member_index = parse_pmap(f.read_bytes())
        members.append((member_index, str(f), prob_map))
    members.sort(key=lambda t: (t[0], t[1]))
    return ProbabilityStack.flat([m[2] for m in members])


def _l3_indices(study_dir: Path, group: SeriesGroup, config: RunConfig) -> list[int]:
    labels_dir = study_dir / "labels"
    if config.labels_source == "json":
        path = labels_dir / f"{group.series_uid}.json"
        if not path.exists():
            raise LabelAbsent(L3_LABEL)
        indices = l3_range_from_sidecar(path.read_text())
    else:
        path = labels_dir / f"{group.series_uid}.nii.gz"
        if not path.exists():
            path = labels_dir / f"{group.series_uid}.nii"
        if not path.exists():
            raise LabelAbsent(L3_LABEL)
        volume = parse_nifti_labels(path.read_bytes())
        if volume.dims[2] != len(group.slices):
            raise DimensionMismatch(
                f"label volume has {volume.dims[2]} slices, series has {len(group.slices)}"
            )
        indices = l3_slice_range(volume)
    if indices[-1] >= len(group.slices):
        raise DimensionMismatch(
            f"L3 slice index {indices[-1]} outside series of {len(group.slices)}"
        )
    return indices


def _fuse_slice(
    study_dir: Path, group: SeriesGroup, slice_idx: int
) -> tuple[ProbabilityStack, np.ndarray, MuscleMask]:
    header = group.slices[slice_idx].header
    spacing = (header.pixel_spacing_row_mm, header.pixel_spacing_col_mm)
    stack = load_probability_stack(
        study_dir / "pmaps" / group.series_uid / str(slice_idx)
    )
    mean_map, mask = fuse_mean_threshold(stack, spacing=spacing)
    if mask.pixels.shape != (header.rows, header.columns):
        raise DimensionMismatch(
            f"probability maps {mask.pixels.shape} vs slice "
            f"{(header.rows, header.columns)}"
        )
    return stack, mean_map, mask


def process_study(
    study_dir: Path,
    config: RunConfig,
    calibration: CalibrationModel | None,
    heights: dict[str, float],
) -> tuple[ManifestRow, dict[str, bytes]]:
    """Run one study through the pipeline; returns its manifest row and the
    artifact bytes to persist."""
    files = sorted(p for p in study_dir.rglob("*.dcm"))
    slices = [parse_dicom_file(p.read_bytes()) for p in files]
    catalog = build_catalog(slices)
    group = choose_series(catalog, config.series_pattern)

    indices = _l3_indices(study_dir, group, config)
    selection = select_l3(indices, config.slice_mode)
    target = selection.mid_index

    stack, _, mask = _fuse_slice(study_dir, group, target)
    spacing = mask.spacing
    per_member = [
        sma_from_mask(MuscleMask.from_pixels(m, spacing=spacing))
        for m in per_member_masks(stack)
    ]
    report = compute_report(stack, mask, per_member, calibration)

    if config.area_mode == "window_average":
        window_smas = []
        for idx in selection.window_indices:
            if idx == target:
                window_smas.append(sma_from_mask(mask))
            else:
                _, _, window_mask = _fuse_slice(study_dir, group, idx)
                window_smas.append(sma_from_mask(window_mask))
        sma_value = average_window_sma(window_smas)
    else:
        sma_value = sma_from_mask(mask)

    header = group.slices[target].header
    smi_value = None
    height = heights.get(header.patient_id)
    if height is not None:
        smi_value = smi_of(sma_value, height)

    metric_value = report.metric(config.uncertainty_metric)
    if metric_value is None:
        raise CtBodyCompError(
            f"uncertainty metric {config.uncertainty_metric!r} is absent for this case"
        )
    flagged = metric_value > config.uncertainty_threshold

    mask_png, mask_dcm = export_mask(mask, header)
    unc_png, unc_dcm = export_uncertainty_map(report, header)
    artifacts = {
        "mask.png": mask_png,
        "mask.dcm": mask_dcm,
        "uncertainty.png": unc_png,
        "uncertainty.dcm": unc_dcm,
    }
    row = ManifestRow(
        patient_id=header.patient_id,
        scan_date=header.study_date.isoformat(),
        series_number=header.series_number,
        slice_number=target,
        sma_cm2=sma_value,
        smi=smi_value,
        uncertainty_value=metric_value,
        flagged=flagged,
        study_description=header.study_description,
        series_description=header.series_description,
    )
    return row, artifacts


def discover_studies(input_root: Path) -> list[Path]:
    root = Path(input_root)
    if not root.is_dir():
        raise NoStudiesFound(f"{root} is not a directory")
    studies = sorted(
        d for d in root.iterdir() if d.is_dir() and any(d.rglob("*.dcm"))
    )
    if not studies:
        raise NoStudiesFound(f"no DICOM studies under {root}")
    return studies


def run_pipeline(config: RunConfig) -> PipelineResult:
    """Process every study under input_root and write the manifest, flag,
    error, and image artifacts under output_root."""
    config.validate()
    studies = discover_studies(config.input_root)
    calibration = None
    if config.calibration_model is not None:
        calibration = CalibrationModel.from_json(
            Path(config.calibration_model).read_text()
        )
    heights = _load_heights(config.heights_csv)

    def worker(study_dir: Path):
        try:
            return study_dir.name, process_study(study_dir, config, calibration, heights), None
        except CtBodyCompError as exc:
            return study_dir.name, None, ErrorRow(
                case_id=study_dir.name, error_type=type(exc).__name__, detail=str(exc)
            )

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(worker, studies))
    else:
        outcomes = [worker(d) for d in studies]
    outcomes.sort(key=lambda t: t[0])

    result = PipelineResult(manifest=[], errors=[], flags=[])
    out_root = Path(config.output_root)
    out_root.mkdir(parents=True, exist_ok=True)
    for case_id, ok, err in outcomes:
        if err is not None:
            result.errors.append(err)
            continue
        row, artifacts = ok
        case_dir = out_root / case_id
        case_dir.mkdir(exist_ok=True)
        for name, blob in artifacts.items():
            (case_dir / name).write_bytes(blob)
        result.manifest.append(row)

    result.flags = flag_cases(
        [(r.patient_id + "/" + r.scan_date, r.uncertainty_value) for r in result.manifest],
        threshold=config.uncertainty_threshold,
        metric_name=config.uncertainty_metric,
    )
    (out_root / "manifest.csv").write_text(manifest_to_csv(result.manifest))
    (out_root / "errors.csv").write_text(errors_to_csv(result.errors))
    (out_root / "flags.csv").write_text(flags_to_csv(result.flags))
    return result


_MANIFEST_FIELDS = [
    "patient_id", "scan_date", "series_number", "slice_number", "sma_cm2",
    "smi", "uncertainty_value", "flagged", "study_description",
    "series_description",
]


def manifest_to_csv(rows: list[ManifestRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_MANIFEST_FIELDS)
    for r in rows:
        writer.writerow(
            [
                r.patient_id, r.scan_date, r.series_number, r.slice_number,
                repr(r.sma_cm2), "" if r.smi is None else repr(r.smi),
                repr(r.uncertainty_value), str(r.flagged).lower(),
                r.study_description, r.series_description,
            ]
        )
    return buf.getvalue()


def manifest_from_csv(text: str) -> list[ManifestRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append(
            ManifestRow(
                patient_id=rec["patient_id"],
                scan_date=rec["scan_date"],
                series_number=int(rec["series_number"]),
                slice_number=int(rec["slice_number"]),
                sma_cm2=float(rec["sma_cm2"]),
                smi=float(rec["smi"]) if rec.get("smi") else None,
                uncertainty_value=float(rec["uncertainty_value"]),
                flagged=rec["flagged"] == "true",
                study_description=rec.get("study_description", ""),
                series_description=rec.get("series_description", ""),
            )
        )
    return rows


def errors_to_csv(rows: list[ErrorRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["case_id", "error_type", "detail"])
    for r in rows:
        writer.writerow([r.case_id, r.error_type, r.detail])
    return buf.getvalue()


def merge_corrections(rows: list[ManifestRow], corrections_csv: str) -> list[ManifestRow]:
    """Replace SMA (and proportionally SMI) for rows matched by patient and
    scan date in a corrected-SMA CSV."""
    corrections: dict[tuple[str, str], dict] = {}
    for rec in csv.DictReader(io.StringIO(corrections_csv)):
        corrections[(rec["patient_id"], rec["scan_date"])] = rec
    merged = []
    for row in rows:
        rec = corrections.get((row.patient_id, row.scan_date))
        if rec is None:
            merged.append(row)
            continue
        new_sma = float(rec["sma_cm2"])
        if rec.get("smi"):
            new_smi = float(rec["smi"])
        elif row.smi is not None and row.sma_cm2 > 0:
            new_smi = row.smi * new_sma / row.sma_cm2
        else:
            new_smi = None
        merged.append(replace(row, sma_cm2=new_sma, smi=new_smi))
    return merged


# --- longitudinal -----------------------------------------------------------


def emit_longitudinal(
    rows: list[ManifestRow],
    patients: list[str] | None = None,
    status_by_patient: dict[str, str] | None = None,
) -> tuple[str, str]:
    """(csv, svg) longitudinal series of SMA/SMI sorted by scan date.

    With a status map, the SVG gets one panel per status group; otherwise a
    single panel holds every patient.
    """
    by_patient: dict[str, list[ManifestRow]] = {}
    for row in rows:
        by_patient.setdefault(row.patient_id, []).append(row)
    if patients is not None:
        missing = [p for p in patients if p not in by_patient]
        if missing:
            raise UnknownPatient(f"no manifest rows for {missing}")
        by_patient = {p: by_patient[p] for p in patients}
    if not by_patient:
        raise UnknownPatient("no rows to plot")
    for series in by_patient.values():
        series.sort(key=lambda r: (r.scan_date, r.series_number))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["patient_id", "scan_date", "sma_cm2", "smi"])
    for patient in sorted(by_patient):
        for r in by_patient[patient]:
            writer.writerow(
                [patient, r.scan_date, repr(r.sma_cm2),
                 "" if r.smi is None else repr(r.smi)]
            )
    return buf.getvalue(), _longitudinal_svg(by_patient, status_by_patient)


def _value_of(row: ManifestRow) -> float:
    return row.smi if row.smi is not None else row.sma_cm2


def _longitudinal_svg(
    by_patient: dict[str, list[ManifestRow]],
    status_by_patient: dict[str, str] | None,
) -> str:
    import datetime as _dt

    groups: dict[str, list[str]] = {}
    for patient in sorted(by_patient):
        status = (status_by_patient or {}).get(patient, "all")
        groups.setdefault(status, []).append(patient)

    all_rows = [r for series in by_patient.values() for r in series]
    dates = [_dt.date.fromisoformat(r.scan_date).toordinal() for r in all_rows]
    values = [_value_of(r) for r in all_rows]
    x_lo, x_hi = min(dates), max(dates)
    y_lo, y_hi = min(values), max(values)
    x_span = (x_hi - x_lo) or 1
    y_span = (y_hi - y_lo) or 1.0

    panel_w, panel_h, margin = 380, 260, 45
    width = margin * 2 + panel_w
    height = len(groups) * (panel_h + margin) + margin
    unit = "SMI (cm^2/m^2)" if all(r.smi is not None for r in all_rows) else "SMA (cm^2)"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        "<style>text{font-family:sans-serif;font-size:11px}</style>",
    ]
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    for panel, status in enumerate(sorted(groups)):
        top = margin + panel * (panel_h + margin)
        parts.append(
            f'<text x="{margin}" y="{top - 8}">{status} ({unit})</text>'
        )
        parts.append(
            f'<rect x="{margin}" y="{top}" width="{panel_w}" height="{panel_h}" '
            f'fill="none" stroke="#999"/>'
        )
        for i, patient in enumerate(groups[status]):
            series = by_patient[patient]
            points = []
            for r in series:
                x = margin + panel_w * (
                    (_dt.date.fromisoformat(r.scan_date).toordinal() - x_lo) / x_span
                )
                y = top + panel_h * (1.0 - (_value_of(r) - y_lo) / y_span)
                points.append(f"{x:.2f},{y:.2f}")
            color = palette[i % len(palette)]
            parts.append(
                f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                f'data-patient="{patient}" points="{" ".join(points)}"/>'
            )
            for point in points:
                x, y = point.split(",")
                parts.append(
                    f'<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>'
                )
    parts.append("</svg>")
    return "\n".join(parts)
