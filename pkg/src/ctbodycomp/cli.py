"""Command-line entry points.

    ctbodycomp pipeline run --config run.toml
    ctbodycomp pipeline longitudinal --manifest manifest.csv ...
    ctbodycomp stats cox --input covariates.csv --penalizer 0.1,0.5,1.0
    ctbodycomp predict train --preset cachexia --input features.csv --seed 7
    ctbodycomp phantom generate --spec phantom.toml --out studies/

Exit codes: 0 success, 2 partial per-study failures, 1 fatal.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import CtBodyCompError
from .phantom import PhantomSpec, generate_study, write_study
from .pipeline import (
    RunConfig,
    emit_longitudinal,
    manifest_from_csv,
    merge_corrections,
    run_pipeline,
)
from .predictor import cachexia_spec, recurrence_spec, train_with_oversampling
from .stats import concordance_index, covariate_rows_from_csv, fit_coxph
from .uncertainty import fit_platt_from_csv

DEFAULT_PENALIZERS = (0.1, 0.5, 1.0, 1.5, 2.0)


def _cmd_pipeline_run(args) -> int:
    config = RunConfig.from_toml(Path(args.config))
    result = run_pipeline(config)
    print(f"processed {len(result.manifest)} studies, {len(result.errors)} failed")
    for err in result.errors:
        print(f"  {err.case_id}: {err.error_type}: {err.detail}")
    if result.errors and result.manifest:
        return 2
    if result.errors:
        return 1
    return 0


def _cmd_pipeline_longitudinal(args) -> int:
    rows = manifest_from_csv(Path(args.manifest).read_text())
    if args.corrections:
        rows = merge_corrections(rows, Path(args.corrections).read_text())
    status = None
    if args.status_csv:
        status = {}
        for rec in csv.DictReader(io.StringIO(Path(args.status_csv).read_text())):
            status[rec["patient_id"]] = rec["status"]
    csv_text, svg_text = emit_longitudinal(
        rows, patients=args.patient or None, status_by_patient=status
    )
    Path(args.out_csv).write_text(csv_text)
    Path(args.out_svg).write_text(svg_text)
    print(f"wrote {args.out_csv} and {args.out_svg}")
    return 0


def merge_covariate_corrections(covariates_csv: str, corrections_csv: str) -> str:
    """Replace per-patient SMA (and derived SMI) in a covariate CSV.

    The covariate CSV must carry a patient_id column for matching; with
    several correction rows per patient the earliest scan_date wins
    (diagnosis-time value). SMI is rescaled proportionally unless the
    correction row supplies one.
    """
    corrections: dict[str, dict] = {}
    for rec in csv.DictReader(io.StringIO(corrections_csv)):
        key = rec["patient_id"]
        kept = corrections.get(key)
        if kept is None or rec.get("scan_date", "") < kept.get("scan_date", ""):
            corrections[key] = rec

    reader = csv.DictReader(io.StringIO(covariates_csv))
    fieldnames = list(reader.fieldnames or [])
    rows = list(reader)
    if "patient_id" not in fieldnames:
        raise CtBodyCompError(
            "--corrections needs a patient_id column in the covariate CSV"
        )
    for row in rows:
        rec = corrections.get(row["patient_id"])
        if rec is None:
            continue
        old_sma = float(row["sma_cm2"])
        new_sma = float(rec["sma_cm2"])
        row["sma_cm2"] = repr(new_sma)
        if rec.get("smi"):
            row["smi"] = rec["smi"]
        elif row.get("smi") and old_sma > 0:
            row["smi"] = repr(float(row["smi"]) * new_sma / old_sma)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _cmd_stats_cox(args) -> int:
    text = Path(args.input).read_text()
    if args.corrections:
        text = merge_covariate_corrections(text, Path(args.corrections).read_text())
    rows = covariate_rows_from_csv(text)
    include = tuple(args.include.split(",")) if args.include else None

    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(rows))
    cut = max(2, int(round(args.split * len(rows))))
    train_rows = [rows[i] for i in order[:cut]]
    test_rows = [rows[i] for i in order[cut:]]

    results = []
    for penalizer in (float(p) for p in args.penalizer.split(",")):
        model = fit_coxph(train_rows, penalizer=penalizer, include=include)
        train_c = concordance_index(
            [r.time_to_event for r in train_rows],
            [r.event_observed for r in train_rows],
            model.risk_scores(train_rows),
        )
        if test_rows:
            test_c = concordance_index(
                [r.time_to_event for r in test_rows],
                [r.event_observed for r in test_rows],
                model.risk_scores(test_rows),
            )
        else:
            test_c = None
        results.append(
            {
                "penalizer": penalizer,
                "coefficients": model.coefficients,
                "concordance_train": train_c,
                "concordance_test": test_c,
            }
        )
        shown = "n/a" if test_c is None else f"{test_c:.3f}"
        print(f"penalizer {penalizer}: train C {train_c:.3f}, test C {shown}")
    out = json.dumps(results, indent=2)
    if args.out:
        Path(args.out).write_text(out)
    else:
        print(out)
    return 0


def _cmd_stats_calibrate(args) -> int:
    model = fit_platt_from_csv(Path(args.input).read_text())
    Path(args.out).write_text(model.to_json())
    print(f"fitted calibration a={model.a:.4f} b={model.b:.4f} -> {args.out}")
    return 0


def _read_features(path: Path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Feature CSV: a numeric matrix plus a {0,1} `label` column."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = [n for n in reader.fieldnames or [] if n != "label"]
        xs, ys = [], []
        for rec in reader:
            xs.append([float(rec[n]) for n in names])
            ys.append(float(rec["label"]))
    return np.asarray(xs), np.asarray(ys), names


def _cmd_predict_train(args) -> int:
    features, labels, names = _read_features(Path(args.input))
    spec = (cachexia_spec if args.preset == "cachexia" else recurrence_spec)(args.seed)
    model, history, report = train_with_oversampling(spec, features, labels)
    print(
        f"{args.preset}: {len(history)} epochs, final loss {history[-1]:.4f}, "
        f"val accuracy {report.accuracy:.3f}"
    )
    if args.out:
        Path(args.out).write_text(model.to_json())
    if args.report:
        Path(args.report).write_text(report.to_json())
    return 0


def _phantom_spec_from_table(table: dict, seed: int, patient_id: str,
                             study_date: _dt.date) -> PhantomSpec:
    return PhantomSpec(
        rows=int(table.get("rows", 192)),
        cols=int(table.get("cols", 192)),
        pixel_spacing_mm=tuple(table.get("pixel_spacing_mm", (0.8, 0.8))),
        r_inner_mm=float(table.get("r_inner_mm", 40.0)),
        r_outer_mm=float(table.get("r_outer_mm", 60.0)),
        slice_count=int(table.get("slice_count", 40)),
        l3_range=tuple(table.get("l3_range", (18, 30))),
        noise_sigma_hu=float(table.get("noise_sigma_hu", 0.0)),
        ensemble_members=int(table.get("ensemble_members", 5)),
        perturb_sigma=float(table.get("perturb_sigma", 0.0)),
        seed=seed,
        patient_id=patient_id,
        study_date=study_date,
    )


def _cmd_phantom_generate(args) -> int:
    with open(args.spec, "rb") as fh:
        table = tomllib.load(fh).get("phantom", {})
    count = int(table.get("count", 1))
    scans = int(table.get("scans_per_patient", 1))
    base_seed = int(table.get("seed", 0))
    base_date = _dt.date.fromisoformat(table.get("study_date", "2024-01-15"))
    out = Path(args.out)
    written = []
    for i in range(count):
        patient = f"PHANTOM-{i + 1:03d}"
        for scan in range(scans):
            spec = _phantom_spec_from_table(
                table,
                seed=base_seed + i * 1000 + scan,
                patient_id=patient,
                study_date=base_date + _dt.timedelta(days=183 * scan),
            )
            if scan:
                # Longitudinal muscle loss: shrink the outer radius 2% per scan.
                spec = PhantomSpec(
                    **{**spec.__dict__, "r_outer_mm": spec.r_outer_mm * (1 - 0.02 * scan)}
                )
            study = generate_study(spec)
            written.append(write_study(study, out))
    print(f"wrote {len(written)} studies under {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctbodycomp", description=__doc__)
    sub = parser.add_subparsers(dest="group", required=True)

    pipe = sub.add_parser("pipeline", help="study processing and longitudinal output")
    pipe_sub = pipe.add_subparsers(dest="command", required=True)
    run = pipe_sub.add_parser("run", help="process every study under input_root")
    run.add_argument("--config", required=True, help="TOML run configuration")
    run.set_defaults(func=_cmd_pipeline_run)
    longi = pipe_sub.add_parser("longitudinal", help="per-patient SMA/SMI series")
    longi.add_argument("--manifest", required=True)
    longi.add_argument("--out-csv", default="longitudinal.csv")
    longi.add_argument("--out-svg", default="longitudinal.svg")
    longi.add_argument("--status-csv", help="CSV patient_id,status for panel grouping")
    longi.add_argument("--corrections", help="corrected-SMA CSV to merge first")
    longi.add_argument("--patient", action="append", help="restrict to patient (repeatable)")
    longi.set_defaults(func=_cmd_pipeline_longitudinal)

    stats = sub.add_parser("stats", help="survival statistics")
    stats_sub = stats.add_subparsers(dest="command", required=True)
    cox = stats_sub.add_parser("cox", help="penalized Cox PH with concordance")
    cox.add_argument("--input", required=True, help="CovariateRow CSV")
    cox.add_argument("--penalizer", default=",".join(str(p) for p in DEFAULT_PENALIZERS))
    cox.add_argument("--include", help="comma list of covariates to keep")
    cox.add_argument("--split", type=float, default=0.8)
    cox.add_argument("--seed", type=int, default=0)
    cox.add_argument("--corrections",
                     help="corrected-SMA CSV merged by patient_id before fitting")
    cox.add_argument("--out", help="write results JSON here")
    cox.set_defaults(func=_cmd_stats_cox)
    calibrate = stats_sub.add_parser(
        "calibrate", help="fit Platt calibration from score,label pairs"
    )
    calibrate.add_argument("--input", required=True, help="CSV with score,label columns")
    calibrate.add_argument("--out", required=True, help="write model JSON here")
    calibrate.set_defaults(func=_cmd_stats_calibrate)

    predict = sub.add_parser("predict", help="MLP classifiers")
    predict_sub = predict.add_subparsers(dest="command", required=True)
    train = predict_sub.add_parser("train", help="train a preset classifier")
    train.add_argument("--preset", choices=("cachexia", "recurrence"), required=True)
    train.add_argument("--input", required=True, help="feature CSV with a label column")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--out", help="write model JSON here")
    train.add_argument("--report", help="write evaluation JSON here")
    train.set_defaults(func=_cmd_predict_train)

    phantom = sub.add_parser("phantom", help="synthetic test studies")
    phantom_sub = phantom.add_subparsers(dest="command", required=True)
    gen = phantom_sub.add_parser("generate", help="write phantom studies to disk")
    gen.add_argument("--spec", required=True, help="TOML phantom spec")
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=_cmd_phantom_generate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CtBodyCompError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
