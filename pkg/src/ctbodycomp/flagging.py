"""Threshold flagging of expected high-error cases and quadrant summaries.

Flagging is a strict exceedance test on a configured uncertainty metric;
thresholds are per-dataset configuration, with a quantile helper for picking
one from observed values.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

DEFAULT_METRIC = "avg_variance"
DEFAULT_DIFF_THRESHOLD_PCT = 2.5


@dataclass(frozen=True)
class FlagDecision:
    case_id: str
    metric_name: str
    metric_value: float
    threshold: float
    flagged: bool


@dataclass(frozen=True)
class QuadrantSummary:
    low_diff_low_unc: int
    low_diff_high_unc: int
    high_diff_low_unc: int
    high_diff_high_unc: int
    diff_threshold_pct: float
    uncertainty_threshold: float

    @property
    def total(self) -> int:
        return (self.low_diff_low_unc + self.low_diff_high_unc
                + self.high_diff_low_unc + self.high_diff_high_unc)


def flag_cases(
    values: list[tuple[str, float]],
    threshold: float,
    metric_name: str = DEFAULT_METRIC,
) -> list[FlagDecision]:
    """Flag every case whose metric value strictly exceeds the threshold.

    Infinite thresholds are legal (minus infinity flags everything); NaN is
    rejected because exceedance would be vacuously false.
    """
    if threshold != threshold:
        raise ValueError("threshold must not be NaN")
    return [
        FlagDecision(
            case_id=case_id,
            metric_name=metric_name,
            metric_value=value,
            threshold=threshold,
            flagged=value > threshold,
        )
        for case_id, value in values
    ]


def quadrant_summary(
    cases: list[tuple[float, float]],
    diff_threshold_pct: float = DEFAULT_DIFF_THRESHOLD_PCT,
    uncertainty_threshold: float = 0.0,
) -> QuadrantSummary:
    """Partition (|area diff %|, uncertainty) pairs into the four quadrants
    via strict exceedance on both axes."""
    counts = {"ll": 0, "lh": 0, "hl": 0, "hh": 0}
    for diff, unc in cases:
        high_diff = diff > diff_threshold_pct
        high_unc = unc > uncertainty_threshold
        key = ("h" if high_diff else "l") + ("h" if high_unc else "l")
        counts[key] += 1
    return QuadrantSummary(
        low_diff_low_unc=counts["ll"],
        low_diff_high_unc=counts["lh"],
        high_diff_low_unc=counts["hl"],
        high_diff_high_unc=counts["hh"],
        diff_threshold_pct=diff_threshold_pct,
        uncertainty_threshold=uncertainty_threshold,
    )


def quantile_threshold(values: list[float], top_fraction: float) -> float:
    """Threshold so that roughly the top `top_fraction` of values exceed it."""
    if not values:
        raise ValueError("no values to take a quantile of")
    if not 0.0 < top_fraction < 1.0:
        raise ValueError(f"top_fraction must be in (0, 1), got {top_fraction}")
    return float(np.quantile(np.asarray(values, dtype=np.float64), 1.0 - top_fraction))


def flags_to_csv(decisions: list[FlagDecision]) -> str:
    """CSV flag report: case_id, metric_name, metric_value, threshold, flagged."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["case_id", "metric_name", "metric_value", "threshold", "flagged"])
    for d in decisions:
        writer.writerow(
            [d.case_id, d.metric_name, repr(d.metric_value), repr(d.threshold),
             str(d.flagged).lower()]
        )
    return buf.getvalue()
