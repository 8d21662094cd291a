"""Ensemble uncertainty metrics and logistic (Platt) probability calibration.

The nine scalar metrics split into total-uncertainty probabilities (average
predicted-class probability, raw and calibrated, overall and muscle-only),
epistemic spread (pixel-wise and SMA coefficients of variation, average
variance overall and muscle-only), and entropies in bits (entropy of the
mean map vs the across-member mean of per-member entropies). Standard
deviations and variances use the population (N-denominator) convention
throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dicom import SliceHeader
from .errors import (
    DimensionMismatch,
    DomainError,
    LengthMismatch,
    NonConvergence,
    SingleClass,
    Unfitted,
)
from .fusion import FUSION_THRESHOLD, MuscleMask, ProbabilityStack, export_gray_map

_LOGIT_CLAMP = 1e-7
_COV_MEAN_FLOOR = 1e-7


def binary_entropy(p):
    """Binary entropy in bits, elementwise; 0*log(0) is taken as 0.

    Accepts scalars or arrays in [0, 1]; raises DomainError outside.
    """
    arr = np.asarray(p, dtype=np.float64)
    if np.isnan(arr).any() or arr.min() < 0.0 or arr.max() > 1.0:
        raise DomainError("binary entropy requires probabilities in [0, 1]")
    out = np.zeros_like(arr)
    interior = (arr > 0.0) & (arr < 1.0)
    q = arr[interior]
    out[interior] = -(q * np.log2(q) + (1.0 - q) * np.log2(1.0 - q))
    if np.ndim(p) == 0:
        return float(out)
    return out


def _sigmoid(z):
    arr = np.asarray(z, dtype=np.float64)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ez = np.exp(arr[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _logit(p):
    q = np.clip(p, _LOGIT_CLAMP, 1.0 - _LOGIT_CLAMP)
    return np.log(q / (1.0 - q))


@dataclass
class CalibrationModel:
    """Logistic map on the logit scale: calibrated = sigmoid(a*logit(p)+b)."""

    a: float = 1.0
    b: float = 0.0
    fitted: bool = False

    def to_json(self) -> str:
        return json.dumps({"a": self.a, "b": self.b})

    @classmethod
    def from_json(cls, text: str) -> "CalibrationModel":
        obj = json.loads(text)
        return cls(a=float(obj["a"]), b=float(obj["b"]), fitted=True)


def fit_platt(scores, labels, tol: float = 1e-8, max_iter: int = 100) -> CalibrationModel:
    """Fit (a, b) by Newton iterations on the Bernoulli log-likelihood.

    Scores must lie strictly inside (0, 1) and both label classes must be
    present. Convergence is an infinity-norm gradient below tol.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise LengthMismatch(f"scores {s.shape} vs labels {y.shape}")
    if s.size < 2:
        raise SingleClass("need at least two samples")
    if np.min(s) <= 0.0 or np.max(s) >= 1.0:
        raise DomainError("scores must lie strictly inside (0, 1)")
    if not ((y == 0).any() and (y == 1).any()):
        raise SingleClass("both classes must be present")

    z = _logit(s)
    a, b = 1.0, 0.0
    for _ in range(max_iter):
        p = _sigmoid(a * z + b)
        residual = p - y
        grad = np.array([np.dot(residual, z), residual.sum()])
        if np.max(np.abs(grad)) < tol:
            return CalibrationModel(a=a, b=b, fitted=True)
        w = p * (1.0 - p)
        h_aa = np.dot(w, z * z)
        h_ab = np.dot(w, z)
        h_bb = w.sum()
        det = h_aa * h_bb - h_ab * h_ab
        if det <= 0 or not math.isfinite(det):
            raise NonConvergence(
                "singular Hessian in calibration fit",
                gradient_norm=float(np.max(np.abs(grad))),
            )
        da = (h_bb * grad[0] - h_ab * grad[1]) / det
        db = (-h_ab * grad[0] + h_aa * grad[1]) / det
        a, b = a - da, b - db
    p = _sigmoid(a * z + b)
    grad_norm = float(np.max(np.abs([np.dot(p - y, z), (p - y).sum()])))
    if grad_norm < tol:
        return CalibrationModel(a=a, b=b, fitted=True)
    raise NonConvergence(
        f"calibration fit did not converge in {max_iter} iterations",
        gradient_norm=grad_norm,
    )


def apply_platt(model: CalibrationModel, p):
    """Calibrate probabilities through a fitted model; input is clamped away
    from {0, 1} before the logit."""
    if not model.fitted:
        raise Unfitted("calibration model has not been fitted")
    out = _sigmoid(model.a * _logit(np.asarray(p, dtype=np.float64)) + model.b)
    if np.ndim(p) == 0:
        return float(out)
    return out


def fit_platt_from_csv(text: str) -> CalibrationModel:
    """Fit calibration from a held-out pairs CSV with score,label columns."""
    import csv
    import io

    scores, labels = [], []
    for rec in csv.DictReader(io.StringIO(text)):
        scores.append(float(rec["score"]))
        labels.append(int(rec["label"]))
    return fit_platt(scores, labels)


@dataclass(frozen=True)
class UncertaintyReport:
    avg_probability: float
    avg_probability_sm: float | None
    avg_calibrated_probability: float | None
    cov_pixelwise_pct: float
    cov_sma_pct: float
    avg_variance: float
    avg_variance_sm: float | None
    avg_entropy: float
    expected_entropy: float
    uncertainty_map: np.ndarray  # per-pixel across-member variance

    def metric(self, name: str) -> float | None:
        return getattr(self, name)


def _members(stack: ProbabilityStack) -> np.ndarray:
    """Member maps for uncertainty purposes: the iteration means for a
    two-level stack, the raw maps otherwise."""
    if stack.layout == "two_level":
        grouped = stack.maps.reshape(stack.iterations, stack.folds, *stack.maps.shape[1:])
        return grouped.mean(axis=1)
    return stack.maps


def compute_report(
    stack: ProbabilityStack,
    mask: MuscleMask,
    per_member_sma: list[float],
    calibration: CalibrationModel | None = None,
) -> UncertaintyReport:
    """All nine uncertainty metrics plus the pixel-wise variance map.

    An empty mask leaves the muscle-restricted metrics absent (None); the
    calibrated probability is absent without a calibration model.
    """
    members = _members(stack)
    if members.shape[1:] != mask.pixels.shape:
        raise DimensionMismatch(
            f"stack {members.shape[1:]} vs mask {mask.pixels.shape}"
        )
    if len(per_member_sma) != members.shape[0]:
        raise LengthMismatch(
            f"{len(per_member_sma)} SMA values for {members.shape[0]} members"
        )

    mean_map = members.mean(axis=0)
    variance_map = members.var(axis=0)
    mask_pixels = mask.pixels

    predicted_class_prob = np.maximum(mean_map, 1.0 - mean_map)
    avg_probability = float(predicted_class_prob.mean())

    avg_probability_sm = None
    avg_variance_sm = None
    if mask.pixel_count > 0:
        avg_probability_sm = float(predicted_class_prob[mask_pixels].mean())
        avg_variance_sm = float(variance_map[mask_pixels].mean())

    avg_calibrated_probability = None
    if calibration is not None:
        calibrated = apply_platt(calibration, mean_map)
        avg_calibrated_probability = float(np.maximum(calibrated, 1.0 - calibrated).mean())

    std_map = np.sqrt(variance_map)
    safe = mean_map >= _COV_MEAN_FLOOR
    cov_map = np.zeros_like(mean_map)
    cov_map[safe] = 100.0 * std_map[safe] / mean_map[safe]
    cov_pixelwise_pct = float(cov_map.mean())

    sma_arr = np.asarray(per_member_sma, dtype=np.float64)
    sma_mean = float(sma_arr.mean())
    cov_sma_pct = 0.0 if abs(sma_mean) < 1e-12 else float(100.0 * sma_arr.std() / sma_mean)

    avg_entropy = float(binary_entropy(mean_map).mean())
    expected_entropy = float(
        np.mean([binary_entropy(member).mean() for member in members])
    )

    variance_map = np.ascontiguousarray(variance_map)
    variance_map.setflags(write=False)
    return UncertaintyReport(
        avg_probability=avg_probability,
        avg_probability_sm=avg_probability_sm,
        avg_calibrated_probability=avg_calibrated_probability,
        cov_pixelwise_pct=cov_pixelwise_pct,
        cov_sma_pct=cov_sma_pct,
        avg_variance=float(variance_map.mean()),
        avg_variance_sm=avg_variance_sm,
        avg_entropy=avg_entropy,
        expected_entropy=expected_entropy,
        uncertainty_map=variance_map,
    )


def per_member_masks(stack: ProbabilityStack) -> list[np.ndarray]:
    """Threshold each member map individually (strictly above 0.5); members
    are iteration means for two-level stacks."""
    return [m > FUSION_THRESHOLD for m in _members(stack)]


def export_uncertainty_map(
    report: UncertaintyReport, template: SliceHeader
) -> tuple[bytes, bytes]:
    """(png, dicom) renderings of the min-max scaled variance map."""
    return export_gray_map(report.uncertainty_map, template)
