"""Survival and correlation statistics: Pearson r with t-test significance,
ridge-penalized Cox proportional hazards with Efron tie handling, Harrell's
concordance index, BMI, and the two-stage cachexia rule.

Continuous covariates are z-scored before the penalized fit so the ridge
penalty acts uniformly; coefficients are reported in standardized units.
Categorical covariates are one-hot encoded against the first (sorted) level.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    Collinearity,
    ConstantInput,
    DegenerateR,
    LengthMismatch,
    NoAdmissiblePairs,
    NoEvents,
    NonConvergence,
    OutOfRange,
)

CONTINUOUS_COVARIATES = ("age", "weight_kg", "height_m", "bmi", "sma_cm2", "smi")
CATEGORICAL_COVARIATES = ("sex", "race", "ethnicity", "stage")


def bmi(weight_kg: float, height_m: float) -> float:
    """Body mass index in kg/m^2."""
    if not 20.0 < weight_kg < 300.0:
        raise OutOfRange(f"weight {weight_kg} kg outside (20, 300)")
    if not 0.5 < height_m < 2.5:
        raise OutOfRange(f"height {height_m} m outside (0.5, 2.5)")
    return weight_kg / (height_m * height_m)


def classify_cachexia_two_stage(weight_loss_pct_6mo: float, bmi_value: float) -> str:
    """Two-stage cachexia rule: loss above 5% at BMI >= 20, or above 2% at
    BMI < 20, over the prior six months."""
    if bmi_value >= 20.0:
        cachectic = weight_loss_pct_6mo > 5.0
    else:
        cachectic = weight_loss_pct_6mo > 2.0
    return "cachectic" if cachectic else "non_cachectic"


# --- correlation -------------------------------------------------------------


def pearson_r(x, y) -> float:
    """Product-moment correlation coefficient."""
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if xv.shape != yv.shape or xv.ndim != 1:
        raise LengthMismatch(f"shapes {xv.shape} vs {yv.shape}")
    if xv.size < 3:
        raise LengthMismatch(f"need n >= 3, got {xv.size}")
    xc = xv - xv.mean()
    yc = yv - yv.mean()
    sx = math.sqrt(float(np.dot(xc, xc)))
    sy = math.sqrt(float(np.dot(yc, yc)))
    if sx == 0.0 or sy == 0.0:
        raise ConstantInput("correlation undefined for a constant vector")
    r = float(np.dot(xc, yc)) / (sx * sy)
    return max(-1.0, min(1.0, r))


def _log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (Lentz's algorithm)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise NonConvergence("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) evaluated by the symmetric continued fraction."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = math.exp(a * math.log(x) + b * math.log(1.0 - x) - _log_beta(a, b))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, dof: int) -> float:
    """Two-sided tail probability of Student's t with dof degrees of freedom."""
    if dof < 1:
        raise OutOfRange(f"degrees of freedom must be >= 1, got {dof}")
    x = dof / (dof + t * t)
    return regularized_incomplete_beta(dof / 2.0, 0.5, x)


def corr_significance(r: float, n: int, alpha: float = 0.05) -> tuple[float, float, bool]:
    """(t statistic, two-sided p, significance at the 95% level) for a
    correlation coefficient observed on n pairs."""
    if n < 3:
        raise LengthMismatch(f"need n >= 3, got {n}")
    if not -1.0 <= r <= 1.0:
        raise OutOfRange(f"correlation {r} outside [-1, 1]")
    if abs(r) == 1.0:
        raise DegenerateR("perfect correlation: t is unbounded, p = 0")
    t = r * math.sqrt(n - 2) / math.sqrt(1.0 - r * r)
    p = student_t_two_sided_p(t, n - 2)
    return t, p, p < alpha


# --- covariate rows -----------------------------------------------------------


@dataclass(frozen=True)
class CovariateRow:
    """One subject's covariates with follow-up time and vital status."""

    age: float
    sex: str
    race: str
    ethnicity: str
    weight_kg: float
    height_m: float
    stage: str
    bmi: float
    sma_cm2: float
    smi: float
    time_to_event: float
    event_observed: bool


def covariate_rows_from_csv(text: str) -> list[CovariateRow]:
    """Read CovariateRow records; a missing bmi column value is derived from
    weight and height, and a present one must agree with them."""
    rows: list[CovariateRow] = []
    reader = csv.DictReader(io.StringIO(text))
    for i, rec in enumerate(reader):
        weight = float(rec["weight_kg"])
        height = float(rec["height_m"])
        derived = weight / (height * height)
        raw_bmi = (rec.get("bmi") or "").strip()
        if raw_bmi:
            value = float(raw_bmi)
            if abs(value - derived) > 1e-6:
                raise OutOfRange(
                    f"row {i}: bmi {value} inconsistent with weight/height ({derived:.6f})"
                )
        else:
            value = derived
        event_raw = rec["event_observed"].strip().lower()
        rows.append(
            CovariateRow(
                age=float(rec["age"]),
                sex=rec["sex"].strip(),
                race=rec["race"].strip(),
                ethnicity=rec["ethnicity"].strip(),
                weight_kg=weight,
                height_m=height,
                stage=rec["stage"].strip(),
                bmi=value,
                sma_cm2=float(rec["sma_cm2"]),
                smi=float(rec["smi"]),
                time_to_event=float(rec["time_to_event"]),
                event_observed=event_raw in ("1", "true", "yes"),
            )
        )
    return rows


@dataclass
class DesignMatrix:
    """Standardized covariate matrix with the encoding captured for reuse."""

    values: np.ndarray
    columns: list[str]
    means: np.ndarray
    stds: np.ndarray
    categorical_levels: dict[str, list[str]]

    def transform_rows(self, rows: list[CovariateRow]) -> np.ndarray:
        return (_raw_matrix(rows, self.columns) - self.means) / self.stds


def _raw_matrix(rows: list[CovariateRow], columns: list[str]) -> np.ndarray:
    out = np.zeros((len(rows), len(columns)))
    for j, name in enumerate(columns):
        if "=" in name:
            cat, level = name.split("=", 1)
            out[:, j] = [1.0 if getattr(r, cat) == level else 0.0 for r in rows]
        else:
            out[:, j] = [getattr(r, name) for r in rows]
    return out


def build_design_matrix(
    rows: list[CovariateRow],
    include: tuple[str, ...] | None = None,
) -> DesignMatrix:
    """Encode covariates: continuous columns z-scored (constant columns kept
    at zero), categoricals one-hot against the first sorted level."""
    levels = {
        name: sorted({getattr(r, name) for r in rows}) for name in CATEGORICAL_COVARIATES
    }
    columns = [c for c in CONTINUOUS_COVARIATES if include is None or c in include]
    for name in CATEGORICAL_COVARIATES:
        if include is not None and name not in include:
            continue
        columns.extend(f"{name}={level}" for level in levels[name][1:])
    raw = _raw_matrix(rows, columns)
    means = raw.mean(axis=0)
    stds = raw.std(axis=0)
    stds[stds == 0.0] = 1.0
    return DesignMatrix(
        values=(raw - means) / stds,
        columns=columns,
        means=means,
        stds=stds,
        categorical_levels=levels,
    )


# --- Cox proportional hazards --------------------------------------------------


@dataclass
class CoxModel:
    coefficients: dict[str, float]
    penalizer: float
    covariate_means: dict[str, float]
    covariate_stds: dict[str, float]
    categorical_levels: dict[str, list[str]]
    log_likelihood: float
    iterations: int
    final_gradient_norm: float
    fitted: bool = field(default=True)

    def risk_scores(self, rows: list[CovariateRow]) -> np.ndarray:
        """Linear predictor beta . x for standardized covariates."""
        columns = list(self.coefficients)
        raw = _raw_matrix(rows, columns)
        means = np.array([self.covariate_means[c] for c in columns])
        stds = np.array([self.covariate_stds[c] for c in columns])
        beta = np.array([self.coefficients[c] for c in columns])
        return ((raw - means) / stds) @ beta


def _efron_loglik(
    x: np.ndarray, time: np.ndarray, event: np.ndarray, beta: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Efron-corrected partial log-likelihood with gradient and Hessian.

    Processes unique times in descending order, accumulating risk-set sums
    incrementally; ties at an event time share the risk-set adjustment in
    equal fractions.
    """
    n, d = x.shape
    order = np.argsort(-time, kind="stable")
    xs, ts, es = x[order], time[order], event[order]
    phi = np.exp(xs @ beta)
    phi_x = phi[:, None] * xs

    loglik = 0.0
    gradient = np.zeros(d)
    hessian = np.zeros((d, d))
    risk_phi = 0.0
    risk_phi_x = np.zeros(d)
    risk_phi_xx = np.zeros((d, d))

    i = 0
    while i < n:
        j = i
        tie_phi = 0.0
        tie_phi_x = np.zeros(d)
        tie_phi_xx = np.zeros((d, d))
        x_event_sum = np.zeros(d)
        n_events = 0
        while j < n and ts[j] == ts[i]:
            contrib_xx = np.outer(xs[j], phi_x[j])
            risk_phi += phi[j]
            risk_phi_x += phi_x[j]
            risk_phi_xx += contrib_xx
            if es[j]:
                tie_phi += phi[j]
                tie_phi_x += phi_x[j]
                tie_phi_xx += contrib_xx
                x_event_sum += xs[j]
                n_events += 1
            j += 1
        if n_events:
            frac = np.arange(n_events) / n_events
            denom = risk_phi - frac * tie_phi  # (D,)
            numer = risk_phi_x[None, :] - frac[:, None] * tie_phi_x[None, :]  # (D, d)
            loglik += float(x_event_sum @ beta) - float(np.log(denom).sum())
            weighted = numer / denom[:, None]
            gradient += x_event_sum - weighted.sum(axis=0)
            a1 = (
                risk_phi_xx[None, :, :] - frac[:, None, None] * tie_phi_xx[None, :, :]
            ) / denom[:, None, None]
            hessian -= a1.sum(axis=0) - weighted.T @ weighted
        i = j
    return loglik, gradient, hessian


def fit_coxph(
    rows: list[CovariateRow],
    penalizer: float = 0.0,
    include: tuple[str, ...] | None = None,
    tol: float = 1e-7,
    max_iter: int = 500,
) -> CoxModel:
    """Maximize the Efron partial log-likelihood minus (penalizer/2)*|beta|^2
    by Newton-Raphson with step halving."""
    if penalizer < 0:
        raise OutOfRange(f"penalizer must be >= 0, got {penalizer}")
    events = sum(1 for r in rows if r.event_observed)
    if events < 2:
        raise NoEvents(f"need at least 2 observed events, got {events}")

    design = build_design_matrix(rows, include=include)
    x = design.values
    time = np.array([r.time_to_event for r in rows])
    event = np.array([r.event_observed for r in rows], dtype=bool)
    n, d = x.shape

    beta = np.zeros(d)
    loglik, gradient, hessian = _efron_loglik(x, time, event, beta)
    penalized = loglik - 0.5 * penalizer * float(beta @ beta)
    grad_norm = float("inf")
    for iteration in range(1, max_iter + 1):
        grad_pen = gradient - penalizer * beta
        grad_norm = float(np.max(np.abs(grad_pen))) if d else 0.0
        if grad_norm < tol:
            return CoxModel(
                coefficients=dict(zip(design.columns, beta.tolist())),
                penalizer=penalizer,
                covariate_means=dict(zip(design.columns, design.means.tolist())),
                covariate_stds=dict(zip(design.columns, design.stds.tolist())),
                categorical_levels=design.categorical_levels,
                log_likelihood=loglik,
                iterations=iteration - 1,
                final_gradient_norm=grad_norm,
            )
        info = -(hessian - penalizer * np.eye(d))
        try:
            step = np.linalg.solve(info, grad_pen)
        except np.linalg.LinAlgError:
            raise Collinearity(_null_space_columns(info, design.columns)) from None
        # Step halving keeps the penalized likelihood from decreasing.
        scale = 1.0
        for _ in range(40):
            candidate = beta + scale * step
            loglik_c, gradient_c, hessian_c = _efron_loglik(x, time, event, candidate)
            penalized_c = loglik_c - 0.5 * penalizer * float(candidate @ candidate)
            if math.isfinite(penalized_c) and penalized_c >= penalized - 1e-12:
                beta, loglik, gradient, hessian = candidate, loglik_c, gradient_c, hessian_c
                penalized = penalized_c
                break
            scale *= 0.5
        else:
            raise NonConvergence(
                "step halving failed to improve the penalized likelihood",
                gradient_norm=grad_norm,
            )
    raise NonConvergence(
        f"Cox fit did not converge in {max_iter} iterations",
        gradient_norm=grad_norm,
    )


def _null_space_columns(info: np.ndarray, columns: list[str]) -> list[str]:
    _, _, vt = np.linalg.svd(info)
    null_vec = np.abs(vt[-1])
    cutoff = 1e-6 * max(null_vec.max(), 1e-30)
    return [c for c, w in zip(columns, null_vec) if w > cutoff]


# --- concordance ----------------------------------------------------------------


class _Fenwick:
    """Point-update prefix-sum tree over rank indices."""

    def __init__(self, size: int):
        self.tree = [0] * (size + 1)

    def add(self, i: int) -> None:
        i += 1
        while i < len(self.tree):
            self.tree[i] += 1
            i += i & (-i)

    def prefix(self, i: int) -> int:
        # count of items with rank < i
        total = 0
        while i > 0:
            total += self.tree[i]
            i -= i & (-i)
        return total


def concordance_index(times, events, risk_scores) -> float:
    """Harrell's C over admissible pairs.

    A pair is admissible when the strictly smaller time carries an observed
    event; it is concordant when the shorter time has the higher risk, and
    risk ties count one half. Runs in O(n log n) via a Fenwick tree over
    risk ranks.
    """
    t = np.asarray(times, dtype=np.float64)
    e = np.asarray(events, dtype=bool)
    r = np.asarray(risk_scores, dtype=np.float64)
    if not (t.shape == e.shape == r.shape) or t.ndim != 1:
        raise LengthMismatch(
            f"shapes differ: times {t.shape}, events {e.shape}, risks {r.shape}"
        )
    n = t.size
    ranks = {v: i for i, v in enumerate(np.unique(r))}
    rank = np.array([ranks[v] for v in r])
    tree = _Fenwick(len(ranks))

    order = np.argsort(t, kind="stable")
    concordant = 0.0
    admissible = 0
    seen = 0  # event subjects already inserted (all strictly earlier times)
    i = 0
    while i < n:
        j = i
        while j < n and t[order[j]] == t[order[i]]:
            j += 1
        for k in range(i, j):
            idx = order[k]
            below = tree.prefix(rank[idx])  # earlier events with lower risk
            at = tree.prefix(rank[idx] + 1) - below
            above = seen - below - at
            admissible += seen
            concordant += above + 0.5 * at
        for k in range(i, j):
            idx = order[k]
            if e[idx]:
                tree.add(rank[idx])
                seen += 1
        i = j
    if admissible == 0:
        raise NoAdmissiblePairs("no pair has an observed event at the smaller time")
    return concordant / admissible
