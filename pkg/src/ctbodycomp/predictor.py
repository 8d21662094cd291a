"""MLP binary classifiers with SMOTE oversampling and evaluation.

Full-batch Adam on mean binary cross-entropy; hidden layers are affine ->
ReLU -> inverted dropout, the output is affine -> sigmoid. Training is
bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    LengthMismatch,
    NonFiniteLoss,
    ShapeMismatch,
    SingleClass,
    TooFewMinority,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
SMOTE_NEIGHBORS = 5
TRAIN_SPLIT = 0.85


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    dropout_probs: tuple[float, ...]
    epochs: int
    learning_rate: float
    seed: int

    def __post_init__(self):
        if len(self.layer_widths) != len(self.dropout_probs):
            raise ShapeMismatch(
                f"{len(self.layer_widths)} widths vs {len(self.dropout_probs)} dropouts"
            )
        if any(w <= 0 for w in self.layer_widths):
            raise ShapeMismatch(f"non-positive hidden width in {self.layer_widths}")
        if any(not 0.0 <= p < 1.0 for p in self.dropout_probs):
            raise ShapeMismatch(f"dropout probabilities {self.dropout_probs} outside [0, 1)")


def cachexia_spec(seed: int = 0) -> MlpSpec:
    return MlpSpec((256, 128, 32), (0.2, 0.2, 0.5), epochs=50, learning_rate=5e-5, seed=seed)


def recurrence_spec(seed: int = 0) -> MlpSpec:
    return MlpSpec((64, 32, 16), (0.75, 0.5, 0.65), epochs=200, learning_rate=5e-4, seed=seed)


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    spec: MlpSpec
    feature_means: np.ndarray
    feature_stds: np.ndarray
    trained: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "spec": {
                    "layer_widths": list(self.spec.layer_widths),
                    "dropout_probs": list(self.spec.dropout_probs),
                    "epochs": self.spec.epochs,
                    "learning_rate": self.spec.learning_rate,
                    "seed": self.spec.seed,
                },
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases],
                "feature_means": self.feature_means.tolist(),
                "feature_stds": self.feature_stds.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MlpModel":
        obj = json.loads(text)
        spec = MlpSpec(
            tuple(obj["spec"]["layer_widths"]),
            tuple(obj["spec"]["dropout_probs"]),
            obj["spec"]["epochs"],
            obj["spec"]["learning_rate"],
            obj["spec"]["seed"],
        )
        return cls(
            weights=[np.asarray(w, dtype=np.float64) for w in obj["weights"]],
            biases=[np.asarray(b, dtype=np.float64) for b in obj["biases"]],
            spec=spec,
            feature_means=np.asarray(obj["feature_means"], dtype=np.float64),
            feature_stds=np.asarray(obj["feature_stds"], dtype=np.float64),
            trained=True,
        )


def _init_params(
    spec: MlpSpec, input_dim: int, rng: np.random.Generator
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    widths = [input_dim, *spec.layer_widths, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _forward(
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    x: np.ndarray,
    dropout_probs: tuple[float, ...],
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Forward pass returning logits plus per-layer activations and dropout
    masks for backprop. rng None means inference (no dropout)."""
    activations = [x]
    masks: list[np.ndarray] = []
    h = x
    for layer, (w, b) in enumerate(zip(weights[:-1], biases[:-1])):
        h = np.maximum(h @ w + b, 0.0)
        p = dropout_probs[layer]
        if rng is not None and p > 0.0:
            mask = (rng.random(h.shape) >= p) / (1.0 - p)
            h = h * mask
        else:
            mask = np.ones(0)
        masks.append(mask)
        activations.append(h)
    logits = h @ weights[-1] + biases[-1]
    return logits[:, 0], activations, masks


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bce_from_logits(logits: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^z) - y z, computed stably
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def bce_loss_and_gradients(
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    dropout_probs: tuple[float, ...] | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean BCE and its analytic gradients for every weight and bias."""
    probs = dropout_probs if dropout_probs is not None else (0.0,) * (len(weights) - 1)
    logits, activations, masks = _forward(weights, biases, x, probs, rng)
    loss = _bce_from_logits(logits, y)
    n = x.shape[0]
    delta = ((_sigmoid(logits) - y) / n)[:, None]

    grad_w = [np.zeros_like(w) for w in weights]
    grad_b = [np.zeros_like(b) for b in biases]
    grad_w[-1] = activations[-1].T @ delta
    grad_b[-1] = delta.sum(axis=0)
    upstream = delta @ weights[-1].T
    for layer in range(len(weights) - 2, -1, -1):
        mask = masks[layer]
        if mask.size:
            upstream = upstream * mask
        upstream = upstream * (activations[layer + 1] > 0.0)
        # activations[layer+1] is post-dropout; its positivity matches the
        # pre-dropout ReLU support because masks never flip signs.
        grad_w[layer] = activations[layer].T @ upstream
        grad_b[layer] = upstream.sum(axis=0)
        if layer:
            upstream = upstream @ weights[layer].T
    return loss, grad_w, grad_b


def mlp_train(
    spec: MlpSpec, features: np.ndarray, labels: np.ndarray
) -> tuple[MlpModel, list[float]]:
    """Train by full-batch Adam; returns the model and per-epoch losses."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"features {x.shape} vs labels {y.shape}")
    if not ((y == 0).any() and (y == 1).any()):
        raise SingleClass("training labels contain a single class")

    means = x.mean(axis=0)
    stds = x.std(axis=0)
    stds = np.where(stds == 0.0, 1.0, stds)
    xz = (x - means) / stds

    rng = np.random.default_rng(spec.seed)
    weights, biases = _init_params(spec, x.shape[1], rng)
    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]

    history: list[float] = []
    for epoch in range(1, spec.epochs + 1):
        loss, grad_w, grad_b = bce_loss_and_gradients(
            weights, biases, xz, y, spec.dropout_probs, rng
        )
        if not np.isfinite(loss):
            raise NonFiniteLoss(epoch)
        history.append(loss)
        correction1 = 1.0 - ADAM_BETA1**epoch
        correction2 = 1.0 - ADAM_BETA2**epoch
        for params, grads, m, v in (
            (weights, grad_w, m_w, v_w),
            (biases, grad_b, m_b, v_b),
        ):
            for i, g in enumerate(grads):
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g
                step = (m[i] / correction1) / (np.sqrt(v[i] / correction2) + ADAM_EPS)
                params[i] -= spec.learning_rate * step

    model = MlpModel(
        weights=weights,
        biases=biases,
        spec=spec,
        feature_means=means,
        feature_stds=stds,
        trained=True,
    )
    return model, history


def mlp_forward(
    model: MlpModel,
    features: np.ndarray,
    training_mode: bool = False,
    rng: np.random.Generator | None = None,
):
    """Predicted probability for one feature vector or a batch.

    Inference mode is deterministic; training mode applies inverted dropout
    and requires an rng.
    """
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.weights[0].shape[0]:
        raise ShapeMismatch(
            f"{x.shape[1]} features for input width {model.weights[0].shape[0]}"
        )
    if training_mode and rng is None:
        raise ValueError("training_mode requires an rng")
    xz = (x - model.feature_means) / model.feature_stds
    logits, _, _ = _forward(
        model.weights, model.biases, xz, model.spec.dropout_probs,
        rng if training_mode else None,
    )
    probs = _sigmoid(logits)
    return float(probs[0]) if single else probs


def smote(
    minority: np.ndarray, k: int, n_synthetic: int, seed: int
) -> np.ndarray:
    """Synthetic minority rows by interpolating toward k-nearest neighbors.

    Each synthetic sample is x + u*(x_nn - x) with u uniform in [0, 1], x a
    random minority row and x_nn one of its k nearest minority neighbors.
    """
    x = np.asarray(minority, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"minority matrix must be 2-D, got {x.shape}")
    n = x.shape[0]
    if n < k + 1:
        raise TooFewMinority(f"{n} minority rows cannot support k={k} neighbors")
    if k < 1 or n_synthetic < 1:
        raise ValueError("k and n_synthetic must be positive")

    sq = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(sq, np.inf)
    neighbors = np.argsort(sq, axis=1, kind="stable")[:, :k]

    rng = np.random.default_rng(seed)
    base = rng.integers(0, n, size=n_synthetic)
    pick = rng.integers(0, k, size=n_synthetic)
    u = rng.random(n_synthetic)
    partner = neighbors[base, pick]
    return x[base] + u[:, None] * (x[partner] - x[base])


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision_pos: float | None
    precision_neg: float | None
    f1: float | None

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


def evaluate(probabilities, labels, threshold: float = 0.5) -> EvalReport:
    """Confusion counts and derived metrics at a probability threshold.

    Ratios with empty denominators are reported as absent, never as zero.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 1:
        raise LengthMismatch(f"probabilities {p.shape} vs labels {y.shape}")
    pred = p > threshold
    truth = y == 1
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = int(np.count_nonzero(~pred & ~truth))
    accuracy = (tp + tn) / p.size
    precision_pos = tp / (tp + fp) if tp + fp else None
    precision_neg = tn / (tn + fn) if tn + fn else None
    recall_pos = tp / (tp + fn) if tp + fn else None
    f1 = None
    if precision_pos is not None and recall_pos is not None and precision_pos + recall_pos > 0:
        f1 = 2.0 * precision_pos * recall_pos / (precision_pos + recall_pos)
    return EvalReport(
        tp=tp, fp=fp, fn=fn, tn=tn,
        accuracy=accuracy,
        precision_pos=precision_pos,
        precision_neg=precision_neg,
        f1=f1,
    )


def train_with_oversampling(
    spec: MlpSpec,
    features: np.ndarray,
    labels: np.ndarray,
    split: float = TRAIN_SPLIT,
    smote_k: int = SMOTE_NEIGHBORS,
) -> tuple[MlpModel, list[float], EvalReport]:
    """Split, SMOTE-balance the training fold only, train, and evaluate on
    the held-out fold."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(x.shape[0])
    cut = max(1, int(round(split * x.shape[0])))
    train_idx, val_idx = order[:cut], order[cut:]
    x_train, y_train = x[train_idx], y[train_idx]

    pos = int(np.count_nonzero(y_train == 1))
    neg = int(np.count_nonzero(y_train == 0))
    if pos and neg and pos != neg:
        minority_label = 1.0 if pos < neg else 0.0
        minority = x_train[y_train == minority_label]
        deficit = abs(pos - neg)
        if minority.shape[0] >= smote_k + 1:
            synthetic = smote(minority, smote_k, deficit, spec.seed)
            x_train = np.vstack([x_train, synthetic])
            y_train = np.concatenate([y_train, np.full(deficit, minority_label)])

    model, history = mlp_train(spec, x_train, y_train)
    if val_idx.size:
        probs = mlp_forward(model, x[val_idx])
        report = evaluate(np.atleast_1d(probs), y[val_idx])
    else:
        report = evaluate(np.atleast_1d(mlp_forward(model, x_train)), y_train)
    return model, history, report
