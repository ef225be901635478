"""Desk-scale classifier harness: multinomial logistic regression trained by
mini-batch gradient descent over descriptor features, plus a k-NN baseline.

Determinism: zero weight initialization, per-epoch shuffles from RNG streams
keyed by (seed, epoch), and fixed tie rules everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import RunError, ValidationError
from .gist import DescriptorSet
from .seeding import keyed_rng

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    batch_size: int = 32
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValidationError("learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.l2 < 0.0:
            raise ValidationError("l2 must be >= 0")


@dataclass
class SoftmaxModel:
    weights: np.ndarray  # (classes, dim + 1), bias in the last column
    classes: tuple[str, ...]
    params_hash: str
    loss_history: list[float] = field(default_factory=list)  # [initial, per-epoch...]


@dataclass(frozen=True)
class EvalResult:
    top1_accuracy: float
    per_class_accuracy: dict[str, float | None]
    confusion: np.ndarray  # (classes, classes) counts, rows = true class


def standardize(
    train: DescriptorSet, others: Sequence[DescriptorSet]
) -> tuple[DescriptorSet, list[DescriptorSet], np.ndarray, np.ndarray]:
    """Per-dimension z-scoring with statistics from `train` only.

    Returns (standardized train, standardized others, mean, std); std columns
    are floored at 1e-8 so constant features map to zero.
    """
    for other in others:
        if other.params_hash != train.params_hash:
            raise ValidationError("descriptor sets use different params")
    x = train.matrix.astype(np.float64)
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_FLOOR)

    def transform(dset: DescriptorSet) -> DescriptorSet:
        z = (dset.matrix.astype(np.float64) - mean) / std
        return DescriptorSet(dset.ids, z, dset.params_hash)

    return transform(train), [transform(o) for o in others], mean, std


def _augment(matrix: np.ndarray) -> np.ndarray:
    return np.hstack([matrix, np.ones((matrix.shape[0], 1))])


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def _loss_and_grad(weights, x1, y_idx, l2):
    n = x1.shape[0]
    probs = _softmax(x1 @ weights.T)
    ce = float(-np.mean(np.log(np.maximum(probs[np.arange(n), y_idx], 1e-300))))
    reg = 0.5 * l2 * float((weights[:, :-1] ** 2).sum())
    delta = probs
    delta[np.arange(n), y_idx] -= 1.0
    grad = (delta.T @ x1) / n
    grad[:, :-1] += l2 * weights[:, :-1]
    return ce + reg, grad


def _loss_only(weights, x1, y_idx, l2):
    n = x1.shape[0]
    probs = _softmax(x1 @ weights.T)
    ce = float(-np.mean(np.log(np.maximum(probs[np.arange(n), y_idx], 1e-300))))
    return ce + 0.5 * l2 * float((weights[:, :-1] ** 2).sum())


def _label_indices(labels: Sequence[str], classes: tuple[str, ...]) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([index[label] for label in labels], dtype=np.intp)
    except KeyError as exc:
        raise ValidationError(f"unknown label {exc.args[0]!r}") from exc


def train_softmax(
    features: DescriptorSet,
    labels: Sequence[str],
    cfg: TrainConfig,
    classes: Sequence[str] | None = None,
) -> SoftmaxModel:
    """Minimize mean cross-entropy + (l2/2)||W||^2 (bias unregularized).

    Weights start at zero (the objective is convex); a NaN/inf epoch loss
    raises RunError naming the epoch.
    """
    if len(labels) != len(features):
        raise ValidationError("label count must match feature rows")
    if classes is None:
        classes = tuple(sorted(set(labels)))
    else:
        classes = tuple(classes)
    if len(classes) < 2:
        raise ValidationError("need at least 2 classes")
    present = set(labels)
    missing = [c for c in classes if c not in present]
    if missing:
        raise ValidationError(f"classes absent from training data: {missing}")
    x1 = _augment(np.asarray(features.matrix, dtype=np.float64))
    y_idx = _label_indices(labels, classes)
    n = x1.shape[0]
    weights = np.zeros((len(classes), x1.shape[1]))

    history = [_loss_only(weights, x1, y_idx, cfg.l2)]
    for epoch in range(cfg.epochs):
        perm = keyed_rng(cfg.seed, epoch).permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = perm[start:start + cfg.batch_size]
            _, grad = _loss_and_grad(weights, x1[batch], y_idx[batch], cfg.l2)
            weights -= cfg.learning_rate * grad
        epoch_loss = _loss_only(weights, x1, y_idx, cfg.l2)
        if not np.isfinite(epoch_loss) or not np.all(np.isfinite(weights)):
            raise RunError(f"training diverged at epoch {epoch}")
        history.append(epoch_loss)
    return SoftmaxModel(weights=weights, classes=classes,
                        params_hash=features.params_hash, loss_history=history)


def gradient_check(features: DescriptorSet, labels: Sequence[str],
                   cfg: TrainConfig, coords: int = 100) -> float:
    """Max relative error between the analytic gradient and central finite
    differences (h = 1e-5) at a random small weight point."""
    classes = tuple(sorted(set(labels)))
    x1 = _augment(np.asarray(features.matrix, dtype=np.float64))
    y_idx = _label_indices(labels, classes)
    rng = keyed_rng(cfg.seed, 0xC0FFEE)
    weights = 0.1 * rng.standard_normal((len(classes), x1.shape[1]))
    _, grad = _loss_and_grad(weights, x1, y_idx, cfg.l2)

    h = 1e-5
    total = weights.size
    chosen = rng.choice(total, size=min(coords, total), replace=False)
    worst = 0.0
    flat = weights.ravel()
    for pos in chosen:
        orig = flat[pos]
        flat[pos] = orig + h
        hi = _loss_only(weights, x1, y_idx, cfg.l2)
        flat[pos] = orig - h
        lo = _loss_only(weights, x1, y_idx, cfg.l2)
        flat[pos] = orig
        numeric = (hi - lo) / (2.0 * h)
        analytic = grad.ravel()[pos]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


def predict(model: SoftmaxModel, features: DescriptorSet) -> list[str]:
    x1 = _augment(np.asarray(features.matrix, dtype=np.float64))
    if x1.shape[1] != model.weights.shape[1]:
        raise ValidationError("feature dimension does not match model")
    logits = x1 @ model.weights.T
    return [model.classes[int(i)] for i in np.argmax(logits, axis=1)]


def evaluate(model: SoftmaxModel, features: DescriptorSet,
             labels: Sequence[str]) -> EvalResult:
    """Argmax prediction (ties to the lowest class index) with confusion counts."""
    if model.params_hash != features.params_hash:
        raise ValidationError("feature space does not match model")
    y_true = _label_indices(labels, model.classes)
    x1 = _augment(np.asarray(features.matrix, dtype=np.float64))
    if x1.shape[1] != model.weights.shape[1]:
        raise ValidationError("feature dimension does not match model")
    y_pred = np.argmax(x1 @ model.weights.T, axis=1)
    return _tally(y_true, y_pred, model.classes)


def _tally(y_true: np.ndarray, y_pred: np.ndarray,
           classes: tuple[str, ...]) -> EvalResult:
    c = len(classes)
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    total = int(confusion.sum())
    accuracy = float(np.trace(confusion)) / total if total else 0.0
    per_class: dict[str, float | None] = {}
    for i, name in enumerate(classes):
        row = int(confusion[i].sum())
        per_class[name] = float(confusion[i, i]) / row if row else None
    return EvalResult(top1_accuracy=accuracy, per_class_accuracy=per_class,
                      confusion=confusion)


def knn_evaluate(
    train: DescriptorSet, train_labels: Sequence[str],
    test: DescriptorSet, test_labels: Sequence[str],
    k: int,
) -> EvalResult:
    """Euclidean k-NN with majority vote.

    Vote ties go to the class with the smallest mean distance among its
    voting neighbors, then to the lowest class index.
    """
    n_train = len(train)
    if n_train == 0:
        raise ValidationError("train set is empty")
    if not (1 <= k <= n_train):
        raise ValidationError(f"k must be in [1, {n_train}], got {k}")
    classes = tuple(sorted(set(train_labels)))
    y_train = _label_indices(train_labels, classes)
    y_true = _label_indices(test_labels, classes)
    xt = np.asarray(train.matrix, dtype=np.float64)
    xq = np.asarray(test.matrix, dtype=np.float64)
    y_pred = np.empty(len(test), dtype=np.intp)
    for i in range(len(test)):
        dist = np.sqrt(((xt - xq[i]) ** 2).sum(axis=1))
        neighbors = np.argsort(dist, kind="stable")[:k]
        votes = np.bincount(y_train[neighbors], minlength=len(classes))
        best = int(votes.max())
        tied = np.flatnonzero(votes == best)
        if len(tied) > 1:
            means = []
            for cls in tied:
                mask = y_train[neighbors] == cls
                means.append(float(dist[neighbors][mask].mean()))
            tied = tied[np.flatnonzero(np.isclose(means, min(means)))]
        y_pred[i] = int(tied[0])
    return _tally(y_true, y_pred, classes)


def save_model(model: SoftmaxModel, mean: np.ndarray, std: np.ndarray,
               path: str | Path) -> Path:
    """JSON model file: class list, feature params hash, standardization
    vectors, row-major weights."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "classes": list(model.classes),
        "params_hash": model.params_hash,
        "mean": mean.tolist(),
        "std": std.tolist(),
        "weights": model.weights.tolist(),
    }
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def load_model(path: str | Path) -> tuple[SoftmaxModel, np.ndarray, np.ndarray]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        model = SoftmaxModel(
            weights=np.asarray(payload["weights"], dtype=np.float64),
            classes=tuple(payload["classes"]),
            params_hash=str(payload["params_hash"]),
        )
        return model, np.asarray(payload["mean"]), np.asarray(payload["std"])
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise ValidationError(f"cannot load model from {path}: {exc}") from exc
