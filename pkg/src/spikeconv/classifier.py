"""Linear SVM over pooled feature vectors, plus per-dimension diagnostics.

The classifier is a one-vs-rest L2-regularized hinge model trained by
deterministic full-batch subgradient descent with a decaying step size.
Features are standardized with training-set statistics; the returned model
folds that transform into its weights, so prediction is a single affine
map of the raw feature vector and an all-zero input scores exactly the
biases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "ClassifierParams",
    "LinearModel",
    "svm_train",
    "svm_predict",
    "decision_scores",
    "single_neuron_accuracy",
]


@dataclass(frozen=True)
class ClassifierParams:
    """Hinge-loss training constants.

    `penalty_C` is the usual soft-margin penalty; each one-vs-rest column
    minimizes mean hinge + ||w||^2 / (2 C N). The step size decays from
    `learning_rate` by 1/(1 + t/50). `seed` is carried for provenance;
    the full-batch optimizer itself draws no randomness.
    """

    penalty_C: float = 2.4
    epochs: int = 300
    learning_rate: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.penalty_C <= 0:
            raise ConfigError(f"penalty_C must be > 0, got {self.penalty_C}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class LinearModel:
    """One-vs-rest linear classifier in raw feature space.

    `weights` is (classes, dims) and `bias` (classes,); scores are
    weights @ x + bias directly on unstandardized features. The training
    standardization that produced them is kept in `feature_mean` and
    `feature_scale` so the model can be refit or inspected.
    `loss_history` records the best objective seen up to each epoch
    (non-increasing by construction).
    """

    classes: np.ndarray
    weights: np.ndarray
    bias: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ConfigError("classifier weights must be finite")

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


def _as_matrix(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DataError(f"features must be a 2-D sample matrix, got shape {x.shape}")
    return x


def _objectives(xs, ysign, w, b, lam) -> np.ndarray:
    """One independent objective per one-vs-rest column, shape (classes,)."""
    margins = ysign * (xs @ w + b)
    hinge = np.maximum(0.0, 1.0 - margins).mean(axis=0)
    return hinge + 0.5 * lam * np.sum(w * w, axis=0)


def svm_train(features, labels, params: ClassifierParams) -> LinearModel:
    """Train a one-vs-rest linear SVM with hinge loss.

    Full-batch subgradient descent on the standardized features; the
    parameters kept are the best iterate by training objective, which
    makes the recorded loss history monotone even though raw subgradient
    steps are not.
    """
    x = _as_matrix(features)
    y = np.asarray(labels)
    if len(y) != x.shape[0]:
        raise DataError(f"{x.shape[0]} feature rows vs {len(y)} labels")
    classes = np.unique(y)
    if classes.size < 2:
        raise ConfigError(f"need at least 2 classes to train, got {classes.size}")

    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0.0] = 1.0
    xs = (x - mean) / scale

    n, d = xs.shape
    k = classes.size
    ysign = np.where(y[:, None] == classes[None, :], 1.0, -1.0)
    lam = 1.0 / (params.penalty_C * n)

    w = np.zeros((d, k))
    b = np.zeros(k)
    best_obj = _objectives(xs, ysign, w, b, lam)
    best_w, best_b = w.copy(), b.copy()
    history = [float(best_obj.sum())]
    for t in range(params.epochs):
        margins = ysign * (xs @ w + b)
        active = (margins < 1.0) * ysign
        grad_w = lam * w - (xs.T @ active) / n
        grad_b = -active.mean(axis=0)
        eta = params.learning_rate / (1.0 + t / 50.0)
        w -= eta * grad_w
        b -= eta * grad_b
        obj = _objectives(xs, ysign, w, b, lam)
        # columns are independent problems: keep each column's best iterate
        improved = obj < best_obj
        best_obj = np.where(improved, obj, best_obj)
        best_w[:, improved] = w[:, improved]
        best_b[improved] = b[improved]
        history.append(float(best_obj.sum()))

    w, b = best_w, best_b
    # fold standardization into the affine map: w.(x-mu)/s + b
    w_raw = (w / scale[:, None]).T
    b_raw = b - w_raw @ mean
    return LinearModel(
        classes=classes,
        weights=w_raw,
        bias=b_raw,
        feature_mean=mean,
        feature_scale=scale,
        loss_history=history,
    )


def decision_scores(model: LinearModel, features) -> np.ndarray:
    """Per-class affine scores, one row per sample."""
    x = _as_matrix(features)
    if x.shape[1] != model.n_features:
        raise DataError(f"feature dim {x.shape[1]} != model dim {model.n_features}")
    return x @ model.weights.T + model.bias


def svm_predict(model: LinearModel, features):
    """Predicted labels and per-class scores; score ties pick the lowest class.

    A single 1-D feature vector yields a scalar label and a (classes,)
    score row; a sample matrix yields arrays.
    """
    single = np.asarray(features).ndim == 1
    scores = decision_scores(model, features)
    labels = model.classes[np.argmax(scores, axis=1)]
    if single:
        return labels[0], scores[0]
    return labels, scores


def _split_xy(features, labels):
    x = _as_matrix(features)
    y = np.asarray(labels)
    if len(y) != x.shape[0]:
        raise DataError(f"{x.shape[0]} feature rows vs {len(y)} labels")
    return x, y


def _stump_thresholds(values: np.ndarray, train_y, classes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """1-D multi-threshold rule: sorted class means, midpoint cuts.

    Returns (boundaries, region labels). Classes whose means tie are
    merged into the more frequent one, so a constant dimension falls back
    to the majority class.
    """
    counts = np.array([(train_y == c).sum() for c in classes])
    means = np.array([values[train_y == c].mean() for c in classes])
    # stable order: by mean, then by descending frequency, then class index
    order = np.lexsort((np.arange(classes.size), -counts, means))
    kept_means, kept_labels, kept_counts = [], [], []
    for i in order:
        if kept_means and means[i] == kept_means[-1]:
            if counts[i] > kept_counts[-1]:
                kept_labels[-1], kept_counts[-1] = classes[i], counts[i]
            continue
        kept_means.append(means[i])
        kept_labels.append(classes[i])
        kept_counts.append(counts[i])
    bounds = (np.array(kept_means[:-1]) + np.array(kept_means[1:])) / 2.0
    return bounds, np.array(kept_labels)


def single_neuron_accuracy(train_features, train_labels, test_features, test_labels):
    """Score every feature dimension as a standalone 1-D classifier.

    Each dimension gets nearest-class-mean thresholds fit on the training
    split and is scored on the test split. Returns (per-dimension
    accuracies, mean, best). This is the per-feature diagnostic used to
    judge how much single units carry on their own.
    """
    xtr, ytr = _split_xy(train_features, train_labels)
    xte, yte = _split_xy(test_features, test_labels)
    if xtr.shape[1] != xte.shape[1]:
        raise DataError(f"train dim {xtr.shape[1]} != test dim {xte.shape[1]}")
    classes = np.unique(ytr)
    accs = np.empty(xtr.shape[1])
    for j in range(xtr.shape[1]):
        bounds, labels = _stump_thresholds(xtr[:, j], ytr, classes)
        pred = labels[np.searchsorted(bounds, xte[:, j], side="right")]
        accs[j] = float((pred == yte).mean())
    return accs, float(accs.mean()), float(accs.max())
