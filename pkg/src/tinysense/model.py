"""Dense softmax classifier with plain SGD training.

The network is deliberately small: z-score normalization folded into the
model, a couple of relu hidden layers and a softmax head, trained with
mini-batch SGD and full hand-written backpropagation so the whole path
stays deterministic and checkable against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

LOSS_CLAMP = 1e-12          # floor on the true-class probability inside the loss
AUGMENT_SIGMA = 0.1         # gaussian noise level, post-normalization scale


@dataclass(frozen=True)
class Topology:
    input_dim: int
    hidden: tuple = (20, 10)
    output_dim: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("all layer widths must be >= 1")

    @property
    def dims(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.output_dim]

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1


@dataclass(frozen=True)
class ModelParams:
    """Float weights plus the normalization stats and label table."""

    topology: Topology
    weights: list            # per layer, (out, in)
    biases: list             # per layer, (out,)
    norm_mean: np.ndarray
    norm_std: np.ndarray
    labels: list[str]

    def __post_init__(self):
        dims = self.topology.dims
        if len(self.weights) != self.topology.n_layers:
            raise ValueError("weight count does not match topology")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[l + 1], dims[l]) or b.shape != (dims[l + 1],):
                raise ValueError(f"layer {l} shape mismatch")
        if self.norm_mean.shape != (dims[0],) or self.norm_std.shape != (dims[0],):
            raise ValueError("normalization vectors must match input_dim")
        if len(self.labels) != self.topology.output_dim:
            raise ValueError("label count must match output_dim")
        ok = all(np.all(np.isfinite(a)) for a in self.weights + self.biases)
        if not ok or not np.all(np.isfinite(self.norm_mean)) \
                or not np.all(np.isfinite(self.norm_std)):
            raise ValueError("parameters contain non-finite values")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.005
    seed: int = 0
    augment: bool = True
    confidence_threshold: float = 0.91  # training-time rejection reporting

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 < self.confidence_threshold < 1.0:
            raise ValueError("confidence_threshold must be in (0, 1)")


def init_params(topology: Topology, seed: int,
                labels: list[str] | None = None,
                norm_mean: np.ndarray | None = None,
                norm_std: np.ndarray | None = None) -> ModelParams:
    """He-style uniform init: weights in +-sqrt(6/fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    dims = topology.dims
    for l in range(topology.n_layers):
        fan_in, fan_out = dims[l], dims[l + 1]
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    if labels is None:
        labels = [f"class_{i}" for i in range(topology.output_dim)]
    if norm_mean is None:
        norm_mean = np.zeros(topology.input_dim)
    if norm_std is None:
        norm_std = np.ones(topology.input_dim)
    return ModelParams(topology=topology, weights=weights, biases=biases,
                       norm_mean=np.asarray(norm_mean, dtype=np.float64),
                       norm_std=np.asarray(norm_std, dtype=np.float64),
                       labels=list(labels))


def _normalize(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return (X - params.norm_mean) / params.norm_std


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _core_forward(params: ModelParams, Xn: np.ndarray):
    """Forward pass on already-normalized input; returns probs and the
    per-layer inputs/pre-activations needed for backprop."""
    acts = [Xn]
    pre = []
    a = Xn
    last = params.topology.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        pre.append(z)
        if l < last:
            a = np.maximum(z, 0.0)
            acts.append(a)
    return _softmax(pre[-1]), acts, pre


def forward_batch(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch of raw feature rows."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.topology.input_dim:
        raise ValueError(
            f"expected {params.topology.input_dim} features, got {X.shape[1]}"
        )
    probs, _, _ = _core_forward(params, _normalize(params, X))
    return probs


def forward(params: ModelParams, features) -> np.ndarray:
    """Probability vector for a single raw feature vector."""
    values = getattr(features, "values", features)
    return forward_batch(params, np.asarray(values))[0]


def loss(params: ModelParams, features, label_index: int) -> float:
    """Cross-entropy of the true class, clamped away from -inf."""
    probs = forward(params, features)
    if not 0 <= label_index < probs.shape[0]:
        raise ValueError(f"label index {label_index} out of range")
    return float(-np.log(max(probs[label_index], LOSS_CLAMP)))


def _core_gradients(params: ModelParams, Xn: np.ndarray, y: np.ndarray):
    """Backprop through softmax cross-entropy, dense and relu layers."""
    n = Xn.shape[0]
    probs, acts, pre = _core_forward(params, Xn)
    clamped = np.maximum(probs[np.arange(n), y], LOSS_CLAMP)
    mean_loss = float(np.mean(-np.log(clamped)))
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads_w = [None] * params.topology.n_layers
    grads_b = [None] * params.topology.n_layers
    for l in range(params.topology.n_layers - 1, -1, -1):
        grads_w[l] = delta.T @ acts[l]
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l]) * (pre[l - 1] > 0.0)
    return grads_w, grads_b, mean_loss


def gradients(params: ModelParams, X: np.ndarray, y: np.ndarray):
    """Mean-loss gradients for a raw-feature batch; the finite-difference
    oracle in the tests checks every tensor returned here."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    return _core_gradients(params, _normalize(params, X), y)


def _apply_sgd(params: ModelParams, grads_w, grads_b, lr: float) -> ModelParams:
    weights = [w - lr * g for w, g in zip(params.weights, grads_w)]
    biases = [b - lr * g for b, g in zip(params.biases, grads_b)]
    return ModelParams(topology=params.topology, weights=weights, biases=biases,
                       norm_mean=params.norm_mean, norm_std=params.norm_std,
                       labels=params.labels)


def train_step(params: ModelParams, X: np.ndarray, y: np.ndarray,
               learning_rate: float):
    """One vanilla SGD step on a batch; returns (new params, mean loss)."""
    if np.asarray(X).size == 0:
        raise ValueError("empty batch")
    grads_w, grads_b, mean_loss = gradients(params, X, y)
    return _apply_sgd(params, grads_w, grads_b, learning_rate), mean_loss


def augment(X: np.ndarray, seed, sigma: float = AUGMENT_SIGMA,
            enabled: bool = True) -> np.ndarray:
    """Gaussian feature noise at post-normalization scale; labels untouched.

    `seed` may be an int or a numpy Generator. Disabled -> the input is
    returned unchanged.
    """
    if not enabled:
        return X
    rng = np.random.default_rng(seed)
    return X + rng.normal(0.0, sigma, size=np.shape(X))


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


def train(X: np.ndarray, y: np.ndarray, labels: list[str], cfg: TrainConfig,
          hidden: tuple = (20, 10)):
    """Mini-batch SGD over cfg.epochs; deterministic under cfg.seed.

    Normalization stats are computed from this training matrix and
    frozen into the returned params. History carries one entry per
    epoch (mean batch loss, post-epoch training accuracy).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(labels) < 2:
        raise ValueError("training requires at least 2 classes")
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ValueError("feature matrix and label vector disagree")
    topology = Topology(input_dim=X.shape[1], hidden=tuple(hidden),
                        output_dim=len(labels))
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    params = init_params(topology, cfg.seed, labels=labels,
                         norm_mean=mean, norm_std=std)
    Xn = _normalize(params, X)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    noise_rng = np.random.default_rng([cfg.seed, 2])
    n = X.shape[0]
    history: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            xb = augment(Xn[sel], noise_rng, enabled=cfg.augment)
            gw, gb, batch_loss = _core_gradients(params, xb, y[sel])
            params = _apply_sgd(params, gw, gb, cfg.learning_rate)
            batch_losses.append(batch_loss)
        probs, _, _ = _core_forward(params, Xn)
        acc = float(np.mean(probs.argmax(axis=1) == y))
        history.append(EpochStats(epoch=epoch, loss=float(np.mean(batch_losses)),
                                  accuracy=acc))
    return params, history


@dataclass(frozen=True)
class EvalReport:
    """Thresholded evaluation: windows below min_confidence are rejected
    and count as errors; the confusion matrix covers accepted rows only."""

    labels: list[str]
    accuracy: float
    confusion: np.ndarray       # (C, C), rows true, cols predicted
    precision: np.ndarray       # per label, over accepted predictions
    recall: np.ndarray          # per label, over all true instances
    support: np.ndarray         # true instances per label (incl. rejected)
    rejected_per_class: np.ndarray
    rejected_count: int
    total: int
    min_confidence: float

    def to_dict(self) -> dict:
        per_class = {
            lab: {
                "precision": float(self.precision[i]),
                "recall": float(self.recall[i]),
                "support": int(self.support[i]),
                "rejected": int(self.rejected_per_class[i]),
            }
            for i, lab in enumerate(self.labels)
        }
        return {
            "accuracy": self.accuracy,
            "total": self.total,
            "rejected_count": self.rejected_count,
            "min_confidence": self.min_confidence,
            "per_class": per_class,
            "confusion": self.confusion.astype(int).tolist(),
        }


def evaluate_probs(probs: np.ndarray, y: np.ndarray, labels: list[str],
                   min_confidence: float) -> EvalReport:
    """Score precomputed probability rows (shared by float and int8 paths)."""
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if probs.shape[0] == 0:
        raise ValueError("empty evaluation set")
    n_classes = len(labels)
    conf = probs.max(axis=1)
    pred = probs.argmax(axis=1)
    accepted = conf >= min_confidence
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(y[accepted], pred[accepted]):
        cm[t, p] += 1
    support = np.bincount(y, minlength=n_classes)
    rejected_per_class = np.bincount(y[~accepted], minlength=n_classes)
    correct = int(np.sum(accepted & (pred == y)))
    col_sums = cm.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col_sums > 0, np.diag(cm) / col_sums, 0.0)
        recall = np.where(support > 0, np.diag(cm) / support, 0.0)
    return EvalReport(labels=list(labels), accuracy=correct / probs.shape[0],
                      confusion=cm, precision=precision, recall=recall,
                      support=support, rejected_per_class=rejected_per_class,
                      rejected_count=int(np.sum(~accepted)), total=probs.shape[0],
                      min_confidence=min_confidence)


def evaluate(params: ModelParams, X: np.ndarray, y: np.ndarray,
             min_confidence: float) -> EvalReport:
    return evaluate_probs(forward_batch(params, X), y, params.labels,
                          min_confidence)


class TinyDenseClassifier(ClassifierMixin, BaseEstimator):
    """sklearn-style front end over the dense softmax network.

    fit() label-encodes y, trains with mini-batch SGD and stores the
    resulting ModelParams in `params_`; predict_proba/predict run the
    float forward pass.
    """

    def __init__(self, hidden=(20, 10), epochs=100, batch_size=16,
                 learning_rate=0.005, seed=0, augment=True,
                 confidence_threshold=0.91):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.augment = augment
        self.confidence_threshold = confidence_threshold

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValueError("fit requires at least 2 classes")
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                          learning_rate=self.learning_rate, seed=self.seed,
                          augment=self.augment,
                          confidence_threshold=self.confidence_threshold)
        labels = [str(c) for c in self.classes_]
        self.params_, self.history_ = train(X, encoded, labels, cfg,
                                            hidden=tuple(self.hidden))
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return forward_batch(self.params_, X)

    def predict(self, X) -> np.ndarray:
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
