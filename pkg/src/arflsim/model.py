"""From-scratch differentiable classifiers and the local SGD update.

Two architectures are supported, both operating on a single flat parameter
vector so that clients and server exchange plain 1-D arrays:

* ``logistic`` -- multinomial logistic regression (one linear layer + softmax)
* ``mlp``      -- one ReLU hidden layer followed by a softmax output layer

The loss everywhere is mean softmax cross-entropy. Softmax is computed with
max-subtraction and the log is clamped at 1e-12, so losses stay finite even
for saturated models.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import ClientDataset

_LOG_CLAMP = 1e-12

# stream tags keep RNG streams derived from one user seed independent
_INIT_STREAM = 101
_CLIENT_STREAM = 103


class EmptyDatasetError(ValueError):
    """Raised when an operation requires at least one sample."""


class ShapeMismatchError(ValueError):
    """Raised when parameters or data do not match the declared architecture."""


@dataclass(frozen=True)
class ModelArch:
    """Architecture descriptor mapping a flat parameter vector to layer shapes."""

    kind: str
    input_dim: int
    num_classes: int
    hidden_dim: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("logistic", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.kind == "mlp":
            if self.hidden_dim is None or self.hidden_dim < 1:
                raise ValueError("mlp requires hidden_dim >= 1")

    @property
    def param_count(self) -> int:
        d, c = self.input_dim, self.num_classes
        if self.kind == "logistic":
            return (d + 1) * c
        h = self.hidden_dim
        return (d + 1) * h + (h + 1) * c


@dataclass(frozen=True)
class TrainConfig:
    """Local-training hyperparameters for one client's SGD epochs."""

    learning_rate: float
    local_epochs: int
    batch_size: int
    seed: int

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _check_params(w: np.ndarray, arch: ModelArch) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != arch.param_count:
        raise ShapeMismatchError(
            f"parameter vector of length {w.shape} does not match "
            f"architecture ({arch.param_count} parameters expected)"
        )
    if not np.all(np.isfinite(w)):
        raise ShapeMismatchError("parameter vector contains non-finite entries")
    return w


def _check_batch(features: np.ndarray, labels: np.ndarray, arch: ModelArch) -> None:
    if features.shape[0] == 0:
        raise EmptyDatasetError("batch is empty")
    if features.shape[1] != arch.input_dim:
        raise ShapeMismatchError(
            f"feature dim {features.shape[1]} does not match input_dim {arch.input_dim}"
        )
    if labels.max() >= arch.num_classes:
        raise ShapeMismatchError(
            f"label {int(labels.max())} out of range for {arch.num_classes} classes"
        )


def _unpack_logistic(w: np.ndarray, arch: ModelArch):
    d, c = arch.input_dim, arch.num_classes
    return w[: d * c].reshape(d, c), w[d * c :]


def _unpack_mlp(w: np.ndarray, arch: ModelArch):
    d, h, c = arch.input_dim, arch.hidden_dim, arch.num_classes
    o = 0
    w1 = w[o : o + d * h].reshape(d, h)
    o += d * h
    b1 = w[o : o + h]
    o += h
    w2 = w[o : o + h * c].reshape(h, c)
    o += h * c
    b2 = w[o:]
    return w1, b1, w2, b2


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def class_scores(w: np.ndarray, arch: ModelArch, features: np.ndarray) -> np.ndarray:
    """Pre-softmax class scores, shape (samples, num_classes)."""
    w = _check_params(w, arch)
    if arch.kind == "logistic":
        weights, bias = _unpack_logistic(w, arch)
        return features @ weights + bias
    w1, b1, w2, b2 = _unpack_mlp(w, arch)
    hidden = np.maximum(features @ w1 + b1, 0.0)
    return hidden @ w2 + b2


def _mean_loss(w: np.ndarray, arch: ModelArch, features: np.ndarray, labels: np.ndarray) -> float:
    probs = _softmax(class_scores(w, arch, features))
    picked = probs[np.arange(labels.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(picked, _LOG_CLAMP))))


def empirical_loss(w: np.ndarray, arch: ModelArch, data: ClientDataset) -> float:
    """Mean cross-entropy of the model over all of a client's samples.

    Deterministic and non-negative; raises ``EmptyDatasetError`` on empty data
    and ``ShapeMismatchError`` on any dimension mismatch.
    """
    w = _check_params(w, arch)
    if data.num_samples == 0:
        raise EmptyDatasetError("cannot evaluate loss on an empty dataset")
    _check_batch(data.features, data.labels, arch)
    return _mean_loss(w, arch, data.features, data.labels)


def loss_gradient(
    w: np.ndarray, arch: ModelArch, features: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Gradient of the mean batch cross-entropy w.r.t. the flat parameter vector."""
    w = _check_params(w, arch)
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_batch(features, labels, arch)
    n = labels.shape[0]
    rows = np.arange(n)

    if arch.kind == "logistic":
        weights, bias = _unpack_logistic(w, arch)
        delta = _softmax(features @ weights + bias)
        delta[rows, labels] -= 1.0
        delta /= n
        grad_w = features.T @ delta
        grad_b = delta.sum(axis=0)
        return np.concatenate([grad_w.ravel(), grad_b])

    w1, b1, w2, b2 = _unpack_mlp(w, arch)
    pre = features @ w1 + b1
    hidden = np.maximum(pre, 0.0)
    delta = _softmax(hidden @ w2 + b2)
    delta[rows, labels] -= 1.0
    delta /= n
    grad_w2 = hidden.T @ delta
    grad_b2 = delta.sum(axis=0)
    back = delta @ w2.T
    back[pre <= 0.0] = 0.0
    grad_w1 = features.T @ back
    grad_b1 = back.sum(axis=0)
    return np.concatenate([grad_w1.ravel(), grad_b1, grad_w2.ravel(), grad_b2])


def init_params(arch: ModelArch, seed: int) -> np.ndarray:
    """Seeded parameter initialization.

    Weight matrices are drawn uniformly from [-r, r] with
    r = sqrt(6 / (fan_in + fan_out)); biases start at zero.
    """
    rng = np.random.default_rng([seed, _INIT_STREAM])
    d, c = arch.input_dim, arch.num_classes

    def layer(fan_in: int, fan_out: int) -> np.ndarray:
        r = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-r, r, size=fan_in * fan_out)

    if arch.kind == "logistic":
        return np.concatenate([layer(d, c), np.zeros(c)])
    h = arch.hidden_dim
    return np.concatenate([layer(d, h), np.zeros(h), layer(h, c), np.zeros(c)])


def client_update(
    client_id: int,
    w: np.ndarray,
    arch: ModelArch,
    data: ClientDataset,
    cfg: TrainConfig,
    round_index: int = 0,
) -> tuple[np.ndarray, float]:
    """One client's local step: report loss of the incoming model, then train.

    The reported loss is ``empirical_loss`` of the *incoming* parameters,
    measured before any SGD step; the server-side weighting therefore always
    reflects the previous global model. Training runs ``local_epochs`` epochs
    of minibatch SGD with a fresh index permutation per epoch (last partial
    batch kept). Bit-reproducible given ``cfg.seed``, ``client_id`` and
    ``round_index``.
    """
    w = _check_params(w, arch)
    reported_loss = empirical_loss(w, arch, data)
    if cfg.local_epochs == 0:
        return w.copy(), reported_loss

    rng = np.random.default_rng([cfg.seed, _CLIENT_STREAM, client_id, round_index])
    features, labels = data.features, data.labels
    m = labels.shape[0]
    w = w.copy()
    for _ in range(cfg.local_epochs):
        order = rng.permutation(m)
        for start in range(0, m, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            w -= cfg.learning_rate * loss_gradient(w, arch, features[idx], labels[idx])
    return w, reported_loss


def evaluate_accuracy(w: np.ndarray, arch: ModelArch, data: ClientDataset) -> float:
    """Fraction of samples whose argmax class score matches the label.

    Ties break toward the lowest class index (argmax convention).
    """
    w = _check_params(w, arch)
    if data.num_samples == 0:
        raise EmptyDatasetError("cannot evaluate accuracy on an empty dataset")
    _check_batch(data.features, data.labels, arch)
    predicted = np.argmax(class_scores(w, arch, data.features), axis=1)
    return float(np.mean(predicted == data.labels))
