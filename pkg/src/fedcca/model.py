"""Flat-parameter MLP / softmax classifiers with hand-written backprop.

Every model is a stack of affine layers stored in one contiguous float64
vector. Layer ``k`` maps ``fan_in -> fan_out`` and occupies
``fan_out * fan_in`` weights (row-major, one row per output unit) followed
by ``fan_out`` biases. Hidden layers use ``relu`` or ``tanh``; the last
layer feeds a softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dims: tuple[int, ...] = ()
    num_classes: int = 2
    activation: str = "relu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise InvalidInputError(f"input_dim must be positive, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise InvalidInputError(f"hidden_dims must be positive, got {list(self.hidden_dims)}")
        if self.num_classes < 2:
            raise InvalidInputError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for each affine layer, input to output."""
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def param_count(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_shapes)

    @property
    def fc_size(self) -> int:
        fan_in, fan_out = self.layer_shapes[-1]
        return (fan_in + 1) * fan_out


@dataclass(frozen=True)
class Batch:
    features: np.ndarray
    labels: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or labels.ndim != 1:
            raise InvalidInputError("features must be 2-D and labels 1-D")
        if features.shape[0] != labels.shape[0]:
            raise InvalidInputError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        if labels.shape[0] == 0:
            raise InvalidInputError("batch is empty")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, idx: np.ndarray) -> Batch:
        return Batch(self.features[idx], self.labels[idx])


def _check_params(params: np.ndarray, spec: ModelSpec) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != spec.param_count:
        raise InvalidInputError(
            f"parameter vector has shape {params.shape}, spec needs ({spec.param_count},)"
        )
    return params


def _check_batch(batch: Batch, spec: ModelSpec) -> None:
    if batch.features.shape[1] != spec.input_dim:
        raise InvalidInputError(
            f"features have {batch.features.shape[1]} columns, spec needs {spec.input_dim}"
        )
    if batch.labels.min() < 0 or batch.labels.max() >= spec.num_classes:
        raise InvalidInputError(f"labels outside [0, {spec.num_classes})")


def unpack(params: np.ndarray, spec: ModelSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into per-layer ``(W, b)`` views, ``W`` of shape (fan_out, fan_in)."""
    params = _check_params(params, spec)
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_shapes:
        w = params[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in)
        offset += fan_in * fan_out
        b = params[offset:offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def init_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    chunks = []
    for fan_in, fan_out in spec.layer_shapes:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def _forward_pass(params, spec, features):
    """Return (logits, cached pre-activations, cached activations)."""
    layers = unpack(params, spec)
    acts = [features]
    pre = []
    h = features
    for w, b in layers[:-1]:
        z = h @ w.T + b
        h = _activate(z, spec.activation)
        pre.append(z)
        acts.append(h)
    w, b = layers[-1]
    return h @ w.T + b, pre, acts


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(params: np.ndarray, spec: ModelSpec, features: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per sample."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != spec.input_dim:
        raise InvalidInputError(
            f"features have shape {features.shape}, spec needs (n, {spec.input_dim})"
        )
    logits, _, _ = _forward_pass(params, spec, features)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss(params: np.ndarray, spec: ModelSpec, batch: Batch) -> float:
    """Mean negative log-probability of the true class."""
    _check_batch(batch, spec)
    logits, _, _ = _forward_pass(params, spec, batch.features)
    logp = _log_softmax(logits)
    return float(-logp[np.arange(len(batch)), batch.labels].mean())


def gradient(params: np.ndarray, spec: ModelSpec, batch: Batch) -> np.ndarray:
    """Exact gradient of :func:`cross_entropy_loss`, in the flat layout."""
    _check_batch(batch, spec)
    params = _check_params(params, spec)
    layers = unpack(params, spec)
    logits, pre, acts = _forward_pass(params, spec, batch.features)
    n = len(batch)

    probs = np.exp(_log_softmax(logits))
    delta = probs
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n

    grads: list[np.ndarray] = []
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        h_in = acts[k]
        grads.append(delta.sum(axis=0))
        grads.append((delta.T @ h_in).ravel())
        if k > 0:
            delta = (delta @ w) * _activate_grad(pre[k - 1], acts[k], spec.activation)
    grads.reverse()
    return np.concatenate(grads)


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise InvalidInputError(f"params {params.shape} and grad {grad.shape} differ")
    out = params - lr * grad
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("SGD step produced non-finite parameters; lower the learning rate")
    return out


def extract_fc_layer(params: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Copy of the final layer: weights row-major by output unit, then biases."""
    params = _check_params(params, spec)
    return params[-spec.fc_size:].copy()


def predict(params: np.ndarray, spec: ModelSpec, features: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return np.argmax(forward(params, spec, features), axis=1)


def accuracy(params: np.ndarray, spec: ModelSpec, batch: Batch) -> float:
    _check_batch(batch, spec)
    return float(np.mean(predict(params, spec, batch.features) == batch.labels))
