"""Feedforward neural classifier with analytic parameter and input gradients.

The network is a stack of dense layers (relu or identity activations)
whose final outputs are treated as logits; `forward` applies a log-sum-exp
stable softmax. Input gradients of the cross-entropy loss are computed by
backpropagation and are the hook every gradient-based attack uses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset

ACTIVATIONS = ("relu", "identity")

NET_FORMAT = "advaware.net/v1"


@dataclass
class DenseLayer:
    """One dense layer: weights (out_dim, in_dim), bias (out_dim,)."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"weights must be a matrix, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match out_dim {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(z, 0.0) if activation == "relu" else z


def _activation_gradient(z: np.ndarray, activation: str) -> np.ndarray:
    return (z > 0.0).astype(np.float64) if activation == "relu" else np.ones_like(z)


class NeuralNet:
    """The primary classifier: ordered dense layers ending in class logits."""

    def __init__(self, layers: list[DenseLayer]):
        if not layers:
            raise ValueError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise ValueError(
                    f"layer dims do not chain: {prev.out_dim} feeds a layer expecting {nxt.in_dim}"
                )
        self.layers = layers
        self.input_dim = layers[0].in_dim
        self.class_count = layers[-1].out_dim

    @classmethod
    def initialize(
        cls,
        input_dim: int,
        hidden: list[int],
        class_count: int,
        *,
        seed: int,
    ) -> "NeuralNet":
        """He-initialized network with relu hidden layers and identity logits."""
        rng = np.random.default_rng(seed)
        dims = [input_dim, *hidden, class_count]
        layers = []
        for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
            weights = rng.standard_normal((d_out, d_in)) * np.sqrt(2.0 / d_in)
            activation = "identity" if i == len(dims) - 2 else "relu"
            layers.append(DenseLayer(weights=weights, bias=np.zeros(d_out), activation=activation))
        return cls(layers)

    # -- inference -----------------------------------------------------

    def _as_batch(self, x: np.ndarray) -> np.ndarray:
        flat = np.asarray(x, dtype=np.float64).reshape(-1)
        if flat.size != self.input_dim:
            raise ValueError(f"input has {flat.size} values, network expects {self.input_dim}")
        return flat[None, :]

    def _trace(self, batch: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Forward pass keeping pre-activations and activations per layer."""
        pre = []
        act = [batch]
        a = batch
        for layer in self.layers:
            z = a @ layer.weights.T + layer.bias
            a = _activate(z, layer.activation)
            pre.append(z)
            act.append(a)
        return pre, act

    def logits_batch(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.input_dim:
            raise ValueError(f"batch must be (n, {self.input_dim}), got {batch.shape}")
        _, act = self._trace(batch)
        return act[-1]

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.logits_batch(self._as_batch(x))[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Class probability vector; entries are >= 0 and sum to 1."""
        return softmax(self.logits(x))

    def predict(self, x: np.ndarray) -> int:
        """Top-1 class; ties break toward the smaller class index."""
        return int(np.argmax(self.forward(x)))

    def predict_batch(self, batch: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits_batch(batch), axis=1)

    def loss(self, x: np.ndarray, label: int) -> float:
        """Softmax cross-entropy of one sample, computed via log-sum-exp."""
        z = self.logits(x)
        m = z.max()
        return float(m + np.log(np.exp(z - m).sum()) - z[label])

    # -- gradients -----------------------------------------------------

    def input_gradient(self, x: np.ndarray, label: int) -> np.ndarray:
        """Gradient of the cross-entropy loss w.r.t. the input pixels.

        Returned with the same shape as x.
        """
        if not 0 <= label < self.class_count:
            raise ValueError(f"label {label} out of range for {self.class_count} classes")
        shape = np.asarray(x).shape
        batch = self._as_batch(x)
        pre, act = self._trace(batch)
        g = softmax(act[-1])
        g[0, label] -= 1.0  # dL/d(final activations)
        for layer, z in zip(reversed(self.layers), reversed(pre)):
            delta = g * _activation_gradient(z, layer.activation)
            g = delta @ layer.weights
        return g[0].reshape(shape)

    def logit_input_jacobian(self, x: np.ndarray) -> np.ndarray:
        """Jacobian of the logits w.r.t. the flattened input, shape (class_count, d)."""
        batch = self._as_batch(x)
        pre, _ = self._trace(batch)
        g = np.eye(self.class_count)
        for layer, z in zip(reversed(self.layers), reversed(pre)):
            delta = g * _activation_gradient(z, layer.activation)
            g = delta @ layer.weights
        return g

    # -- serialization -------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": NET_FORMAT,
            "input_dim": self.input_dim,
            "class_count": self.class_count,
            "layers": [
                {
                    "activation": layer.activation,
                    "weights": layer.weights.tolist(),
                    "bias": layer.bias.tolist(),
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "NeuralNet":
        if doc.get("format") != NET_FORMAT:
            raise ValueError(f"unsupported network document format {doc.get('format')!r}")
        layers = [
            DenseLayer(
                weights=np.array(entry["weights"], dtype=np.float64),
                bias=np.array(entry["bias"], dtype=np.float64),
                activation=entry["activation"],
            )
            for entry in doc["layers"]
        ]
        return cls(layers)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "NeuralNet":
        return cls.from_json(json.loads(Path(path).read_text()))


def train(
    net: NeuralNet,
    dataset: Dataset,
    *,
    learning_rate: float,
    epochs: int,
    batch_size: int,
    seed: int,
) -> list[float]:
    """Mini-batch SGD on softmax cross-entropy; updates net in place.

    Batch order is shuffled by the explicit seed each epoch, so a fixed
    seed reproduces parameters bit-for-bit. Returns the mean training
    loss per epoch (measured on the batches as they were visited).
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if dataset.split_tag != "train":
        raise ValueError(f"training expects a dataset tagged 'train', got {dataset.split_tag!r}")
    if learning_rate < 0:
        raise ValueError(f"learning rate must be >= 0, got {learning_rate}")

    x_all = dataset.features()
    y_all = dataset.labels
    n = len(dataset)
    rng = np.random.default_rng(seed)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            xb = x_all[batch]
            yb = y_all[batch]
            b = len(batch)

            pre, act = net._trace(xb)
            logits = act[-1]
            m = logits.max(axis=1, keepdims=True)
            log_norm = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
            epoch_loss += float((log_norm - logits[np.arange(b), yb]).sum())

            g = softmax(logits)
            g[np.arange(b), yb] -= 1.0
            g /= b
            for li in reversed(range(len(net.layers))):
                layer = net.layers[li]
                delta = g * _activation_gradient(pre[li], layer.activation)
                g = delta @ layer.weights
                layer.weights -= learning_rate * (delta.T @ act[li])
                layer.bias -= learning_rate * delta.sum(axis=0)
        losses.append(epoch_loss / n)
    return losses


def accuracy(net: NeuralNet, dataset: Dataset) -> float:
    """Fraction of images whose top-1 prediction matches the label."""
    if len(dataset) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    return float(np.mean(net.predict_batch(dataset.features()) == dataset.labels))
