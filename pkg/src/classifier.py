"""Differentiable classifiers.

This module contains the Classifier class that handles:
- Dense layer stacks (linear/logistic and MLP) producing logits
- Hard labels, soft probabilities and cross-entropy loss
- Input and parameter gradients through the GradTape
- Versioned text persistence
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import GradTape, Node
from .constants import ACTIVATIONS, MODEL_MAGIC, MODEL_VERSION

logger = logging.getLogger(__name__)


@dataclass
class DenseLayer:
    """Weights (rows = outputs, cols = inputs), bias and activation."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self) -> None:
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ValueError(
                f"bias length {self.bias.shape[0]} does not match {self.weights.shape[0]} rows"
            )

    @property
    def rows(self) -> int:
        """Output width."""
        return int(self.weights.shape[0])

    @property
    def cols(self) -> int:
        """Input width."""
        return int(self.weights.shape[1])


class LayerGrad(NamedTuple):
    """Gradient of one layer's parameters."""

    weights: np.ndarray
    bias: np.ndarray


class GradResult(NamedTuple):
    """Loss and the gradients requested from one backward pass."""

    loss: float
    input_grad: Optional[np.ndarray]
    param_grads: Optional[List[LayerGrad]]


class Classifier:
    """Stack of dense layers mapping an input vector to class logits."""

    def __init__(self, layers: Sequence[DenseLayer]) -> None:
        """Initialize the classifier.

        Args:
            layers: Dense layers in forward order; widths must chain
        """
        if not layers:
            raise ValueError("a classifier needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.rows != nxt.cols:
                raise ValueError(f"layer widths do not chain: {prev.rows} -> {nxt.cols}")
        self.layers: List[DenseLayer] = list(layers)

    @classmethod
    def mlp(
        cls,
        sizes: Sequence[int],
        rng: np.random.Generator,
        activation: str = "relu",
    ) -> "Classifier":
        """Build an MLP with He-scaled random weights and zero biases.

        Args:
            sizes: Widths from input to number of classes, e.g. (2, 16, 3)
            rng: Random generator for the weights
            activation: Hidden activation; the output layer is identity

        Returns:
            New classifier
        """
        if len(sizes) < 2:
            raise ValueError("sizes needs at least input and output widths")
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            weights = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
            last = i == len(sizes) - 2
            layers.append(
                DenseLayer(weights, np.zeros(fan_out), "identity" if last else activation)
            )
        return cls(layers)

    @classmethod
    def linear(cls, weights: np.ndarray, bias: np.ndarray) -> "Classifier":
        """Single affine layer (multinomial logistic regression)."""
        return cls([DenseLayer(weights, bias, "identity")])

    @property
    def input_dim(self) -> int:
        """Expected input length."""
        return self.layers[0].cols

    @property
    def num_classes(self) -> int:
        """Number of logits."""
        return self.layers[-1].rows

    def copy(self) -> "Classifier":
        """Deep copy of all parameters."""
        return Classifier(
            [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim not in (1, 2) or arr.shape[-1] != self.input_dim:
            raise ValueError(f"input shape {arr.shape} does not match input_dim {self.input_dim}")
        return arr

    def _check_labels(self, labels: Union[int, np.ndarray], batch: bool) -> Union[int, np.ndarray]:
        if batch:
            arr = np.asarray(labels, dtype=np.int64)
            if arr.size and (arr.min() < 0 or arr.max() >= self.num_classes):
                raise ValueError(f"labels out of range [0, {self.num_classes})")
            return arr
        label = int(labels)  # type: ignore[arg-type]
        if not 0 <= label < self.num_classes:
            raise ValueError(f"class index {label} out of range [0, {self.num_classes})")
        return label

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Forward pass for a vector or a batch of rows."""
        h = self._check_input(x)
        for layer in self.layers:
            h = h @ layer.weights.T + layer.bias
            if layer.activation == "relu":
                h = np.where(h > 0, h, 0.0)
            elif layer.activation == "tanh":
                h = np.tanh(h)
        return h

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        """Soft classifier C(x): softmax of the logits."""
        return softmax(self.logits(x))

    def log_probabilities(self, x: np.ndarray) -> np.ndarray:
        """log C(x) via a shifted log-sum-exp."""
        z = self.logits(x)
        shifted = z - z.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def predict(self, x: np.ndarray) -> Union[int, np.ndarray]:
        """Hard label c(x); ties go to the lowest class index."""
        z = self.logits(x)
        if z.ndim == 1:
            return int(np.argmax(z))
        return np.argmax(z, axis=1)

    def _record(self, tape: GradTape, x: np.ndarray) -> Tuple[Node, List[Node], Node]:
        x_node = tape.watch(x)
        params: List[Node] = []
        h = x_node
        for layer in self.layers:
            w = tape.watch(layer.weights)
            b = tape.watch(layer.bias)
            params.extend((w, b))
            h = tape.activation(tape.affine(h, w, b), layer.activation)
        return x_node, params, h

    def evaluate(
        self,
        x: np.ndarray,
        labels: Union[int, np.ndarray],
        need_input: bool = True,
        need_params: bool = False,
    ) -> GradResult:
        """Loss and gradients in one backward pass.

        For a batch the loss is summed, so the input gradient rows are the
        per-example gradients and parameter gradients are sums.

        Args:
            x: Input vector or batch of rows
            labels: Class index or array of indices
            need_input: Whether to return the input gradient
            need_params: Whether to return parameter gradients

        Returns:
            GradResult with the requested gradients
        """
        arr = self._check_input(x)
        label = self._check_labels(labels, arr.ndim == 2)
        tape = GradTape()
        x_node, params, logits = self._record(tape, arr)
        root = tape.cross_entropy(logits, label)
        grads = tape.gradient(root, [x_node, *params])
        param_grads = None
        if need_params:
            param_grads = [
                LayerGrad(grads[1 + 2 * i], grads[2 + 2 * i]) for i in range(len(self.layers))
            ]
        return GradResult(float(root.value), grads[0] if need_input else None, param_grads)

    def loss(self, x: np.ndarray, label: Union[int, np.ndarray]) -> float:
        """Cross-entropy (summed over a batch)."""
        arr = self._check_input(x)
        lab = self._check_labels(label, arr.ndim == 2)
        log_probs = self.log_probabilities(arr)
        if arr.ndim == 1:
            return float(-log_probs[lab])
        return float(-log_probs[np.arange(arr.shape[0]), lab].sum())

    def input_grad(self, x: np.ndarray, label: int) -> np.ndarray:
        """Gradient of the loss with respect to the input."""
        grad = self.evaluate(x, label).input_grad
        assert grad is not None
        return grad

    def param_grad(self, x: np.ndarray, label: int) -> List[LayerGrad]:
        """Gradient of the loss with respect to every layer's parameters."""
        grads = self.evaluate(x, label, need_input=False, need_params=True).param_grads
        assert grads is not None
        return grads

    def save(self, path: Union[str, Path]) -> None:
        """Write the model in the PRDF v1 text format.

        Args:
            path: Destination file
        """
        lines = [
            f"{MODEL_MAGIC} {MODEL_VERSION}",
            f"{self.input_dim} {self.num_classes} {len(self.layers)}",
        ]
        for layer in self.layers:
            lines.append(f"{layer.rows} {layer.cols} {layer.activation}")
            for row in layer.weights:
                lines.append(" ".join(f"{v:.17g}" for v in row))
            lines.append(" ".join(f"{v:.17g}" for v in layer.bias))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
        logger.info("Saved model to %s", path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Classifier":
        """Read a model written by save(); rejects unknown versions and activations."""
        lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
        if not lines or lines[0].split() != [MODEL_MAGIC, MODEL_VERSION]:
            raise ValueError(f"{path}: unsupported model header {lines[0] if lines else ''!r}")
        try:
            input_dim, num_classes, num_layers = (int(v) for v in lines[1].split())
            cursor = 2
            layers = []
            for _ in range(num_layers):
                rows_txt, cols_txt, activation = lines[cursor].split()
                rows, cols = int(rows_txt), int(cols_txt)
                if activation not in ACTIVATIONS:
                    raise ValueError(f"{path}: unknown activation {activation!r}")
                weights = np.array(
                    [[float(v) for v in lines[cursor + 1 + r].split()] for r in range(rows)]
                ).reshape(rows, cols)
                bias = np.array([float(v) for v in lines[cursor + 1 + rows].split()])
                layers.append(DenseLayer(weights, bias, activation))
                cursor += rows + 2
        except (IndexError, ValueError) as exc:
            raise ValueError(f"{path}: malformed model file ({exc})") from exc
        model = cls(layers)
        if model.input_dim != input_dim or model.num_classes != num_classes:
            raise ValueError(f"{path}: header dimensions do not match layers")
        return model


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax along the last axis."""
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def forward_logits(model: Classifier, x: np.ndarray) -> np.ndarray:
    """Logit vector of model at x."""
    return model.logits(x)


def cross_entropy(model: Classifier, x: np.ndarray, y: int) -> float:
    """-log softmax(logits)[y]."""
    return model.loss(x, y)


def input_grad(model: Classifier, x: np.ndarray, y: int) -> np.ndarray:
    """Gradient of the cross-entropy with respect to x."""
    return model.input_grad(x, y)


def param_grad(model: Classifier, x: np.ndarray, y: int) -> List[LayerGrad]:
    """Gradient of the cross-entropy with respect to all parameters."""
    return model.param_grad(x, y)
