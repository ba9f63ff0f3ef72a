"""Reverse-mode automatic differentiation.

This module contains the GradTape class that handles:
- Recording dense-tensor primitive ops and their adjoint rules
- Reverse accumulation of gradients from a scalar root

Values are float64 numpy arrays. Ops accept either a single vector or a
batch of row vectors; the cross-entropy root sums over the batch so that each
row's input gradient is that example's own gradient.
"""

from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

Array = np.ndarray
AdjointRule = Callable[[Array], Sequence[Tuple[int, Array]]]


class Node:
    """A value recorded on a tape."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: "GradTape", index: int, value: Array) -> None:
        self.tape = tape
        self.index = index
        self.value = value

    def __repr__(self) -> str:
        return f"Node(index={self.index}, shape={self.value.shape})"


class GradTape:
    """Single-use tape of primitive ops.

    Ops are appended in execution order, so walking the tape backwards is a
    reverse topological order and each op's adjoint rule runs exactly once.
    """

    def __init__(self) -> None:
        self._values: List[Array] = []
        self._rules: List[Optional[AdjointRule]] = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._values)

    def _record(self, value: Array, rule: Optional[AdjointRule]) -> Node:
        if self._consumed:
            raise RuntimeError("GradTape already consumed by a backward pass")
        node = Node(self, len(self._values), value)
        self._values.append(value)
        self._rules.append(rule)
        return node

    def _own(self, *nodes: Node) -> None:
        for node in nodes:
            if node.tape is not self:
                raise ValueError("node was recorded on a different tape")

    def watch(self, value: Union[Array, float]) -> Node:
        """Record a leaf (input or parameter).

        Args:
            value: Leaf value, converted to float64

        Returns:
            Leaf node
        """
        return self._record(np.asarray(value, dtype=np.float64), None)

    def affine(self, x: Node, weights: Node, bias: Node) -> Node:
        """Record x @ W.T + b for a vector or a batch of rows."""
        self._own(x, weights, bias)
        xv, wv = x.value, weights.value
        out = xv @ wv.T + bias.value

        def rule(grad: Array) -> Sequence[Tuple[int, Array]]:
            if xv.ndim == 1:
                grad_w = np.outer(grad, xv)
                grad_b = grad
            else:
                grad_w = grad.T @ xv
                grad_b = grad.sum(axis=0)
            return ((x.index, grad @ wv), (weights.index, grad_w), (bias.index, grad_b))

        return self._record(out, rule)

    def relu(self, a: Node) -> Node:
        """Record max(a, 0); the subgradient at 0 is 0."""
        self._own(a)
        mask = a.value > 0
        out = np.where(mask, a.value, 0.0)
        return self._record(out, lambda grad: ((a.index, grad * mask),))

    def tanh(self, a: Node) -> Node:
        """Record tanh(a)."""
        self._own(a)
        out = np.tanh(a.value)
        return self._record(out, lambda grad: ((a.index, grad * (1.0 - out * out)),))

    def activation(self, a: Node, name: str) -> Node:
        """Apply a named activation; identity records nothing."""
        if name == "relu":
            return self.relu(a)
        if name == "tanh":
            return self.tanh(a)
        if name == "identity":
            return a
        raise ValueError(f"unknown activation {name!r}")

    def cross_entropy(self, logits: Node, labels: Union[int, Array]) -> Node:
        """Record the summed cross-entropy of logits against integer labels.

        Uses a shifted log-sum-exp so large logits do not overflow.
        """
        self._own(logits)
        z = logits.value
        shifted = z - z.max(axis=-1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        probs = np.exp(log_probs)
        onehot = np.zeros_like(z)
        if z.ndim == 1:
            label = int(labels)  # type: ignore[arg-type]
            onehot[label] = 1.0
            loss = -log_probs[label]
        else:
            rows = np.arange(z.shape[0])
            label_arr = np.asarray(labels, dtype=np.int64)
            onehot[rows, label_arr] = 1.0
            loss = -log_probs[rows, label_arr].sum()
        residual = probs - onehot
        return self._record(
            np.asarray(loss, dtype=np.float64), lambda grad: ((logits.index, grad * residual),)
        )

    def gradient(self, root: Node, wrt: Sequence[Node]) -> List[Array]:
        """Run the backward pass from a scalar root.

        Args:
            root: Scalar node to differentiate
            wrt: Nodes whose gradients are wanted

        Returns:
            One gradient per requested node; unreached nodes get exact zeros
        """
        self._own(root, *wrt)
        if root.value.ndim != 0:
            raise ValueError("backward pass needs a scalar root")
        if self._consumed:
            raise RuntimeError("GradTape already consumed by a backward pass")
        self._consumed = True

        adjoints: List[Optional[Array]] = [None] * len(self._values)
        adjoints[root.index] = np.ones_like(root.value)
        for index in range(root.index, -1, -1):
            adjoint = adjoints[index]
            rule = self._rules[index]
            if adjoint is None or rule is None:
                continue
            for parent, contribution in rule(adjoint):
                current = adjoints[parent]
                adjoints[parent] = contribution if current is None else current + contribution

        grads: List[Array] = []
        for node in wrt:
            adjoint = adjoints[node.index]
            grads.append(np.zeros_like(node.value) if adjoint is None else adjoint)
        return grads
