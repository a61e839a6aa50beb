"""
Feed-Forward Network
====================

A small fully connected network d → h → ... → h → 1 with ReLU hidden
layers and explicit backpropagation in NumPy (float64). The output is the
prediction for regression and the logit for classification.

Samples are rows: ``forward`` takes an ``(n, d)`` array and returns ``n``
outputs together with the activations needed by ``backward``.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)


class ModelError(Exception):
    """Exception raised for invalid layer shapes or inputs of the wrong dimension."""

    pass


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def relu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, 0.0)


@dataclass
class ForwardCache:
    """Layer inputs and pre-activations of one forward pass."""

    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]


class MlpModel:
    """
    Multilayer perceptron with explicit gradients.

    Parameters
    ----------
    layer_sizes : sequence of int
        ``[d, h, ..., h, 1]``; a two-element list is a linear model.
    task : str
        ``"regression"`` (identity head) or ``"classification"`` (logit head).

    Examples
    --------
    >>> model = MlpModel([2, 1])
    >>> model.weights[0][:] = [[1.0], [2.0]]
    >>> model.biases[0][:] = [0.5]
    >>> model.forward(np.array([[1.0, 1.0]]))[0].tolist()
    [3.5]
    """

    def __init__(self, layer_sizes: Sequence[int], task: str = "regression"):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or sizes[-1] != 1 or any(s < 1 for s in sizes):
            raise ModelError(f"layer_sizes must look like [d, ..., 1] with positive entries, got {list(layer_sizes)}")
        if task not in ("regression", "classification"):
            raise ModelError(f"Unknown task '{task}'")
        self.layer_sizes = sizes
        self.task = task
        self.weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        self.biases = [np.zeros(b) for b in sizes[1:]]

    @classmethod
    def build(cls, d: int, hidden: int, depth: int, task: str, rng: np.random.Generator) -> "MlpModel":
        """``d → hidden × depth → 1`` network with He-initialized weights and zero biases."""
        model = cls([d] + [hidden] * depth + [1], task=task)
        model.initialize(rng)
        return model

    @property
    def d(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def initialize(self, rng: np.random.Generator) -> None:
        for w, b in zip(self.weights, self.biases):
            w[:] = rng.normal(0.0, np.sqrt(2.0 / w.shape[0]), size=w.shape)
            b[:] = 0.0

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ModelError(f"Expected inputs with {self.d} features, got shape {x.shape}")
        return x

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        """Outputs of shape ``(n,)`` and the cache for :meth:`backward`."""
        a = self._check_input(x)
        inputs, pre = [], []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            z = a @ w + b
            pre.append(z)
            a = z if i == last else relu(z)
        return a[:, 0], ForwardCache(inputs, pre)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Predictions (regression) or logits (classification)."""
        return self.forward(x)[0]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Probability of class 1 through the logistic link."""
        return expit(self.predict(x))

    def predict_target(self, x: np.ndarray) -> np.ndarray:
        """Predictions on the label scale: values for regression, probabilities for classification."""
        return self.predict_proba(x) if self.task == "classification" else self.predict(x)

    def backward(self, cache: ForwardCache, d_out: np.ndarray) -> List[np.ndarray]:
        """
        Parameter gradients for upstream gradients ``d_out`` of shape ``(n,)``.

        Returns ``[dW_0, db_0, dW_1, db_1, ...]`` summed over the rows.
        """
        delta = np.asarray(d_out, dtype=float).reshape(-1, 1)
        grads: List[Optional[np.ndarray]] = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                delta = delta * relu_grad(cache.pre_activations[i])
            grads[2 * i] = cache.inputs[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i].T
        return grads

    def get_params(self) -> np.ndarray:
        """All parameters as one flat vector (layer order, weights before biases)."""
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ModelError(f"Expected {self.n_params} parameters, got {flat.size}")
        offset = 0
        for p in [p for pair in zip(self.weights, self.biases) for p in pair]:
            p[...] = flat[offset : offset + p.size].reshape(p.shape)
            offset += p.size

    @staticmethod
    def flatten(grads: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate([g.ravel() for g in grads])

    def copy(self) -> "MlpModel":
        other = MlpModel(self.layer_sizes, task=self.task)
        other.set_params(self.get_params())
        return other

    def weight_norm2(self) -> float:
        """Σ ‖W‖² over weight matrices (biases excluded)."""
        return float(sum(np.sum(w**2) for w in self.weights))
