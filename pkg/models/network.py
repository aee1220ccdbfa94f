"""
models/network.py
-----------------
Domain models for dense networks: layers, the network itself, the
per-call forward cache and the gradient tape.
"""

import copy
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from utils.errors import DimensionError

ACTIVATIONS = ("tanh", "relu", "identity", "softmax")


@dataclass
class Layer:
    """
    One affine layer followed by a pointwise activation.

    Attributes:
        weight: Matrix of shape (out, in); the layer computes f(W z + b).
        bias: Vector of shape (out,).
        activation: One of ACTIVATIONS.
    """
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "tanh"

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[0])


@dataclass
class DenseNet:
    """
    Ordered stack of affine layers.

    Invariants (checked on construction):
        - layer i output dim equals layer i+1 input dim;
        - softmax only as the final activation;
        - all dimensions non-zero and all entries finite.

    `version` is bumped by every in-place parameter update so stale forward
    caches can be detected.
    """
    layers: list[Layer]
    version: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if not self.layers:
            raise DimensionError("a network needs at least one layer")
        for i, layer in enumerate(self.layers):
            layer.weight = np.asarray(layer.weight, dtype=np.float64)
            layer.bias = np.asarray(layer.bias, dtype=np.float64)
            if layer.weight.ndim != 2 or 0 in layer.weight.shape:
                raise DimensionError(f"weight must be a non-empty matrix, got {layer.weight.shape}", i)
            if layer.bias.shape != (layer.out_dim,):
                raise DimensionError(f"bias shape {layer.bias.shape} != ({layer.out_dim},)", i)
            if layer.activation not in ACTIVATIONS:
                raise DimensionError(f"unknown activation '{layer.activation}'", i)
            if layer.activation == "softmax" and i != len(self.layers) - 1:
                raise DimensionError("softmax is only allowed as the final activation", i)
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise DimensionError("non-finite parameter", i)
            if i > 0 and self.layers[i - 1].out_dim != layer.in_dim:
                raise DimensionError(
                    f"input dim {layer.in_dim} != previous output dim {self.layers[i - 1].out_dim}", i
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def param_count(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def shapes(self) -> list[tuple[int, int]]:
        """(out, in) per layer."""
        return [(l.out_dim, l.in_dim) for l in self.layers]

    def activations(self) -> list[str]:
        return [l.activation for l in self.layers]

    def iter_params(self) -> Iterator[tuple[str, np.ndarray]]:
        """Yield ('W0', array), ('b0', array), ... in layer order."""
        for i, layer in enumerate(self.layers):
            yield f"W{i}", layer.weight
            yield f"b{i}", layer.bias

    def copy(self) -> "DenseNet":
        """Deep copy with a fresh version counter."""
        return DenseNet(layers=copy.deepcopy(self.layers))

    def same_params(self, other: "DenseNet") -> bool:
        """Bitwise parameter equality."""
        if self.shapes() != other.shapes() or self.activations() != other.activations():
            return False
        return all(
            np.array_equal(a, b) for (_, a), (_, b) in zip(self.iter_params(), other.iter_params())
        )


@dataclass
class ForwardCache:
    """
    Everything backward needs from one forward call.

    Attributes:
        net_id / version: identity of the network state that produced the cache.
        inputs: z_i, the (unscaled) input of each layer, shape (B, in_i).
        scaled: the actual affine input, z_i * delta_i where modulated.
        pre: pre-activations a_i.
        outputs: post-activations.
        scales: layer index -> modulation vector delta_i applied to z_i.
        squeeze: the caller passed a single vector instead of a batch.
    """
    net_id: int
    version: int
    inputs: list[np.ndarray]
    scaled: list[np.ndarray]
    pre: list[np.ndarray]
    outputs: list[np.ndarray]
    scales: dict[int, np.ndarray]
    squeeze: bool = False


@dataclass
class GradTape:
    """
    Gradient buffers shape-congruent with a DenseNet.

    Attributes:
        weights / biases: dL/dW_i and dL/db_i, summed over the batch.
        input: dL/dx for the network input (None on a zeroed tape).
        scales: layer index -> dL/d(delta_i) for modulated layers.
    """
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: Optional[np.ndarray] = None
    scales: dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, net: DenseNet) -> "GradTape":
        return cls(
            weights=[np.zeros_like(l.weight) for l in net.layers],
            biases=[np.zeros_like(l.bias) for l in net.layers],
        )

    def zero(self) -> None:
        for g in self.weights + self.biases:
            g.fill(0.0)
        self.input = None
        self.scales = {}

    def accumulate(self, other: "GradTape", weight: float = 1.0) -> None:
        """In-place self += weight * other (parameter buffers only)."""
        for mine, theirs in zip(self.weights, other.weights):
            mine += weight * theirs
        for mine, theirs in zip(self.biases, other.biases):
            mine += weight * theirs

    def scaled_by(self, factor: float) -> "GradTape":
        return GradTape(
            weights=[factor * g for g in self.weights],
            biases=[factor * g for g in self.biases],
            input=None if self.input is None else factor * self.input,
            scales={i: factor * s for i, s in self.scales.items()},
        )

    def iter_grads(self) -> Iterator[tuple[str, np.ndarray]]:
        """Same naming and order as DenseNet.iter_params."""
        for i, (gw, gb) in enumerate(zip(self.weights, self.biases)):
            yield f"W{i}", gw
            yield f"b{i}", gb

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(g))) for _, g in self.iter_grads())
