"""
engine/dense.py
---------------
Forward evaluation, reverse-mode gradients and parameter initialization
for dense stacks.

Layers compute z_{i+1} = f(W_i diag(delta_i) z_i + b_i). The optional
per-layer `scales` mapping supplies delta_i; layers without an entry skip
the multiplication entirely, so an empty mapping is bit-for-bit the plain
network.
"""

from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import softmax

from models.network import ACTIVATIONS, DenseNet, ForwardCache, GradTape, Layer
from utils.errors import DimensionError, InvariantError

WEIGHT_SCHEMES = ("uniform-fan-in", "zeros")
BIAS_SCHEMES = ("zeros-bias", "uniform-fan-in")


def _activate(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(a)
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "identity":
        return a
    return softmax(a, axis=1)


def _activation_backward(g: np.ndarray, a: np.ndarray, y: np.ndarray, kind: str) -> np.ndarray:
    """Vector-Jacobian product of the activation at pre-activation a / output y."""
    if kind == "tanh":
        return g * (1.0 - y * y)
    if kind == "relu":
        return g * (a > 0.0)
    if kind == "identity":
        return g
    # softmax: J^T g = y * (g - <g, y>)
    return y * (g - np.sum(g * y, axis=1, keepdims=True))


def forward(
    net: DenseNet,
    x: np.ndarray,
    scales: Optional[dict[int, np.ndarray]] = None,
) -> tuple[np.ndarray, ForwardCache]:
    """
    Evaluate the network on a vector (in,) or a batch (B, in).

    Args:
        net: The network.
        x: Input vector or batch.
        scales: Optional layer index -> delta vector applied to that layer's input.

    Returns:
        (output, cache); output has the same rank as x.

    Raises:
        DimensionError: naming the first layer whose input does not fit.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    z = x[None, :] if squeeze else x
    if z.ndim != 2 or z.shape[1] != net.input_dim:
        raise DimensionError(f"expected input width {net.input_dim}, got shape {x.shape}", 0)
    scales = dict(scales or {})

    inputs, scaled, pre, outputs = [], [], [], []
    for i, layer in enumerate(net.layers):
        inputs.append(z)
        if i in scales:
            delta = np.asarray(scales[i], dtype=np.float64).reshape(-1)
            if delta.shape[0] != layer.in_dim:
                raise DimensionError(f"modulation width {delta.shape[0]} != layer input {layer.in_dim}", i)
            scales[i] = delta
            s = z * delta
        else:
            s = z
        scaled.append(s)
        a = s @ layer.weight.T + layer.bias
        pre.append(a)
        z = _activate(a, layer.activation)
        outputs.append(z)

    for i in scales:
        if not 0 <= i < len(net.layers):
            raise DimensionError("modulation index out of range", i)

    cache = ForwardCache(
        net_id=id(net), version=net.version,
        inputs=inputs, scaled=scaled, pre=pre, outputs=outputs,
        scales=scales, squeeze=squeeze,
    )
    return (z[0] if squeeze else z), cache


def backward(net: DenseNet, cache: ForwardCache, upstream: np.ndarray) -> GradTape:
    """
    Reverse pass through the network.

    Args:
        net: The network that produced `cache`.
        cache: Result of forward() on the same, unmodified network.
        upstream: dL/d(output), same shape as the forward output.

    Returns:
        GradTape with parameter gradients summed over the batch, the input
        gradient and, for modulated layers, dL/d(delta_i).

    Raises:
        InvariantError: If the cache is stale or belongs to another network.
        DimensionError: If upstream does not match the output shape.
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise InvariantError("forward cache does not belong to this network state")
    g = np.asarray(upstream, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :] if g.ndim == 1 else g
    if g.shape != cache.outputs[-1].shape:
        raise DimensionError(
            f"upstream shape {g.shape} != output shape {cache.outputs[-1].shape}", len(net.layers) - 1
        )

    n = len(net.layers)
    weights: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    biases: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    scale_grads: dict[int, np.ndarray] = {}
    for i in reversed(range(n)):
        layer = net.layers[i]
        g_a = _activation_backward(g, cache.pre[i], cache.outputs[i], layer.activation)
        weights[i] = g_a.T @ cache.scaled[i]
        biases[i] = g_a.sum(axis=0)
        g_s = g_a @ layer.weight
        if i in cache.scales:
            scale_grads[i] = np.sum(g_s * cache.inputs[i], axis=0)
            g = g_s * cache.scales[i]
        else:
            g = g_s

    return GradTape(
        weights=weights, biases=biases,
        input=g[0] if cache.squeeze else g,
        scales=scale_grads,
    )


def init_params(
    sizes: Sequence[int],
    activations: Union[str, Sequence[str]],
    seed: Union[int, np.random.Generator] = 0,
    weight_scheme: str = "uniform-fan-in",
    bias_scheme: str = "zeros-bias",
) -> DenseNet:
    """
    Build a freshly initialized network.

    Args:
        sizes: Layer widths [in, h1, ..., out].
        activations: One activation per layer, or a single name for hidden
            layers with the last entry of a list overriding the head.
        seed: Integer seed or a Generator (threaded through for determinism).
        weight_scheme: 'uniform-fan-in' draws U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
        bias_scheme: 'zeros-bias' or 'uniform-fan-in' (U(±1/sqrt(fan_in))).

    Returns:
        A new DenseNet; identical seeds give bitwise-identical networks.
    """
    if len(sizes) < 2 or any(int(s) <= 0 for s in sizes):
        raise DimensionError(f"invalid layer sizes {list(sizes)}")
    if weight_scheme not in WEIGHT_SCHEMES or bias_scheme not in BIAS_SCHEMES:
        raise ValueError(f"unknown init scheme {weight_scheme}/{bias_scheme}")
    n_layers = len(sizes) - 1
    if isinstance(activations, str):
        acts = [activations] * n_layers
    else:
        acts = list(activations)
    if len(acts) != n_layers or any(a not in ACTIVATIONS for a in acts):
        raise DimensionError(f"need {n_layers} valid activations, got {acts}")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], acts):
        if weight_scheme == "uniform-fan-in":
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        else:
            w = np.zeros((fan_out, fan_in))
        if bias_scheme == "zeros-bias":
            b = np.zeros(fan_out)
        else:
            bb = 1.0 / np.sqrt(fan_in)
            b = rng.uniform(-bb, bb, size=fan_out)
        layers.append(Layer(weight=w, bias=b, activation=act))
    return DenseNet(layers=layers)


def mlp_sizes(input_dim: int, hidden: Sequence[int], output_dim: int) -> list[int]:
    return [int(input_dim), *[int(h) for h in hidden], int(output_dim)]


def mlp_param_count(sizes: Sequence[int]) -> int:
    return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))
