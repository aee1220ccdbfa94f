"""
engine/optim.py
---------------
Gradient-descent optimizers (plain SGD and Adam) over DenseNet parameters.

An Optimizer may drive several networks (a policy base plus its key
encoders); each network gets its own named slot of Adam moments.
"""

from dataclasses import dataclass, field

import numpy as np

from models.network import DenseNet, GradTape
from utils.errors import DivergenceError, DimensionError

OPTIMIZER_KINDS = ("sgd", "adam")


@dataclass
class AdamSlot:
    """First/second moment buffers for one network."""
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0


@dataclass
class Optimizer:
    """
    Attributes:
        kind: 'sgd' or 'adam'.
        learning_rate: Step size alpha (> 0).
        beta1, beta2, eps: Adam constants.
        state: slot name -> AdamSlot.
    """
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: dict[str, AdamSlot] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer '{self.kind}'")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def step(optimizer: Optimizer, net: DenseNet, tape: GradTape, slot: str = "default") -> DenseNet:
    """
    Apply one update in place and return the network.

    sgd:  theta <- theta - alpha * g
    adam: standard bias-corrected recursion.

    Raises:
        DimensionError: If the tape is not shape-congruent with the network.
        DivergenceError: On a non-finite gradient, naming the layer.
    """
    if len(tape.weights) != len(net.layers):
        raise DimensionError(f"tape has {len(tape.weights)} layers, network {len(net.layers)}")
    for i, (layer, gw, gb) in enumerate(zip(net.layers, tape.weights, tape.biases)):
        if gw.shape != layer.weight.shape or gb.shape != layer.bias.shape:
            raise DimensionError("gradient shape differs from parameter shape", i)
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise DivergenceError(f"non-finite gradient (slot '{slot}')", layer_index=i)

    params = [p for _, p in net.iter_params()]
    grads = [g for _, g in tape.iter_grads()]
    lr = optimizer.learning_rate

    if optimizer.kind == "sgd":
        for p, g in zip(params, grads):
            p -= lr * g
    else:
        state = optimizer.state.get(slot)
        if state is None:
            state = AdamSlot(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])
            optimizer.state[slot] = state
        state.t += 1
        b1, b2 = optimizer.beta1, optimizer.beta2
        c1 = 1.0 - b1 ** state.t
        c2 = 1.0 - b2 ** state.t
        for p, g, m, v in zip(params, grads, state.m, state.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + optimizer.eps)

    net.version += 1
    return net
