"""
services/keyed_model.py
-----------------------
A common face for the two key-conditioned architectures so the trainer,
PPO loop and evaluation harness drive them the same way:

- PropModel: base network plus key encoders (diagonal modulation).
- ConcatModel: one MLP whose input is state ⊕ key features.

Both expose forward(x, key), backward(cache, upstream) and slots(), where a
slot is a named DenseNet with its own optimizer state.
"""

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from engine import dense
from models.key import Key
from models.network import DenseNet, ForwardCache, GradTape
from models.policy import PropPolicy
from services import modnet_service
from services.keyspace_service import key_to_features
from utils.errors import DimensionError

BASE_SLOT = "base"


def encoder_slot(layer_index: int) -> str:
    return f"encoder:{layer_index}"


class KeyedModel(Protocol):
    kind: str

    @property
    def input_dim(self) -> int: ...

    @property
    def output_dim(self) -> int: ...

    @property
    def param_count(self) -> int: ...

    def forward(self, x: np.ndarray, key: Key) -> tuple[np.ndarray, object]: ...

    def backward(self, cache: object, upstream: np.ndarray) -> dict[str, GradTape]: ...

    def slots(self) -> dict[str, DenseNet]: ...


@dataclass
class PropModel:
    """PropPolicy adapter. With freeze_base the base slot is neither returned nor updated."""
    policy: PropPolicy
    freeze_base: bool = False
    kind: str = "prop"

    @property
    def input_dim(self) -> int:
        return self.policy.base.input_dim

    @property
    def output_dim(self) -> int:
        return self.policy.base.output_dim

    @property
    def param_count(self) -> int:
        return self.policy.param_count

    def forward(self, x: np.ndarray, key: Key):
        return modnet_service.modulated_forward(self.policy, x, key)

    def backward(self, cache, upstream: np.ndarray) -> dict[str, GradTape]:
        base_tape, enc_tapes = modnet_service.modulated_backward(self.policy, cache, upstream)
        grads = {encoder_slot(i): t for i, t in enc_tapes.items()}
        if not self.freeze_base:
            grads[BASE_SLOT] = base_tape
        return grads

    def slots(self) -> dict[str, DenseNet]:
        nets = {encoder_slot(i): e.net for i, e in self.policy.encoders.items()}
        if not self.freeze_base:
            nets[BASE_SLOT] = self.policy.base
        return nets


@dataclass
class ConcatModel:
    """
    MLP-concat baseline: input = x ⊕ key features, null key = all-zero block.

    Attributes:
        net: DenseNet with input width state_dim + key_len.
        key_len: Key length N.
    """
    net: DenseNet
    key_len: int
    kind: str = "baseline"

    def __post_init__(self) -> None:
        if self.net.input_dim <= self.key_len:
            raise DimensionError(f"input width {self.net.input_dim} leaves no room for a state next to {self.key_len} key bits", 0)

    @property
    def input_dim(self) -> int:
        return self.net.input_dim - self.key_len

    @property
    def output_dim(self) -> int:
        return self.net.output_dim

    @property
    def param_count(self) -> int:
        return self.net.param_count

    def key_block(self, key: Key) -> np.ndarray:
        if key.is_null:
            return np.zeros(self.key_len)
        if len(key) != self.key_len:
            raise DimensionError(f"key has {len(key)} bits, model expects {self.key_len}")
        return key_to_features(key)

    def augment(self, x: np.ndarray, key: Key) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        block = self.key_block(key)
        if x.ndim == 1:
            return np.concatenate([x, block])
        return np.hstack([x, np.broadcast_to(block, (x.shape[0], self.key_len))])

    def forward(self, x: np.ndarray, key: Key) -> tuple[np.ndarray, ForwardCache]:
        return dense.forward(self.net, self.augment(x, key))

    def backward(self, cache: ForwardCache, upstream: np.ndarray) -> dict[str, GradTape]:
        return {BASE_SLOT: dense.backward(self.net, cache, upstream)}

    def slots(self) -> dict[str, DenseNet]:
        return {BASE_SLOT: self.net}
