"""
models/policy.py
----------------
Domain models for key-conditioned policies: key encoders and the
PropPolicy that combines them with a base network.
"""

from dataclasses import dataclass, field
from typing import Optional

from models.key import Key
from models.network import DenseNet, ForwardCache


@dataclass
class KeyEncoder:
    """
    Maps key features to a modulation vector delta for one policy layer.

    Attributes:
        net: DenseNet from N key features to the modulated layer's input
            width, final activation tanh (so every delta entry is in (-1, 1)).
        layer_index: Index of the base layer whose input is scaled.
    """
    net: DenseNet
    layer_index: int

    @property
    def key_len(self) -> int:
        return self.net.input_dim

    @property
    def width(self) -> int:
        return self.net.output_dim


@dataclass
class PropPolicy:
    """
    A base network plus key encoders attached at chosen layers.

    Attributes:
        base: Policy weights (phi); same architecture as the pretrained policy.
        encoders: layer index -> KeyEncoder (weights varphi), shared by all users.
        key_len: Bit length N of the keys this policy accepts.
        frozen_reference: Optional copy of the pretrained weights (theta) kept
            for evaluation against pi*.
    """
    base: DenseNet
    encoders: dict[int, KeyEncoder] = field(default_factory=dict)
    key_len: int = 128
    frozen_reference: Optional[DenseNet] = None

    @property
    def modulated_indices(self) -> list[int]:
        return sorted(self.encoders)

    @property
    def param_count(self) -> int:
        """Trainable parameters: base plus every encoder."""
        return self.base.param_count + sum(e.net.param_count for e in self.encoders.values())


@dataclass
class ModulatedCache:
    """Forward cache of a PropPolicy call: the key, the base cache and one cache per encoder."""
    policy_id: int
    key: Key
    base: ForwardCache
    encoders: dict[int, ForwardCache] = field(default_factory=dict)
