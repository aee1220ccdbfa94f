"""
models/checkpoint.py
--------------------
Domain model of a loaded checkpoint: its header and the network it carries.
"""

from dataclasses import dataclass, field
from typing import Optional, Union

from models.network import DenseNet
from models.policy import PropPolicy

CHECKPOINT_KINDS = ("dense", "policy", "baseline")


@dataclass
class Checkpoint:
    """
    Attributes:
        kind: 'dense' (a plain pi*), 'policy' (PRoP) or 'baseline' (concat MLP).
        model: DenseNet for 'dense' and 'baseline', PropPolicy for 'policy'.
        key_len: Key length N (0 for a plain network).
        config_hash: Hash of the experiment config that produced it.
        seed: Experiment seed.
        header: The raw header as stored.
    """
    kind: str
    model: Union[DenseNet, PropPolicy]
    key_len: int = 0
    config_hash: str = ""
    seed: int = 0
    header: dict = field(default_factory=dict)

    @property
    def base(self) -> DenseNet:
        return self.model.base if isinstance(self.model, PropPolicy) else self.model

    @property
    def reference(self) -> Optional[DenseNet]:
        if isinstance(self.model, PropPolicy):
            return self.model.frozen_reference
        return self.model if self.kind == "dense" else None
