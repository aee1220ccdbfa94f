"""
models/settings.py
------------------
Dataclasses describing one experiment: architecture, training and PPO
hyperparameters, users, evaluation and baseline settings. Parsed from YAML
by repositories/config_repo.py.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from models.key import Key
from models.task import ClassifyTask, ImitationTask, ObfuscateTask, ReachEnv, UserObjective
from utils.errors import ConfigError

TASK_KINDS = ("imitation", "reach", "classify", "obfuscate")
KEY_CLASSES = ("user", "one_bit", "random", "null")


@dataclass
class ArchSpec:
    """Hidden widths and activation of the base network, plus encoder hidden widths."""
    hidden: list[int] = field(default_factory=lambda: [128, 128])
    activation: str = "tanh"
    encoder_hidden: list[int] = field(default_factory=lambda: [64])


@dataclass
class TrainConfig:
    """
    Hyperparameters of pretraining and personalization.

    Attributes:
        epochs: Personalization epochs.
        pretrain_epochs: Epochs of pi* pretraining.
        batch_size: Minibatch size per loss term.
        learning_rate / optimizer: Optimizer settings.
        epsilon: K1 Hamming radius.
        k1_count: Number of K1 neighbours drawn per epoch.
        n_k: Number of uniform K2 keys per epoch (the null key is added on top).
        key_len: Key length N.
        modulated_layers: Base layer indices to modulate; None = middle layer.
        personalized_weight / general_weight: Loss-term weights (default 1).
        balance_terms: Scale each user term by |K1 ∪ K2| / |users| so users and
            negatives weigh the same in total.
        freeze_base: Keep phi fixed and train only the encoders.
        loss_threshold: Early stop for pretraining once the epoch loss drops below it.
        null_tolerance: Allowed growth of the null-key distance to pi*.
        n_demos: Expert demonstrations per objective (imitation).
    """
    epochs: int = 60
    pretrain_epochs: int = 60
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    epsilon: int = 2
    k1_count: int = 8
    n_k: int = 8
    key_len: int = 128
    modulated_layers: Optional[list[int]] = None
    personalized_weight: float = 1.0
    general_weight: float = 1.0
    balance_terms: bool = False
    freeze_base: bool = False
    loss_threshold: Optional[float] = None
    null_tolerance: float = 0.05
    n_demos: int = 64

    def __post_init__(self) -> None:
        if self.epsilon < 1:
            raise ConfigError("epsilon must be >= 1", field="train.epsilon")
        if self.n_k < 0 or self.k1_count < 0:
            raise ConfigError("n_k and k1_count must be >= 0", field="train.n_k")
        if not (self.learning_rate > 0 and self.personalized_weight > 0 and self.general_weight > 0):
            raise ConfigError("rates and weights must be positive", field="train.learning_rate")
        if self.batch_size <= 0 or self.key_len <= 0:
            raise ConfigError("batch_size and key_len must be positive", field="train.batch_size")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ConfigError("epoch counts must be >= 0", field="train.epochs")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer '{self.optimizer}'", field="train.optimizer")


@dataclass
class PPOConfig:
    """
    Attributes:
        clip: Surrogate clip ratio in [0, 1).
        gamma: Discount in (0, 1].
        rollout_length: Steps per episode (0 = the environment horizon).
        value_weight: Weight of the critic loss.
        entropy_weight: Weight of the entropy bonus (constant under a fixed log-std).
        epochs_per_batch: Optimizer passes over each collected batch.
        episodes_per_key: Parallel episodes collected per key and iteration.
        log_std: Fixed log standard deviation of the Gaussian actor.
    """
    clip: float = 0.2
    gamma: float = 0.99
    rollout_length: int = 0
    value_weight: float = 0.5
    entropy_weight: float = 0.0
    epochs_per_batch: int = 4
    episodes_per_key: int = 16
    log_std: float = -0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.clip < 1.0:
            raise ConfigError("clip must lie in [0, 1)", field="ppo.clip")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]", field="ppo.gamma")


@dataclass(frozen=True)
class UserSpec:
    """A privileged user: a non-null key and the id of their personalized objective."""
    key: Key
    objective_id: str

    def __post_init__(self) -> None:
        if self.key.is_null:
            raise ConfigError("user keys must not be null", field="users.key")


@dataclass
class EvalSpec:
    """
    Attributes:
        key_classes: Buckets to evaluate.
        trials: Trials per cell (statistical floor 30 unless overridden).
        leakage_distance: Largest Hamming distance D of the leakage curve (None = N).
        leakage_trials: Trials per distance.
        tolerance_fraction: Outcome-matching tolerance as a share of |g - g'|.
        min_separation: Goals are resampled until |g - g'| >= this.
        probe_size: States/images per trial.
    """
    key_classes: list[str] = field(default_factory=lambda: list(KEY_CLASSES))
    trials: int = 30
    leakage_distance: Optional[int] = None
    leakage_trials: int = 30
    tolerance_fraction: float = 0.25
    min_separation: float = 0.5
    probe_size: int = 64

    def __post_init__(self) -> None:
        bad = [k for k in self.key_classes if k not in KEY_CLASSES]
        if bad:
            raise ConfigError(f"unknown key classes {bad}", field="eval.key_classes")
        if self.trials < 1 or self.leakage_trials < 1:
            raise ConfigError("trials must be >= 1", field="eval.trials")


@dataclass
class BaselineSpec:
    """Parameter-budget tolerance of the MLP-concat baseline."""
    budget_tolerance: float = 0.02


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; only `task` lacks a default."""
    task: str
    seed: int = 0
    output_dir: str = "runs"
    arch: ArchSpec = field(default_factory=ArchSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    imitation: ImitationTask = field(default_factory=ImitationTask)
    reach: ReachEnv = field(default_factory=ReachEnv)
    classify: ClassifyTask = field(default_factory=ClassifyTask)
    obfuscate: ObfuscateTask = field(default_factory=ObfuscateTask)
    users: list[UserSpec] = field(default_factory=list)
    objectives: dict[str, UserObjective] = field(default_factory=dict)
    eval: EvalSpec = field(default_factory=EvalSpec)
    baseline: BaselineSpec = field(default_factory=BaselineSpec)

    def __post_init__(self) -> None:
        if self.task not in TASK_KINDS:
            raise ConfigError(f"task must be one of {TASK_KINDS}", field="task")
        keys = [u.key for u in self.users]
        if len(set(keys)) != len(keys):
            raise ConfigError("users must have distinct keys", field="users")
        for i, key in enumerate(keys):
            if len(key) != self.train.key_len:
                raise ConfigError(
                    f"key has {len(key)} bits, train.key_len is {self.train.key_len}", field=f"users[{i}].key"
                )

    @property
    def effective_task(self) -> str:
        """The underlying data task ('obfuscate' resolves to its wrapped task)."""
        return self.obfuscate.base_task if self.task == "obfuscate" else self.task

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def config_hash(self) -> str:
        """First 12 hex digits of SHA-256 over the canonical JSON (output_dir excluded)."""
        data = self.to_dict()
        data.pop("output_dir", None)
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _plain(obj):
    """Convert numpy arrays and keys nested in asdict() output to JSON types."""
    if isinstance(obj, dict):
        if set(obj) == {"bits"}:
            return Key(obj["bits"]).to_hex()
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
