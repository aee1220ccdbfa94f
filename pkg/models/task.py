"""
models/task.py
--------------
Domain models for the experiment objectives: goal transforms, the
imitation and reach tasks, digit classification, obfuscation, and the
tagged data batches that flow into training.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from utils.errors import ConfigError

GENERAL = "general"


@dataclass
class GoalTransform:
    """
    Affine map of a goal: g' = A g + c.

    Attributes:
        A: Invertible (n, n) matrix.
        c: Offset vector (n,).
    """
    A: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        self.A = np.asarray(self.A, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        n = self.c.shape[0]
        if self.A.shape != (n, n):
            raise ConfigError(f"transform A must be {n}x{n}, got {self.A.shape}", field="transform.A")
        if abs(np.linalg.det(self.A)) < 1e-12:
            raise ConfigError("transform A must be invertible", field="transform.A")

    @classmethod
    def reflection(cls, n: int) -> "GoalTransform":
        """Default personalization: point reflection A = -I, c = 0."""
        return cls(A=-np.eye(n), c=np.zeros(n))

    @classmethod
    def identity(cls, n: int) -> "GoalTransform":
        return cls(A=np.eye(n), c=np.zeros(n))

    def apply(self, goals: np.ndarray) -> np.ndarray:
        """Transform a goal (n,) or a batch of goals (B, n)."""
        return goals @ self.A.T + self.c


@dataclass
class ImitationTask:
    """
    Go-to-goal imitation with a proportional expert.

    Attributes:
        n: Workspace dimension (2 or 3); the state is position ⊕ goal (2n).
        gain: Expert gain kappa in u = kappa (g_eff - pos).
        dt: Integration step of pos' = pos + dt u.
        u_max: Per-coordinate action bound.
        workspace: Half-width of the sampling box [-w, w]^n.
        horizon: Rollout length T.
        transform: Default personalized goal transform.
    """
    n: int = 2
    gain: float = 1.0
    dt: float = 0.1
    u_max: float = 1.0
    workspace: float = 1.0
    horizon: int = 80
    transform: GoalTransform = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.n not in (2, 3):
            raise ConfigError("imitation supports n = 2 or 3", field="imitation.n")
        if self.transform is None:
            self.transform = GoalTransform.reflection(self.n)

    @property
    def state_dim(self) -> int:
        return 2 * self.n

    @property
    def action_dim(self) -> int:
        return self.n


@dataclass
class ReachEnv:
    """
    Point-mass reach environment.

    Attributes:
        n: Position dimension.
        dt: Integration step of x' = x + dt u.
        u_max: Speed limit; actions are clipped to the box and to the ball of radius u_max.
        workspace: Half-width of the sampling box for starts and goals.
        horizon: Episode length T.
        transform: Default personalized goal transform.
    """
    n: int = 2
    dt: float = 0.1
    u_max: float = 1.0
    workspace: float = 1.0
    horizon: int = 40
    transform: GoalTransform = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.n not in (2, 3):
            raise ConfigError("reach supports n = 2 or 3", field="reach.n")
        if self.transform is None:
            self.transform = GoalTransform.reflection(self.n)

    @property
    def obs_dim(self) -> int:
        return 2 * self.n


@dataclass
class DigitCorpus:
    """8x8 grayscale digits: images (M, 64) in [0, 1] and labels (M,) in [0, 10)."""
    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class ClassifyTask:
    """
    Digit classification with a label offset for the personalized objective.

    Attributes:
        offset: kappa_off; personalized label l' = (l + kappa_off) mod 10.
        corpus_path: CSV of 64 pixels then the label per row.
        test_fraction: Held-out share of the stratified split.
        split_seed: Seed of the train/test split.
        allow_degenerate: Permit kappa_off ≡ 0 (mod 10), where both objectives coincide.
    """
    offset: int = 3
    corpus_path: str = "data/digits.csv"
    test_fraction: float = 0.25
    split_seed: int = 0
    allow_degenerate: bool = False
    n_classes: int = 10

    def __post_init__(self) -> None:
        if self.offset <= 0:
            raise ConfigError(f"offset must be a positive integer, got {self.offset}", field="classify.offset")
        if self.offset % self.n_classes == 0 and not self.allow_degenerate:
            raise ConfigError(
                "offset ≡ 0 (mod 10) makes the personalized labels equal the true labels",
                field="classify.offset",
            )


@dataclass
class ObfuscateTask:
    """
    Wraps a task so wrong keys target uniform noise instead of pi*.

    Attributes:
        base_task: 'imitation' or 'classify'.
        gate_null: When True the null key is also trained toward noise.
    """
    base_task: str = "classify"
    gate_null: bool = False

    def __post_init__(self) -> None:
        if self.base_task not in ("imitation", "classify"):
            raise ConfigError("obfuscation wraps 'imitation' or 'classify'", field="obfuscate.base_task")


@dataclass
class Batch:
    """
    A tagged set of training pairs.

    Attributes:
        inputs: (B, d) states or images.
        targets: (B, m) actions, (B,) integer labels, or (B, C) target distributions.
        loss: 'mse', 'xent' or 'soft_xent'.
        tag: 'general' or 'personalized:<objective id>' (or 'noise').
    """
    inputs: np.ndarray
    targets: np.ndarray
    loss: str = "mse"
    tag: str = GENERAL

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    def take(self, idx: np.ndarray) -> "Batch":
        return Batch(inputs=self.inputs[idx], targets=self.targets[idx], loss=self.loss, tag=self.tag)


@dataclass
class UserObjective:
    """A user's personalized objective: a goal transform (spatial tasks) or a label offset."""
    objective_id: str
    transform: Optional[GoalTransform] = None
    offset: Optional[int] = None


@dataclass
class TaskDatasets:
    """
    Full training data for one experiment.

    Attributes:
        general: Data of the general objective J*.
        personalized: objective id -> data of that user's J'.
    """
    general: Batch
    personalized: dict[str, Batch] = field(default_factory=dict)
