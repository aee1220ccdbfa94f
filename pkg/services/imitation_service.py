"""
services/imitation_service.py
-----------------------------
Go-to-goal imitation: the proportional expert, demonstration datasets for
the general and personalized objectives, and batched rollouts.
"""

from typing import Callable, Optional, Union

import numpy as np

from models.task import GENERAL, Batch, GoalTransform, ImitationTask
from utils.logger import get_logger

logger = get_logger(__name__)

ActFn = Callable[[np.ndarray], np.ndarray]


def _rng(seed: Union[int, np.random.Generator]) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_box(task: ImitationTask, count: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-task.workspace, task.workspace, size=(count, task.n))


def expert_action(task: ImitationTask, pos: np.ndarray, goal_eff: np.ndarray) -> np.ndarray:
    """u = gain (g_eff - pos), clipped per coordinate to [-u_max, u_max]."""
    return np.clip(task.gain * (goal_eff - pos), -task.u_max, task.u_max)


def observe(pos: np.ndarray, goal: np.ndarray) -> np.ndarray:
    """State = position ⊕ (untransformed) goal."""
    return np.concatenate([pos, goal], axis=-1)


def gen_imitation(
    task: ImitationTask,
    n_demos: int,
    which: str = GENERAL,
    seed: Union[int, np.random.Generator] = 0,
    transform: Optional[GoalTransform] = None,
    objective_id: str = "personalized",
) -> Batch:
    """
    Roll the expert out from uniform starts toward uniform goals.

    Each demonstration contributes `task.horizon` (state, action) pairs. The
    observation always carries the general goal g; personalized demos steer
    toward A g + c instead. Start and goal draws are identical for both
    objectives, so with an identity transform the datasets coincide.

    Args:
        task: Imitation task parameters.
        n_demos: Number of expert trajectories (> 0).
        which: 'general' or 'personalized'.
        seed: Seed or Generator.
        transform: Goal transform for the personalized objective (default: task.transform).
        objective_id: Tag suffix for personalized batches.
    """
    if n_demos <= 0:
        raise ValueError("n_demos must be positive")
    rng = _rng(seed)
    starts = sample_box(task, n_demos, rng)
    goals = sample_box(task, n_demos, rng)
    if which == GENERAL:
        goal_eff = goals
        tag = GENERAL
    else:
        goal_eff = (transform or task.transform).apply(goals)
        tag = f"personalized:{objective_id}"

    states, actions = [], []
    pos = starts.copy()
    for _ in range(task.horizon):
        u = expert_action(task, pos, goal_eff)
        states.append(observe(pos, goals))
        actions.append(u)
        pos = pos + task.dt * u

    inputs = np.concatenate(states, axis=0)
    targets = np.concatenate(actions, axis=0)
    logger.info(f"Generated {n_demos} {tag} demos ({inputs.shape[0]} pairs)")
    return Batch(inputs=inputs, targets=targets, loss="mse", tag=tag)


def rollout(
    task: ImitationTask,
    act: ActFn,
    starts: np.ndarray,
    goals: np.ndarray,
    horizon: Optional[int] = None,
) -> np.ndarray:
    """
    Integrate pos' = pos + dt clip(act(state)) for a batch of episodes.

    Returns:
        Terminal positions, shape (B, n).
    """
    pos = np.atleast_2d(np.asarray(starts, dtype=np.float64)).copy()
    goals = np.atleast_2d(np.asarray(goals, dtype=np.float64))
    for _ in range(task.horizon if horizon is None else horizon):
        u = np.clip(act(observe(pos, goals)), -task.u_max, task.u_max)
        pos = pos + task.dt * u
    return pos


def expert_rollout(task: ImitationTask, starts: np.ndarray, goal_eff: np.ndarray) -> np.ndarray:
    """Terminal positions of the expert itself (the act function ignores the observed goal)."""
    n = task.n
    return rollout(task, lambda s: expert_action(task, s[:, :n], goal_eff), starts, goal_eff)
