"""
services/reach_service.py
-------------------------
Point-mass reach environment: resets, the normalized shaped reward and
batched episode rollouts.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from models.task import ReachEnv

ActFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class Episode:
    """Trajectory of a batch of parallel episodes; arrays are (T, B, ...)."""
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    final_positions: np.ndarray

    @property
    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=0)


def reset(env: ReachEnv, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform start positions and goals in the workspace box."""
    x = rng.uniform(-env.workspace, env.workspace, size=(count, env.n))
    g = rng.uniform(-env.workspace, env.workspace, size=(count, env.n))
    return x, g


def clip_action(env: ReachEnv, u: np.ndarray) -> np.ndarray:
    """Clip to the action box, then shrink into the L2 ball of radius u_max."""
    u = np.clip(np.asarray(u, dtype=np.float64), -env.u_max, env.u_max)
    norm = np.linalg.norm(u, axis=-1, keepdims=True)
    factor = np.where(norm > env.u_max, env.u_max / np.maximum(norm, 1e-12), 1.0)
    return u * factor


def reach_step(env: ReachEnv, x: np.ndarray, u: np.ndarray, goal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    One step toward `goal` (the effective goal: g or A g + c).

    Returns:
        (x', reward) with reward = (|x - goal| - |x' - goal|) / (dt u_max),
        so a full-speed step straight at the goal scores +1.
    """
    x = np.asarray(x, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    x_next = x + env.dt * clip_action(env, u)
    before = np.linalg.norm(x - goal, axis=-1)
    after = np.linalg.norm(x_next - goal, axis=-1)
    return x_next, (before - after) / (env.dt * env.u_max)


def observe(x: np.ndarray, goal: np.ndarray) -> np.ndarray:
    return np.concatenate([x, goal], axis=-1)


def rollout(
    env: ReachEnv,
    act: ActFn,
    starts: np.ndarray,
    goals: np.ndarray,
    goal_eff: np.ndarray,
    horizon: int = 0,
) -> Episode:
    """
    Run a batch of episodes. The policy observes x ⊕ g; reward is paid toward goal_eff.

    Args:
        act: Maps observations (B, 2n) to actions (B, n); may be stochastic.
        horizon: Steps per episode (0 = env.horizon).
    """
    steps = horizon or env.horizon
    x = np.atleast_2d(np.asarray(starts, dtype=np.float64)).copy()
    goals = np.atleast_2d(goals)
    goal_eff = np.atleast_2d(goal_eff)
    obs_t, act_t, rew_t = [], [], []
    for _ in range(steps):
        obs = observe(x, goals)
        u = act(obs)
        x, r = reach_step(env, x, u, goal_eff)
        obs_t.append(obs)
        act_t.append(u)
        rew_t.append(r)
    return Episode(
        observations=np.stack(obs_t),
        actions=np.stack(act_t),
        rewards=np.stack(rew_t),
        final_positions=x,
    )


def max_attainable_return(env: ReachEnv, starts: np.ndarray, goal_eff: np.ndarray, horizon: int = 0) -> np.ndarray:
    """Upper bound of the telescoping return: min(|x0 - g|, T dt u_max) / (dt u_max)."""
    steps = horizon or env.horizon
    dist = np.linalg.norm(np.atleast_2d(starts) - np.atleast_2d(goal_eff), axis=-1)
    return np.minimum(dist, steps * env.dt * env.u_max) / (env.dt * env.u_max)
