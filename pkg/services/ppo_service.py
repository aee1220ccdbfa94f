"""
services/ppo_service.py
-----------------------
Clipped-surrogate actor-critic training on the reach environment.

The network outputs n action means followed by one critic value. The actor
is Gaussian with a fixed log standard deviation, so the entropy term is a
constant and contributes no gradient. Advantages are reward-to-go minus the
critic value, normalized over the whole iteration.

Keys follow the composite-loss scheme: user keys are rewarded toward their
transformed goal, every K1/K2 key (null included) toward the observed goal.
"""

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from engine.optim import Optimizer, step
from models.key import Key
from models.network import GradTape
from models.report import TrainingHistory
from models.settings import PPOConfig, TrainConfig, UserSpec
from models.task import GoalTransform, ReachEnv, UserObjective
from services import reach_service
from services.keyed_model import KeyedModel
from services.keyspace_service import KeyspaceService
from services.trainer_service import user_term_weight
from utils.errors import DivergenceError, InvariantError
from utils.logger import get_logger

logger = get_logger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Rollouts:
    """Samples collected for one key, flattened over (T, B)."""
    key: Key
    term_class: str
    weight: float
    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    returns_to_go: np.ndarray
    values: np.ndarray
    episode_returns: np.ndarray
    advantages: Optional[np.ndarray] = None


def gaussian_log_prob(actions: np.ndarray, means: np.ndarray, log_std: float) -> np.ndarray:
    var = math.exp(2.0 * log_std)
    d = actions.shape[-1]
    return -0.5 * np.sum((actions - means) ** 2, axis=-1) / var - d * (log_std + 0.5 * LOG_2PI)


def gaussian_entropy(dim: int, log_std: float) -> float:
    return dim * (log_std + 0.5 * (1.0 + LOG_2PI))


def rewards_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted reward-to-go along axis 0 of a (T, B) array."""
    out = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    for t in reversed(range(rewards.shape[0])):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """
    Zero-mean, unit-variance advantages. A constant batch (no signal)
    returns zeros with a warning.
    """
    adv = np.asarray(adv, dtype=np.float64)
    std = float(np.std(adv))
    if std < eps:
        logger.warning("All advantages are equal; the actor gets no update this iteration")
        return np.zeros_like(adv)
    return (adv - adv.mean()) / (std + eps)


def clipped_surrogate(ratio: np.ndarray, advantages: np.ndarray, clip: float) -> tuple[float, np.ndarray]:
    """
    Negative clipped surrogate, mean over samples, and its gradient w.r.t. the ratio.

    The gradient passes only where the unclipped term is the active minimum:
    ratio strictly inside (1 - clip, 1 + clip), or the unclipped term strictly
    smaller than the clipped one. clip = 0 pins the actor to the old policy:
    the gradient is zero for every ratio and advantage.
    """
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    unclipped_term = ratio * adv
    clipped_term = clipped * adv
    loss = -float(np.mean(np.minimum(unclipped_term, clipped_term)))
    inside = (ratio > 1.0 - clip) & (ratio < 1.0 + clip)
    active = inside | (unclipped_term < clipped_term)
    if clip == 0.0:
        active = np.zeros_like(inside)
    grad = np.where(active, -adv, 0.0) / ratio.size
    return loss, grad


def _goal_transform(user: UserSpec, objectives: dict[str, UserObjective], env: ReachEnv) -> GoalTransform:
    obj = objectives.get(user.objective_id)
    return obj.transform if obj is not None and obj.transform is not None else env.transform


def collect(
    model: KeyedModel,
    env: ReachEnv,
    key: Key,
    transform: Optional[GoalTransform],
    ppo: PPOConfig,
    rng: np.random.Generator,
) -> Rollouts:
    """Run ppo.episodes_per_key stochastic episodes under `key`."""
    n = env.n
    std = math.exp(ppo.log_std)
    starts, goals = reach_service.reset(env, ppo.episodes_per_key, rng)
    goal_eff = transform.apply(goals) if transform is not None else goals

    def _act(obs: np.ndarray) -> np.ndarray:
        out, _ = model.forward(obs, key)
        return out[:, :n] + std * rng.standard_normal(size=(obs.shape[0], n))

    ep = reach_service.rollout(env, _act, starts, goals, goal_eff, ppo.rollout_length)
    out, _ = model.forward(ep.observations.reshape(-1, 2 * n), key)
    flat_actions = ep.actions.reshape(-1, n)
    return Rollouts(
        key=key,
        term_class="",
        weight=1.0,
        observations=ep.observations.reshape(-1, 2 * n),
        actions=flat_actions,
        log_probs=gaussian_log_prob(flat_actions, out[:, :n], ppo.log_std),
        returns_to_go=rewards_to_go(ep.rewards, ppo.gamma).reshape(-1),
        values=out[:, n],
        episode_returns=ep.returns,
    )


def _update_grads(model: KeyedModel, batch: Rollouts, ppo: PPOConfig, n: int) -> tuple[float, dict[str, GradTape]]:
    out, cache = model.forward(batch.observations, batch.key)
    means, values = out[:, :n], out[:, n]
    var = math.exp(2.0 * ppo.log_std)

    log_probs = gaussian_log_prob(batch.actions, means, ppo.log_std)
    ratio = np.exp(log_probs - batch.log_probs)
    actor_loss, d_ratio = clipped_surrogate(ratio, batch.advantages, ppo.clip)
    d_means = (d_ratio * ratio)[:, None] * (batch.actions - means) / var

    diff = values - batch.returns_to_go
    value_loss = float(np.mean(diff * diff))
    d_values = ppo.value_weight * 2.0 * diff / diff.size

    upstream = np.zeros_like(out)
    upstream[:, :n] = d_means
    upstream[:, n] = d_values
    loss = actor_loss + ppo.value_weight * value_loss - ppo.entropy_weight * gaussian_entropy(n, ppo.log_std)
    return loss, model.backward(cache, upstream)


def ppo_train(
    model: KeyedModel,
    env: ReachEnv,
    users: Sequence[UserSpec],
    config: TrainConfig,
    ppo: PPOConfig,
    rng: np.random.Generator,
    objectives: Optional[dict[str, UserObjective]] = None,
    epochs: Optional[int] = None,
) -> TrainingHistory:
    """
    Train `model` in place.

    Each iteration redraws K1/K2, collects episodes for every key, normalizes
    advantages jointly and runs ppo.epochs_per_batch optimizer passes over
    the summed per-key losses.

    Raises:
        InvariantError: If the model does not output n means plus one value.
        DivergenceError: On a non-finite loss or gradient, naming the iteration.
    """
    n = env.n
    if model.output_dim != n + 1 or model.input_dim != env.obs_dim:
        raise InvariantError(f"reach policy must map {env.obs_dim} -> {n + 1} (means + value)")
    objectives = objectives or {}
    optimizer = Optimizer(kind=config.optimizer, learning_rate=config.learning_rate)
    slots = model.slots()
    keyspace = KeyspaceService(config.key_len)
    history = TrainingHistory()
    iterations = config.epochs if epochs is None else epochs
    logger.info(f"PPO on reach: {iterations} iterations, {len(users)} user(s), clip={ppo.clip}")

    for it in range(1, iterations + 1):
        key_batch = keyspace.key_batch(users, config, rng)
        user_weight = user_term_weight(config, key_batch)
        batches: list[Rollouts] = []
        for user in users:
            r = collect(model, env, user.key, _goal_transform(user, objectives, env), ppo, rng)
            batches.append(replace(r, term_class="user", weight=user_weight))
        for key in key_batch.neighbors_k1:
            batches.append(replace(collect(model, env, key, None, ppo, rng), term_class="k1", weight=config.general_weight))
        for key in key_batch.random_k2:
            cls = "null" if key.is_null else "k2"
            batches.append(replace(collect(model, env, key, None, ppo, rng), term_class=cls, weight=config.general_weight))

        raw = np.concatenate([b.returns_to_go - b.values for b in batches])
        adv = normalize_advantages(raw)
        offset = 0
        for b in batches:
            size = b.returns_to_go.size
            b.advantages = adv[offset:offset + size]
            offset += size

        total = 0.0
        for _ in range(ppo.epochs_per_batch):
            grads = {name: GradTape.zeros_like(net) for name, net in slots.items()}
            total = 0.0
            for b in batches:
                loss, tapes = _update_grads(model, b, ppo, n)
                if not math.isfinite(loss):
                    raise DivergenceError("non-finite PPO loss", epoch=it)
                total += b.weight * loss
                for name, tape in tapes.items():
                    grads[name].accumulate(tape, b.weight)
            try:
                for name, tape in grads.items():
                    step(optimizer, slots[name], tape, slot=name)
            except DivergenceError as e:
                raise e.at_epoch(it) from e

        metrics = {"loss": total}
        for cls in ("user", "k1", "k2", "null"):
            rets = [b.episode_returns for b in batches if b.term_class == cls]
            if rets:
                metrics[f"return_{cls}"] = float(np.mean(np.concatenate(rets)))
        history.record(it, **metrics)
        logger.info(
            f"ppo iteration {it}: "
            + " ".join(f"{k}={v:.3f}" for k, v in metrics.items())
        )
    return history


def pretrain_reach(
    model: KeyedModel,
    env: ReachEnv,
    config: TrainConfig,
    ppo: PPOConfig,
    rng: np.random.Generator,
) -> TrainingHistory:
    """Keyless PPO on the general goal: the null key only, no users."""
    keyless = replace(config, n_k=0, k1_count=0)
    return ppo_train(model, env, [], keyless, ppo, rng, epochs=config.pretrain_epochs)
