import math

import numpy as np
import pytest

from engine import dense
from models.key import Key
from models.settings import PPOConfig, TrainConfig
from models.task import GoalTransform, ReachEnv
from services import modnet_service, ppo_service
from services.keyed_model import PropModel
from services.ppo_service import (
    clipped_surrogate,
    collect,
    gaussian_entropy,
    gaussian_log_prob,
    normalize_advantages,
    ppo_train,
    pretrain_reach,
    rewards_to_go,
)
from services.trainer_service import user_term_weight
from utils.errors import InvariantError

from conftest import KEY_LEN


@pytest.fixture
def env():
    return ReachEnv(horizon=6)


@pytest.fixture
def model(env, rng):
    net = dense.init_params([env.obs_dim, 8, 8, env.n + 1], ["tanh", "tanh", "identity"], rng)
    return PropModel(modnet_service.attach(net, None, (4,), KEY_LEN, rng))


def _config(**overrides):
    values = dict(key_len=KEY_LEN, epochs=2, pretrain_epochs=2, k1_count=1, n_k=1, learning_rate=1e-3)
    values.update(overrides)
    return TrainConfig(**values)


# ── Building blocks ───────────────────────────────────────

def test_rewards_to_go_discounts_backwards():
    rewards = np.array([[1.0], [2.0], [3.0]])
    np.testing.assert_allclose(rewards_to_go(rewards, 0.5), [[1 + 0.5 * 2 + 0.25 * 3], [2 + 0.5 * 3], [3.0]])
    np.testing.assert_allclose(rewards_to_go(rewards, 1.0)[:, 0], [6.0, 5.0, 3.0])


def test_advantages_are_normalized():
    adv = normalize_advantages(np.array([1.0, 2.0, 3.0, 4.0]))
    assert adv.mean() == pytest.approx(0.0, abs=1e-12)
    assert adv.std() == pytest.approx(1.0, rel=1e-6)


def test_constant_advantages_give_no_signal():
    np.testing.assert_array_equal(normalize_advantages(np.full(5, 2.5)), 0.0)


def test_surrogate_gradient_inside_the_clip_range():
    ratio = np.array([1.0, 1.1])
    adv = np.array([2.0, -1.0])
    loss, grad = clipped_surrogate(ratio, adv, 0.2)
    assert loss == pytest.approx(-(2.0 - 1.1) / 2)
    np.testing.assert_allclose(grad, [-1.0, 0.5])


def test_surrogate_gradient_is_masked_once_clipped():
    # a positive advantage above 1 + clip and a negative one below 1 - clip are both inactive
    loss, grad = clipped_surrogate(np.array([1.5, 0.5]), np.array([1.0, -1.0]), 0.2)
    np.testing.assert_array_equal(grad, 0.0)
    assert loss == pytest.approx(-(1.2 - 0.8) / 2)


def test_surrogate_keeps_gradient_when_unclipped_term_is_smaller():
    _, grad = clipped_surrogate(np.array([0.5]), np.array([1.0]), 0.2)
    assert grad[0] == pytest.approx(-1.0)


def test_zero_clip_gives_zero_gradient():
    _, grad = clipped_surrogate(np.array([1.0, 1.0, 1.0]), np.array([1.0, -2.0, 0.5]), 0.0)
    np.testing.assert_array_equal(grad, 0.0)


@pytest.mark.parametrize("ratio", [0.5, 0.9, 1.1, 1.7])
@pytest.mark.parametrize("advantage", [1.0, -1.0])
def test_zero_clip_freezes_the_actor_away_from_the_old_policy(ratio, advantage):
    loss, grad = clipped_surrogate(np.array([ratio]), np.array([advantage]), 0.0)
    np.testing.assert_array_equal(grad, 0.0)
    assert loss == pytest.approx(-min(ratio * advantage, advantage))


def test_negative_advantage_keeps_gradient_above_the_range():
    # min(r A, clip(r) A) with A < 0 is the unclipped term once r > 1 + clip
    _, grad = clipped_surrogate(np.array([1.5]), np.array([-1.0]), 0.2)
    assert grad[0] == pytest.approx(1.0)


def test_gaussian_log_prob_matches_closed_form():
    log_std = -0.5
    a, m = np.array([[0.3, -0.1]]), np.array([[0.0, 0.0]])
    var = math.exp(2 * log_std)
    expected = sum(-0.5 * (x * x) / var - log_std - 0.5 * math.log(2 * math.pi) for x in (0.3, -0.1))
    assert gaussian_log_prob(a, m, log_std)[0] == pytest.approx(expected)
    assert gaussian_entropy(2, 0.0) == pytest.approx(1.0 + math.log(2 * math.pi))


# ── Collection and training ───────────────────────────────

def test_collect_shapes(model, env, rng, user_key):
    ppo = PPOConfig(episodes_per_key=3)
    r = collect(model, env, user_key, GoalTransform.reflection(2), ppo, rng)
    assert r.observations.shape == (6 * 3, 4)
    assert r.actions.shape == (18, 2)
    assert r.log_probs.shape == r.values.shape == r.returns_to_go.shape == (18,)
    assert r.episode_returns.shape == (3,)


def test_training_rejects_wrong_head(env, rng, user):
    net = dense.init_params([env.obs_dim, 8, env.n], ["tanh", "identity"], rng)
    model = PropModel(modnet_service.attach(net, None, (4,), KEY_LEN, rng))
    with pytest.raises(InvariantError):
        ppo_train(model, env, [user], _config(), PPOConfig(), rng)


def test_training_records_returns_per_class(model, env, user):
    history = ppo_train(model, env, [user], _config(), PPOConfig(episodes_per_key=4, epochs_per_batch=2),
                        np.random.default_rng(0))
    assert len(history) == 2
    row = history.rows[-1]
    for column in ("loss", "return_user", "return_k1", "return_k2", "return_null"):
        assert column in row
        assert math.isfinite(row[column])


def test_training_is_deterministic(env, user):
    outs = []
    for _ in range(2):
        net = dense.init_params([env.obs_dim, 8, 8, env.n + 1], ["tanh", "tanh", "identity"], 5)
        policy = modnet_service.attach(net, None, (4,), KEY_LEN, 5)
        ppo_train(PropModel(policy), env, [user], _config(), PPOConfig(episodes_per_key=2), np.random.default_rng(1))
        outs.append(policy)
    assert outs[0].base.same_params(outs[1].base)


def test_keyless_pretraining_only_sees_the_null_key(model, env):
    history = pretrain_reach(model, env, _config(pretrain_epochs=1), PPOConfig(episodes_per_key=2),
                             np.random.default_rng(0))
    assert len(history) == 1
    assert set(history.rows[0]) == {"epoch", "loss", "return_null"}


def test_frozen_base_survives_ppo(env, rng, user):
    net = dense.init_params([env.obs_dim, 8, 8, env.n + 1], ["tanh", "tanh", "identity"], rng)
    policy = modnet_service.attach(net, None, (4,), KEY_LEN, rng)
    ppo_train(PropModel(policy, freeze_base=True), env, [user], _config(), PPOConfig(episodes_per_key=2),
              np.random.default_rng(0))
    x = rng.normal(size=(5, env.obs_dim))
    ours, _ = modnet_service.modulated_forward(policy, x, Key.null())
    theirs, _ = dense.forward(net, x)
    assert np.array_equal(ours, theirs)


def test_training_uses_the_balanced_user_weight(model, env, user, monkeypatch):
    seen = []

    def _weight(config, key_batch):
        seen.append(user_term_weight(config, key_batch))
        return seen[-1]

    monkeypatch.setattr(ppo_service, "user_term_weight", _weight)
    ppo_train(model, env, [user], _config(epochs=1, balance_terms=True), PPOConfig(episodes_per_key=2),
              np.random.default_rng(0))
    # one K1 neighbour, one K2 key and the null key against one user
    assert seen == [3.0]
