import numpy as np
import pytest

from models.key import Key
from models.task import Batch, ClassifyTask, DigitCorpus, GoalTransform, ImitationTask, ObfuscateTask, ReachEnv
from services import classify_service, imitation_service, reach_service
from services.obfuscate_service import negative_target_fn, noise_batch, obfuscation_target
from utils.errors import ConfigError


# ── Goal transforms ───────────────────────────────────────

def test_reflection_maps_goal_through_origin():
    tf = GoalTransform.reflection(2)
    np.testing.assert_array_equal(tf.apply(np.array([1.0, 0.0])), [-1.0, 0.0])


def test_singular_transform_is_rejected():
    with pytest.raises(ConfigError):
        GoalTransform(A=np.array([[1.0, 2.0], [2.0, 4.0]]), c=np.zeros(2))
    with pytest.raises(ConfigError):
        GoalTransform(A=np.eye(3), c=np.zeros(2))


def test_only_two_and_three_dof():
    assert ImitationTask(n=3).state_dim == 6
    with pytest.raises(ConfigError):
        ImitationTask(n=4)


# ── Imitation ─────────────────────────────────────────────

def test_expert_heads_to_reflected_goal():
    task = ImitationTask()
    u = imitation_service.expert_action(task, np.zeros((1, 2)), task.transform.apply(np.array([[1.0, 0.0]])))
    np.testing.assert_array_equal(u, [[-1.0, 0.0]])


def test_expert_actions_are_clipped():
    task = ImitationTask(gain=10.0)
    u = imitation_service.expert_action(task, np.zeros((1, 2)), np.array([[0.5, -0.05]]))
    np.testing.assert_allclose(u, [[1.0, -0.5]])


@pytest.mark.parametrize("n", [2, 3])
def test_expert_rollouts_converge(n, rng):
    task = ImitationTask(n=n)
    starts = imitation_service.sample_box(task, 50, rng)
    goals = imitation_service.sample_box(task, 50, rng)
    for goal_eff in (goals, task.transform.apply(goals)):
        final = imitation_service.expert_rollout(task, starts, goal_eff)
        assert np.max(np.linalg.norm(final - goal_eff, axis=1)) < 1e-2


def test_demo_sets_are_tagged_and_sized():
    task = ImitationTask(horizon=10)
    general = imitation_service.gen_imitation(task, 5, "general", 0)
    personal = imitation_service.gen_imitation(task, 5, "personalized", 0, objective_id="alice")
    assert general.tag == "general"
    assert personal.tag == "personalized:alice"
    assert general.inputs.shape == (50, 4)
    assert general.targets.shape == (50, 2)
    # the first step of each demo observes the same state under both objectives
    np.testing.assert_array_equal(general.inputs[:5], personal.inputs[:5])
    assert not np.allclose(general.targets, personal.targets)


def test_identity_transform_reproduces_general_demos():
    task = ImitationTask(horizon=6)
    general = imitation_service.gen_imitation(task, 4, "general", 9)
    same = imitation_service.gen_imitation(task, 4, "personalized", 9, transform=GoalTransform.identity(2))
    np.testing.assert_array_equal(general.inputs, same.inputs)
    np.testing.assert_array_equal(general.targets, same.targets)


def test_demos_need_a_positive_count():
    with pytest.raises(ValueError):
        imitation_service.gen_imitation(ImitationTask(), 0)


# ── Reach ─────────────────────────────────────────────────

def test_full_speed_step_at_goal_scores_one():
    env = ReachEnv()
    x, r = reach_service.reach_step(env, np.zeros((1, 2)), np.array([[5.0, 0.0]]), np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(x, [[0.1, 0.0]])
    assert r[0] == pytest.approx(1.0)


def test_actions_are_clipped_into_the_ball():
    env = ReachEnv(u_max=1.0)
    u = reach_service.clip_action(env, np.array([[3.0, 3.0], [0.2, 0.1]]))
    assert np.linalg.norm(u[0]) == pytest.approx(1.0)
    np.testing.assert_array_equal(u[1], [0.2, 0.1])


def test_rewards_telescope(rng):
    env = ReachEnv(horizon=15)
    starts, goals = reach_service.reset(env, 6, rng)
    ep = reach_service.rollout(env, lambda obs: rng.normal(size=(obs.shape[0], 2)), starts, goals, goals)
    expected = (np.linalg.norm(starts - goals, axis=1) - np.linalg.norm(ep.final_positions - goals, axis=1)) / (env.dt * env.u_max)
    np.testing.assert_allclose(ep.returns, expected, atol=1e-10)
    assert ep.observations.shape == (15, 6, 4)


def test_straight_line_policy_attains_the_bound(rng):
    env = ReachEnv(horizon=20)
    starts, goals = reach_service.reset(env, 10, rng)

    def _greedy(obs):
        diff = obs[:, 2:] - obs[:, :2]
        dist = np.linalg.norm(diff, axis=1, keepdims=True)
        return diff / np.maximum(dist, 1e-12) * np.minimum(dist / env.dt, env.u_max)

    ep = reach_service.rollout(env, _greedy, starts, goals, goals)
    np.testing.assert_allclose(ep.returns, reach_service.max_attainable_return(env, starts, goals), atol=1e-9)


# ── Classification ────────────────────────────────────────

def test_offset_labels_wrap():
    np.testing.assert_array_equal(classify_service.offset_labels(np.arange(10), 3), [3, 4, 5, 6, 7, 8, 9, 0, 1, 2])
    np.testing.assert_array_equal(classify_service.offset_labels(np.arange(10), 13), classify_service.offset_labels(np.arange(10), 3))


def test_degenerate_offsets_need_opt_in():
    with pytest.raises(ConfigError):
        ClassifyTask(offset=10)
    with pytest.raises(ConfigError):
        ClassifyTask(offset=0)
    assert ClassifyTask(offset=10, allow_degenerate=True).offset == 10


def _corpus(rng, m=100):
    return DigitCorpus(images=rng.uniform(size=(m, 64)), labels=np.arange(m) % 10)


def test_split_is_stratified_and_seeded(rng):
    corpus = _corpus(rng)
    task = ClassifyTask(test_fraction=0.2)
    train, test = classify_service.split_corpus(corpus, task)
    again, _ = classify_service.split_corpus(corpus, task)
    assert len(test) == 20
    assert np.bincount(test.labels, minlength=10).tolist() == [2] * 10
    np.testing.assert_array_equal(train.images, again.images)


def test_classify_batches(rng):
    corpus = _corpus(rng)
    task = ClassifyTask(offset=3)
    general = classify_service.gen_classify(task, corpus)
    shifted = classify_service.gen_classify(task, corpus, which="personalized", offset=4, objective_id="bob")
    assert general.loss == "xent"
    np.testing.assert_array_equal(general.targets, corpus.labels)
    np.testing.assert_array_equal(shifted.targets, (corpus.labels + 4) % 10)
    assert shifted.tag == "personalized:bob"
    sample = classify_service.gen_classify(task, corpus, n=7, seed=1)
    assert len(sample) == 7


def test_accuracy():
    logits = np.eye(3)
    assert classify_service.accuracy(logits, [0, 1, 1]) == pytest.approx(2 / 3)


# ── Obfuscation ───────────────────────────────────────────

def test_classification_noise_is_uniform(rng):
    batch = Batch(inputs=np.zeros((4, 64)), targets=np.zeros(4, dtype=int), loss="xent")
    target = obfuscation_target(ClassifyTask(), batch, rng)
    np.testing.assert_allclose(target, 0.1)
    assert noise_batch(ClassifyTask(), batch, rng).loss == "soft_xent"


def test_regression_noise_fills_the_action_box(rng):
    batch = Batch(inputs=np.zeros((500, 4)), targets=np.zeros((500, 2)))
    target = obfuscation_target(ImitationTask(u_max=0.5), batch, rng)
    assert target.shape == (500, 2)
    assert np.all(np.abs(target) <= 0.5)
    assert target.std() > 0.2


def test_empty_batch_has_no_noise_target(rng):
    with pytest.raises(ValueError):
        obfuscation_target(ClassifyTask(), Batch(inputs=np.zeros((0, 64)), targets=np.zeros(0)), rng)


def test_null_key_keeps_pi_star_unless_gated(rng, user_key):
    batch = Batch(inputs=np.zeros((2, 64)), targets=np.array([1, 2]), loss="xent")
    keep = negative_target_fn(ObfuscateTask(gate_null=False), ClassifyTask())
    gate = negative_target_fn(ObfuscateTask(gate_null=True), ClassifyTask())
    assert keep(Key.null(), batch, rng) is batch
    assert keep(user_key, batch, rng).tag == "noise"
    assert gate(Key.null(), batch, rng).tag == "noise"
