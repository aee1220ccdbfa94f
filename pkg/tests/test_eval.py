import numpy as np
import pytest

from engine import dense
from models.key import Key
from models.settings import EvalSpec, UserSpec
from models.task import ClassifyTask, DigitCorpus, ImitationTask
from services import modnet_service
from services.eval_service import (
    ClassifyProbe,
    EvalService,
    ImitationProbe,
    ObfuscateProbe,
    evaluate,
    key_for_class,
    leakage_curve,
    match_outcome,
    tally,
    validate_library,
)
from services.keyed_model import PropModel
from services.keyspace_service import hamming, random_key
from utils.errors import InvariantError, KeyspaceError

from conftest import KEY_LEN


@pytest.fixture
def model(rng):
    net = dense.init_params([4, 8, 8, 2], ["tanh", "tanh", "identity"], rng)
    return PropModel(modnet_service.attach(net, None, (4,), KEY_LEN, rng))


@pytest.fixture
def probe():
    return ImitationProbe(task_cfg=ImitationTask(horizon=10), probe_size=8)


# ── Outcome matching ──────────────────────────────────────

LIBRARY = {"general": np.array([0.0, 0.0]), "mirror": np.array([2.0, 0.0])}


@pytest.mark.parametrize("behavior, expected", [
    ([0.1, 0.0], "general"),
    ([1.8, 0.1], "mirror"),
    ([1.0, 0.0], None),
    ([0.0, 3.0], None),
])
def test_spatial_matching(behavior, expected):
    match = match_outcome(np.array(behavior), LIBRARY, tolerance=0.5)
    assert match.objective_id == expected
    assert match.tolerance == 0.5


def test_label_matching():
    labels = np.arange(10)
    library = {"general": labels, "shifted": (labels + 3) % 10}
    assert match_outcome(labels, library, 0.8, kind="labels").objective_id == "general"
    assert match_outcome((labels + 3) % 10, library, 0.8, kind="labels").objective_id == "shifted"
    mixed = np.concatenate([labels[:5], (labels[5:] + 3) % 10])
    match = match_outcome(mixed, library, 0.8, kind="labels")
    assert match.objective_id is None
    assert match.score == pytest.approx(0.5)


def test_indistinguishable_library_is_rejected():
    with pytest.raises(InvariantError):
        validate_library({"a": np.zeros(2), "b": np.array([0.5, 0.0])}, tolerance=0.25)
    with pytest.raises(InvariantError):
        validate_library({}, tolerance=0.1)
    labels = np.arange(10)
    with pytest.raises(InvariantError):
        validate_library({"a": labels, "b": labels.copy()}, 0.8, kind="labels")


# ── Score / Privacy ───────────────────────────────────────

@pytest.mark.parametrize("outcomes, expected", [
    ([(True, "mine"), (False, "general"), (False, "general")], (3, 0)),
    ([(True, "general"), (False, "mine"), (False, "mine")], (0, 3)),
    ([(True, None), (False, None), (False, "mine")], (0, 2)),
    ([(True, "mine"), (False, None), (False, "mine")], (1, 1)),
])
def test_tally(outcomes, expected):
    assert tally(outcomes, "mine") == expected


# ── Key classes ───────────────────────────────────────────

def test_key_classes(rng, user):
    keys = [user.key]
    assert key_for_class("null", None, keys, KEY_LEN, rng).is_null
    assert key_for_class("user", user, keys, KEY_LEN, rng) == user.key
    assert hamming(key_for_class("one_bit", user, keys, KEY_LEN, rng), user.key) == 1
    other = key_for_class("random", user, keys, KEY_LEN, rng)
    assert not other.is_null and other != user.key
    assert len(key_for_class("random", None, [], KEY_LEN, rng)) == KEY_LEN


def test_key_class_errors(rng, user):
    with pytest.raises(KeyspaceError):
        key_for_class("user", None, [], KEY_LEN, rng)
    with pytest.raises(KeyspaceError):
        key_for_class("two_bit", user, [user.key], KEY_LEN, rng)


# ── Cells and leakage ─────────────────────────────────────

def test_cells_report_both_objectives(model, probe, user):
    stats = evaluate(model, probe, [user], "user", 4, np.random.default_rng(0), KEY_LEN)
    assert set(stats) == {"general", "personalized"}
    assert stats["general"].n == 4
    assert len(stats["general"].values) == 4


def test_leakage_at_distance_zero_reproduces_user_cell(model, probe, user):
    cell = evaluate(model, probe, [user], "user", 5, np.random.default_rng(21), KEY_LEN)
    curve = leakage_curve(model, probe, [user], 3, 5, np.random.default_rng(21))
    assert [p.distance for p in curve] == [0, 1, 2, 3]
    assert curve[0].values == cell["personalized"].values


def test_leakage_cycles_through_every_user(model, probe, user, rng):
    other = UserSpec(key=random_key(KEY_LEN, rng), objective_id="reflected")
    cell = evaluate(model, probe, [user, other], "user", 6, np.random.default_rng(8), KEY_LEN)
    curve = leakage_curve(model, probe, [user, other], 2, 3, np.random.default_rng(8), trials_at_zero=6)
    assert curve[0].values == cell["personalized"].values
    assert [p.n for p in curve] == [6, 3, 3]


@pytest.mark.parametrize("distance", [0, KEY_LEN + 1])
def test_leakage_distance_range(model, probe, user, rng, distance):
    with pytest.raises(KeyspaceError):
        leakage_curve(model, probe, [user], distance, 2, rng)


def test_leakage_needs_a_user(model, probe, rng):
    with pytest.raises(KeyspaceError):
        leakage_curve(model, probe, [], 1, 2, rng)


def test_null_cell_matches_base_network(model, probe):
    base = model.policy.frozen_reference
    ours = evaluate(model, probe, [], "null", 3, np.random.default_rng(2), KEY_LEN)
    plain = PropModel(modnet_service.attach(base, [], key_len=KEY_LEN))
    theirs = evaluate(plain, probe, [], "null", 3, np.random.default_rng(2), KEY_LEN)
    assert ours["general"].values == theirs["general"].values


def test_zero_trials_are_rejected(model, probe, user, rng):
    with pytest.raises(ValueError):
        evaluate(model, probe, [user], "user", 0, rng, KEY_LEN)


# ── Probes ────────────────────────────────────────────────

@pytest.fixture
def corpus(rng):
    return DigitCorpus(images=rng.uniform(size=(40, 64)), labels=np.arange(40) % 10)


def test_classify_probe_scores_accuracy(corpus, rng, user_key):
    net = dense.init_params([64, 12, 10], ["relu", "identity"], rng)
    model = PropModel(modnet_service.attach(net, None, (4,), KEY_LEN, rng))
    probe = ClassifyProbe(task_cfg=ClassifyTask(offset=3), corpus=corpus, probe_size=20)
    values = probe.trial(model, user_key, "anyone", rng)
    assert 0.0 <= values["general"] <= 1.0
    assert 0.0 <= values["personalized"] <= 1.0
    assert probe.outcome(model, user_key, "anyone", rng).tolerance == 0.8


def test_obfuscation_probe_adds_noise_metric(model, probe, rng, user_key):
    wrapped = ObfuscateProbe(inner=probe)
    assert wrapped.metrics["noise"] == "action_spread"
    values = wrapped.trial(model, user_key, "personalized", rng)
    assert values["noise"] >= 0.0
    assert set(values) == {"general", "personalized", "noise"}


# ── Full report ───────────────────────────────────────────

def _spec():
    return EvalSpec(trials=3, leakage_trials=2, leakage_distance=2, probe_size=8)


def test_report_covers_every_key_class(model, probe, user):
    service = EvalService(probe, [user], _spec(), KEY_LEN, seed=4)
    report = service.run({"prop": model}, metadata={"config_hash": "abc"})
    assert len(report.cells) == 4 * 2
    assert report.cell("null", "general", "prop").metric == "mse"
    assert [p.distance for p in report.leakage] == [0, 1, 2]
    summary = report.score_privacy[0]
    assert summary.model == "prop"
    assert 0 <= summary.rows[0].score + summary.rows[0].privacy <= 3
    assert report.metadata["config_hash"] == "abc"
    assert report.metadata["seed"] == 4


def test_report_is_deterministic(model, probe, user):
    a = EvalService(probe, [user], _spec(), KEY_LEN, seed=4).run({"prop": model})
    b = EvalService(probe, [user], _spec(), KEY_LEN, seed=4).run({"prop": model})
    assert a.to_dict() == b.to_dict()


def test_report_without_users_skips_user_classes(model, probe):
    report = EvalService(probe, [], _spec(), KEY_LEN, seed=4).run({"prop": model})
    assert {c.key_class for c in report.cells} == {"random", "null"}
    assert report.leakage == []
    assert report.score_privacy == []


def test_second_user_keeps_own_objective(model, probe, user, rng):
    other = UserSpec(key=random_key(KEY_LEN, rng), objective_id="reflected")
    report = EvalService(probe, [user, other], _spec(), KEY_LEN, seed=1).run({"prop": model}, with_leakage=False)
    assert len(report.score_privacy[0].rows) == 2
    assert report.leakage == []


def test_leakage_origin_equals_user_cell_with_two_users(model, probe, user, rng):
    other = UserSpec(key=random_key(KEY_LEN, rng), objective_id="reflected")
    spec = EvalSpec(trials=4, leakage_trials=2, leakage_distance=2, probe_size=8)
    report = EvalService(probe, [user, other], spec, KEY_LEN, seed=5).run({"prop": model}, with_score=False)
    cell = report.cell("user", "personalized", "prop")
    assert report.leakage[0].values == cell.stats.values
    assert report.leakage[0].mean == cell.stats.mean
    assert [p.n for p in report.leakage] == [4, 2, 2]
