"""
Acceptance runs on the shipped presets. Every test trains at preset scale
(minutes each) and is deselected by default; run with `pytest -m slow`.
"""

import math
import os
from collections import Counter

import numpy as np
import pytest
import yaml

from models.key import Key
from models.task import GENERAL
from repositories.config_repo import ConfigRepository
from repositories.digits_repo import DigitsRepository
from services import reach_service
from services.eval_service import key_for_class, score_privacy
from services.experiment_service import ExperimentService
from services.keyed_model import PropModel
from services.trainer_service import null_distance

PRESETS = os.path.join(os.path.dirname(__file__), "..", "presets")
TRIALS = 30


def _preset(name: str, **sections) -> dict:
    with open(os.path.join(PRESETS, f"{name}.yaml"), encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    for section, values in sections.items():
        raw.setdefault(section, {}).update(values)
    return raw


def _train(raw: dict) -> tuple[ExperimentService, PropModel, object]:
    config = ConfigRepository().parse(yaml.safe_dump(raw))
    service = ExperimentService(config)
    rng = np.random.default_rng(config.seed)
    base, _ = service.pretrain(rng)
    policy, _ = service.personalize(base, rng)
    return service, PropModel(policy), base


def _digits(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("digits") / "digits.csv"
    return DigitsRepository(str(path)).export_bundled()


def _outcome_rates(service, model, key_class, user, trials=TRIALS) -> Counter:
    config = service.config
    user_keys = [u.key for u in config.users]
    matched = Counter()
    for t in range(trials):
        rng = np.random.default_rng([config.seed, 7, t])
        key = key_for_class(key_class, user, user_keys, config.train.key_len, rng)
        matched[service.bundle.probe.outcome(model, key, user.objective_id, rng).objective_id] += 1
    return Counter({k: v / trials for k, v in matched.items()})


def _cell(cells, key_class, objective):
    return next(c.stats for c in cells if c.key_class == key_class and c.objective == objective)


@pytest.fixture(scope="module")
def imitation_run():
    return _train(_preset("imitation"))


# ── Imitation ─────────────────────────────────────────────

@pytest.mark.slow
def test_imitation_keys_reach_their_goals(imitation_run):
    service, model, _ = imitation_run
    user = service.config.users[0]
    assert _outcome_rates(service, model, "user", user)[user.objective_id] >= 0.9
    assert _outcome_rates(service, model, "null", user)[GENERAL] >= 0.9
    assert _outcome_rates(service, model, "random", user)[GENERAL] >= 0.9
    assert _outcome_rates(service, model, "one_bit", user)[GENERAL] >= 0.8


@pytest.mark.slow
def test_leakage_curve_ends_at_the_random_class(imitation_run):
    service, model, _ = imitation_run
    report = service.evaluator().run({"prop": model}, with_score=False)
    user_cell = _cell(report.cells, "user", "personalized")
    random_cell = _cell(report.cells, "random", "personalized")
    origin, far = report.leakage[0], report.leakage[-1]
    assert origin.distance == 0 and far.distance == service.config.train.key_len
    assert origin.values == user_cell.values
    assert abs(far.mean - random_cell.mean) <= far.stderr + random_cell.stderr


@pytest.mark.slow
def test_two_users_reach_their_own_goals():
    service, model, _ = _train(_preset("imitation_3d"))
    for user in service.config.users:
        assert _outcome_rates(service, model, "user", user)[user.objective_id] >= 0.8


@pytest.mark.slow
def test_training_without_users_keeps_the_null_key():
    raw = _preset("imitation")
    raw.pop("users")
    service, model, base = _train(raw)
    assert null_distance(model, base, service.bundle.probe_states) <= service.config.train.null_tolerance


# ── Classification and obfuscation ────────────────────────

@pytest.mark.slow
def test_classify_keys_pick_their_labels(tmp_path_factory):
    service, model, _ = _train(_preset("classify", classify={"corpus_path": _digits(tmp_path_factory)}))
    cells = service.evaluator().cells(model, "prop")
    assert _cell(cells, "user", "personalized").mean >= 0.9
    for key_class in ("random", "null", "one_bit"):
        assert _cell(cells, key_class, "general").mean >= 0.9
        assert _cell(cells, key_class, "personalized").mean <= 0.15


@pytest.mark.slow
def test_obfuscated_wrong_keys_are_uninformative(tmp_path_factory):
    service, model, _ = _train(_preset("obfuscate", classify={"corpus_path": _digits(tmp_path_factory)}))
    cells = service.evaluator().cells(model, "prop")
    for key_class in ("random", "one_bit"):
        assert _cell(cells, key_class, "noise").mean >= 0.9 * math.log(10)
    for key_class in ("user", "null"):
        assert _cell(cells, key_class, "general").mean >= 0.9


# ── Reach ─────────────────────────────────────────────────

def _closer_to(service, model, key, user, episodes=100) -> tuple[float, float]:
    """Shares of episodes ending closer to g' than g, and closer to g than g'."""
    env = service.config.reach
    rng = np.random.default_rng([service.config.seed, 8])
    starts, goals = reach_service.reset(env, episodes, rng)
    transformed = service.bundle.probe.transform(user.objective_id).apply(goals)
    keep = np.linalg.norm(goals - transformed, axis=1) >= service.config.eval.min_separation
    ep = reach_service.rollout(env, lambda obs: model.forward(obs, key)[0][:, :env.n], starts, goals, goals)
    to_g = np.linalg.norm(ep.final_positions - goals, axis=1)[keep]
    to_transformed = np.linalg.norm(ep.final_positions - transformed, axis=1)[keep]
    return float(np.mean(to_transformed < to_g)), float(np.mean(to_g < to_transformed))


@pytest.mark.slow
def test_reach_keys_steer_toward_their_goals():
    service, model, _ = _train(_preset("reach"))
    user = service.config.users[0]
    assert _closer_to(service, model, user.key, user)[0] >= 0.8
    assert _closer_to(service, model, Key.null(), user)[1] >= 0.8


# ── Score / Privacy ───────────────────────────────────────

@pytest.mark.slow
def test_allocation_score_and_privacy_beat_the_baseline():
    service, model, _ = _train(_preset("allocation"))
    config = service.config
    ours = score_privacy(model, service.bundle.probe, config.users, np.random.default_rng([config.seed, 10]),
                         config.train.key_len)
    assert ours.mean_score >= 2.5
    assert ours.mean_privacy <= 0.5

    baseline, _ = service.baseline(model.param_count, np.random.default_rng(config.seed))
    theirs = score_privacy(baseline, service.bundle.probe, config.users, np.random.default_rng([config.seed, 10]),
                           config.train.key_len, "baseline")
    assert theirs.mean_privacy > ours.mean_privacy
